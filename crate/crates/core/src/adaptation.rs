//! Surrogate measurement link and few-shot affine recalibration.
//!
//! The surrogate stands in for a short lab link. It runs the closed-form
//! engine on the 50 GHz experimental grid with effects the training data
//! never saw: lumped node loss per span, a noise-figure tilt across the
//! band, a fixed transceiver penalty on reported SNRs and measurement jitter
//! on the probed SNR.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bayes_ridge::BayesRidgeModel;
use crate::dataset::ProbeRecord;
use crate::error::{Error, Result};
use crate::features::RawFeatures;
use crate::gn::{self, ChannelSpec, FiberParams, LinkTopology, Modulation, SpectrumRealization};
use crate::seed::{derive_seed, rng_from_seed};
use crate::spectrum::{self, GridPolicy};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateLinkProfile {
    pub n_spans: u32,
    pub span_length_km: f64,
    pub fiber: FiberParams,
    /// Extra loss per span, compensated by the amplifier gain.
    pub node_loss_db: f64,
    /// NF excess at the low band edge, falling linearly to 0 at the high edge.
    pub nf_tilt_db: f64,
    /// Subtracted from every reported SNR.
    pub penalty_db: f64,
    /// Standard deviation of the jitter on the probed SNR.
    pub jitter_std_db: f64,
    pub seed: u64,
}

impl Default for SurrogateLinkProfile {
    fn default() -> Self {
        Self {
            n_spans: 2,
            span_length_km: 50.0,
            fiber: FiberParams::default(),
            node_loss_db: 1.5,
            nf_tilt_db: 1.0,
            penalty_db: 2.0,
            jitter_std_db: 0.05,
            seed: 1,
        }
    }
}

impl SurrogateLinkProfile {
    pub fn four_span() -> Self {
        Self {
            n_spans: 4,
            ..Self::default()
        }
    }

    /// No perturbation at all: reproduces the base engine.
    pub fn identity(n_spans: u32, span_length_km: f64) -> Self {
        Self {
            n_spans,
            span_length_km,
            node_loss_db: 0.0,
            nf_tilt_db: 0.0,
            penalty_db: 0.0,
            jitter_std_db: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.topology()?;
        if !(self.jitter_std_db >= 0.0) || !self.penalty_db.is_finite() || !self.nf_tilt_db.is_finite() {
            return Err(Error::InvalidConfig("surrogate perturbations must be finite, jitter ≥ 0".into()));
        }
        if !(self.node_loss_db >= 0.0) {
            return Err(Error::InvalidConfig("node_loss_db must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn topology(&self) -> Result<LinkTopology> {
        LinkTopology::new(self.n_spans, self.span_length_km, self.fiber)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let profile: Self = toml::from_str(text)?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&crate::error::read_to_string(path)?)
    }

    fn nf_at(&self, policy: &GridPolicy, f_thz: f64) -> f64 {
        let x = (policy.band_end_thz - f_thz) / (policy.band_end_thz - policy.band_start_thz);
        self.fiber.nf_db + self.nf_tilt_db * x
    }

    fn snr(&self, policy: &GridPolicy, spectrum: &SpectrumRealization, topology: &LinkTopology) -> Result<f64> {
        let cut = spectrum.cut();
        let nli = gn::nli_psd_closed_form(spectrum, topology, spectrum.cut_index)? * cut.bandwidth_hz();
        let nf = self.nf_at(policy, cut.center_freq_thz);
        let ase = gn::ase_power_with(topology, cut.symbol_rate_gbd, cut.center_freq_thz, nf, self.node_loss_db);
        Ok(gn::snr_from_powers(cut.power_w(), ase, nli) - self.penalty_db)
    }
}

/// One cell of the measurement campaign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateScenario {
    pub seed: u64,
    pub center_freq_thz: f64,
    pub fill_target: f64,
    pub p_ch_dbm: f64,
}

pub const CAMPAIGN_FILLS: [f64; 8] = [0.01, 0.15, 0.30, 0.45, 0.60, 0.75, 0.90, 1.00];
pub const CAMPAIGN_REPETITIONS: usize = 10;
pub const CUT_SYMBOL_RATE_GBD: f64 = 35.0;

/// Eight slot centers spread over the 96-slot grid (slots 10, 22, ..., 94).
pub fn campaign_frequencies() -> Vec<f64> {
    let slots = GridPolicy::experimental(0.0).slot_centers_thz().unwrap_or_default();
    (0..8).map(|j| slots[10 + 12 * j]).collect()
}

/// Six launch powers from 0 to −3 dBm.
pub fn campaign_powers() -> Vec<f64> {
    (0..6).map(|i| -0.6 * i as f64).collect()
}

/// 8 frequencies × 8 fills × 6 powers × 10 repetitions.
pub fn campaign(profile: &SurrogateLinkProfile) -> Vec<SurrogateScenario> {
    let mut out = Vec::new();
    for f in campaign_frequencies() {
        for &fill in &CAMPAIGN_FILLS {
            for p in campaign_powers() {
                for _ in 0..CAMPAIGN_REPETITIONS {
                    out.push(SurrogateScenario {
                        seed: derive_seed(profile.seed, out.len() as u64),
                        center_freq_thz: f,
                        fill_target: fill,
                        p_ch_dbm: p,
                    });
                }
            }
        }
    }
    out
}

/// Full experimental-grid plan and partial load of a scenario.
pub fn surrogate_spectra(scenario: &SurrogateScenario) -> Result<(SpectrumRealization, SpectrumRealization)> {
    let policy = GridPolicy::experimental(scenario.p_ch_dbm);
    let cut = ChannelSpec {
        center_freq_thz: scenario.center_freq_thz,
        symbol_rate_gbd: CUT_SYMBOL_RATE_GBD,
        launch_power_dbm: scenario.p_ch_dbm,
        is_cut: true,
        modulation: Modulation::Qam16,
    };
    let full = spectrum::build_full_plan(&policy, &cut, derive_seed(scenario.seed, 1))?;
    let partial = spectrum::sample_partial(&full, scenario.fill_target, derive_seed(scenario.seed, 2))?;
    Ok((full, partial))
}

/// Measures one scenario on the surrogate link.
///
/// Jitter perturbs only the probed SNR; the full-load SNR and the margin
/// label are the noise-free surrogate values.
pub fn surrogate_measure(profile: &SurrogateLinkProfile, scenario: &SurrogateScenario) -> Result<ProbeRecord> {
    let policy = GridPolicy::experimental(scenario.p_ch_dbm);
    let topology = profile.topology()?;
    let (full, partial) = surrogate_spectra(scenario)?;
    let snr_current = profile.snr(&policy, &partial, &topology)?;
    let snr_full = profile.snr(&policy, &full, &topology)?;
    let jitter = if profile.jitter_std_db > 0.0 {
        let normal = Normal::new(0.0, profile.jitter_std_db)
            .map_err(|e| Error::InvalidConfig(format!("jitter distribution: {e}")))?;
        normal.sample(&mut rng_from_seed(derive_seed(scenario.seed, 3)))
    } else {
        0.0
    };
    let cut = partial.cut();
    Ok(ProbeRecord {
        seed: scenario.seed,
        n_spans: profile.n_spans,
        span_length_km: profile.span_length_km,
        cut_gbd: cut.symbol_rate_gbd,
        modulation: cut.modulation,
        center_freq_thz: cut.center_freq_thz,
        p_ch_dbm: cut.reference_power_dbm(),
        fill_fraction: partial.fill_fraction(),
        snr_current_db: snr_current + jitter,
        snr_full_db: snr_full,
        margin_db: snr_current - snr_full,
    })
}

pub fn measure_campaign(profile: &SurrogateLinkProfile) -> Result<Vec<ProbeRecord>> {
    campaign(profile).iter().map(|s| surrogate_measure(profile, s)).collect()
}

/// Affine map from raw model output to the adapted link: a·pred + b.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recalibration {
    pub slope: f64,
    pub intercept: f64,
    pub n_calibration_points: usize,
    /// RMS residual of the fit over the calibration points.
    pub fit_residual: f64,
}

impl Recalibration {
    pub fn identity() -> Self {
        Self {
            slope: 1.0,
            intercept: 0.0,
            n_calibration_points: 0,
            fit_residual: 0.0,
        }
    }

    pub fn apply(&self, prediction: f64) -> f64 {
        self.slope * prediction + self.intercept
    }

    /// Affine maps with a positive slope keep the ranking of predictions.
    pub fn is_order_preserving(&self) -> bool {
        self.slope > 0.0
    }
}

/// Least-squares line through (prediction, measured margin) of the calibration records.
pub fn fit_recalibration(model: &BayesRidgeModel, calibration: &[ProbeRecord]) -> Result<Recalibration> {
    if calibration.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "recalibration needs at least 2 points, got {}",
            calibration.len()
        )));
    }
    let x: Vec<f64> = calibration.iter().map(|r| model.predict_mean(&r.features())).collect();
    let y: Vec<f64> = calibration.iter().map(|r| r.margin_db).collect();
    let mx = stats::mean(&x);
    let my = stats::mean(&y);
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegeneratePoints);
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    if !slope.is_finite() {
        return Err(Error::DegeneratePoints);
    }
    let residuals: Vec<f64> = x.iter().zip(&y).map(|(a, b)| slope * a + intercept - b).collect();
    Ok(Recalibration {
        slope,
        intercept,
        n_calibration_points: calibration.len(),
        fit_residual: stats::rmse(&residuals),
    })
}

pub fn predict_adapted(model: &BayesRidgeModel, recal: &Recalibration, raw: &RawFeatures) -> f64 {
    recal.apply(model.predict_mean(raw))
}

/// Picks `k` calibration records spread over the fill range.
///
/// For the i-th of `k` evenly spaced fill quantiles, the candidates are the
/// records sharing that realized fill; among them the frequency/power cell
/// closest to the candidates' median frequency and power is taken, and
/// within it the realization with the median probed SNR. The seed orders
/// exact ties. No labels are used.
pub fn select_calibration_points(records: &[ProbeRecord], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || records.len() < k {
        return Err(Error::InsufficientData(format!(
            "cannot pick {k} calibration points from {} records",
            records.len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut tiebreak: Vec<u64> = (0..records.len()).map(|_| rng.random()).collect();
    tiebreak.shuffle(&mut rng);

    let mut by_fill: Vec<usize> = (0..records.len()).collect();
    by_fill.sort_by(|&a, &b| {
        records[a]
            .fill_fraction
            .total_cmp(&records[b].fill_fraction)
            .then(tiebreak[a].cmp(&tiebreak[b]))
    });
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    for i in 0..k {
        let pos = ((i as f64 / (k - 1) as f64) * (records.len() - 1) as f64).round() as usize;
        let target = records[by_fill[pos]].fill_fraction;
        let candidates: Vec<usize> = by_fill
            .iter()
            .copied()
            .filter(|&j| (records[j].fill_fraction - target).abs() < 1e-9 && !chosen.contains(&j))
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let fm = median(candidates.iter().map(|&j| records[j].center_freq_thz).collect());
        let pm = median(candidates.iter().map(|&j| records[j].p_ch_dbm).collect());
        let dist = |j: usize| (records[j].center_freq_thz - fm).abs() + (records[j].p_ch_dbm - pm).abs() / 10.0;
        let best = candidates.iter().map(|&j| dist(j)).fold(f64::INFINITY, f64::min);
        let mut cell: Vec<usize> = candidates.into_iter().filter(|&j| dist(j) <= best + 1e-12).collect();
        cell.sort_by(|&a, &b| {
            records[a]
                .snr_current_db
                .total_cmp(&records[b].snr_current_db)
                .then(tiebreak[a].cmp(&tiebreak[b]))
        });
        chosen.push(cell[cell.len() / 2]);
    }
    if chosen.len() < k {
        // Fewer distinct fill levels than points: top up in seeded order.
        for &j in &by_fill {
            if chosen.len() == k {
                break;
            }
            if !chosen.contains(&j) {
                chosen.push(j);
            }
        }
    }
    Ok(chosen)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationReport {
    pub recalibration: Recalibration,
    pub calibration_indices: Vec<usize>,
    pub n_holdout: usize,
    pub unadapted_rmse_db: f64,
    pub adapted_rmse_db: f64,
    pub unadapted_mean_error_db: f64,
    pub adapted_mean_error_db: f64,
}

/// Fits a recalibration on `k` selected records and scores both models on the rest.
pub fn adapt_and_evaluate(
    model: &BayesRidgeModel,
    records: &[ProbeRecord],
    k: usize,
    seed: u64,
) -> Result<AdaptationReport> {
    let idx = select_calibration_points(records, k, seed)?;
    let calibration: Vec<ProbeRecord> = idx.iter().map(|&i| records[i]).collect();
    let recal = fit_recalibration(model, &calibration)?;
    let mut raw_err = Vec::new();
    let mut adapted_err = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if idx.contains(&i) {
            continue;
        }
        let pred = model.predict_mean(&r.features());
        raw_err.push(pred - r.margin_db);
        adapted_err.push(recal.apply(pred) - r.margin_db);
    }
    if raw_err.is_empty() {
        return Err(Error::InsufficientData("no records left after calibration".into()));
    }
    Ok(AdaptationReport {
        recalibration: recal,
        calibration_indices: idx,
        n_holdout: raw_err.len(),
        unadapted_rmse_db: stats::rmse(&raw_err),
        adapted_rmse_db: stats::rmse(&adapted_err),
        unadapted_mean_error_db: stats::mean(&raw_err),
        adapted_mean_error_db: stats::mean(&adapted_err),
    })
}
