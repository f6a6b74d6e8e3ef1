//! Error histograms, margin-versus-feature sweeps and the granularity study.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptation::Recalibration;
use crate::bayes_ridge::{self, BayesRidgeModel, FitOptions};
use crate::dataset::{evaluate_scenario, DatasetConfig, ProbeRecord, Scenario, MAX_SPANS, MAX_SPAN_KM, MIN_SPANS, MIN_SPAN_KM};
use crate::error::{Error, Result};
use crate::features::RawFeatures;
use crate::gn::Modulation;
use crate::seed::{derive_seed, rng_from_seed};
use crate::spectrum::GridPolicy;
use crate::stats;

pub type Summary = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// Bins are [(first_bin + k)·w, (first_bin + k + 1)·w).
    pub first_bin: i64,
    pub counts: Vec<usize>,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub rmse: f64,
}

impl Histogram {
    pub fn edges(&self) -> Vec<f64> {
        (0..=self.counts.len())
            .map(|k| (self.first_bin + k as i64) as f64 * self.bin_width)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count\n");
        let edges = self.edges();
        for (k, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{:.6},{:.6},{}", edges[k], edges[k + 1], c);
        }
        s
    }

    pub fn summary(&self) -> Summary {
        Summary::from([
            ("n".to_string(), self.n as f64),
            ("mean_error_db".to_string(), self.mean),
            ("std_error_db".to_string(), self.std),
            ("rmse_db".to_string(), self.rmse),
        ])
    }
}

/// Histogram of errors (prediction − label) with half-open bins.
pub fn error_histogram(errors: &[f64], bin_width: f64) -> Result<Histogram> {
    if errors.is_empty() {
        return Err(Error::InsufficientData("histogram of an empty error set".into()));
    }
    if !(bin_width > 0.0) || errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidArgument("bin width must be positive and errors finite".into()));
    }
    let lo_val = errors.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_val = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let edge = |k: i64| k as f64 * bin_width;
    let index = |e: f64| {
        let mut k = (e / bin_width).floor() as i64;
        // Division can land one bin off the edge computed by multiplication.
        while edge(k) > e {
            k -= 1;
        }
        while edge(k + 1) <= e {
            k += 1;
        }
        k
    };
    let first_bin = index(lo_val);
    let mut counts = vec![0; (index(hi_val) - first_bin) as usize + 1];
    for &e in errors {
        counts[(index(e) - first_bin) as usize] += 1;
    }
    Ok(Histogram {
        bin_width,
        first_bin,
        counts,
        n: errors.len(),
        mean: stats::mean(errors),
        std: stats::std_dev(errors),
        rmse: stats::rmse(errors),
    })
}

pub fn prediction_errors(model: &BayesRidgeModel, recal: Option<&Recalibration>, rows: &[ProbeRecord]) -> Vec<f64> {
    rows.iter()
        .map(|r| {
            let p = model.predict_mean(&r.features());
            recal.map_or(p, |c| c.apply(p)) - r.margin_db
        })
        .collect()
}

/// Per-grid-point statistics of reference (GN or measured) and predicted margins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub variable: String,
    /// Source of the reference columns: `gn` or `measured`.
    pub reference: String,
    pub grid: Vec<f64>,
    pub gn_mean: Vec<f64>,
    pub gn_std: Vec<f64>,
    pub ml_mean: Vec<f64>,
    pub ml_std: Vec<f64>,
    pub counts: Vec<usize>,
}

impl SweepResult {
    fn from_samples(variable: &str, grid: Vec<f64>, gn: &[Vec<f64>], ml: &[Vec<f64>]) -> Self {
        Self {
            variable: variable.to_string(),
            reference: "gn".to_string(),
            gn_mean: gn.iter().map(|v| stats::mean(v)).collect(),
            gn_std: gn.iter().map(|v| stats::std_dev(v)).collect(),
            ml_mean: ml.iter().map(|v| stats::mean(v)).collect(),
            ml_std: ml.iter().map(|v| stats::std_dev(v)).collect(),
            counts: gn.iter().map(Vec::len).collect(),
            grid,
        }
    }

    pub fn to_csv(&self) -> String {
        let r = &self.reference;
        let mut s = format!("{},{r}_mean,{r}_std,ml_mean,ml_std,count\n", self.variable);
        for i in 0..self.grid.len() {
            let _ = writeln!(
                s,
                "{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                self.grid[i], self.gn_mean[i], self.gn_std[i], self.ml_mean[i], self.ml_std[i], self.counts[i]
            );
        }
        s
    }

    /// Largest |ML mean − GN mean| over the grid.
    pub fn max_mean_gap(&self) -> f64 {
        self.gn_mean
            .iter()
            .zip(&self.ml_mean)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn argmax_ml(&self) -> usize {
        (0..self.ml_mean.len())
            .max_by(|&a, &b| self.ml_mean[a].total_cmp(&self.ml_mean[b]))
            .unwrap_or(0)
    }

    /// Non-decreasing up to the maximum, non-increasing after it.
    pub fn ml_is_unimodal(&self) -> bool {
        let k = self.argmax_ml();
        self.ml_mean[..=k].windows(2).all(|w| w[1] >= w[0]) && self.ml_mean[k..].windows(2).all(|w| w[1] <= w[0])
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone, Copy)]
struct Topo {
    n_spans: u32,
    span_length_km: f64,
}

fn draw_topology(rng: &mut crate::seed::Rng) -> Topo {
    Topo {
        n_spans: rng.random_range(MIN_SPANS..=MAX_SPANS),
        span_length_km: rng.random_range(MIN_SPAN_KM..=MAX_SPAN_KM),
    }
}

/// GN margin and model input for one synthetic probe.
fn probe(
    config: &DatasetConfig,
    topo: Topo,
    anchor_dbm: f64,
    center_thz: f64,
    fill: f64,
    plan_seed: u64,
) -> Result<(f64, RawFeatures)> {
    let scenario = Scenario {
        seed: plan_seed,
        n_spans: topo.n_spans,
        span_length_km: topo.span_length_km,
        cut_gbd: 35.0,
        modulation: Modulation::Qpsk,
        psd_anchor_dbm: anchor_dbm,
        center_freq_thz: center_thz,
        fill_target: fill,
    };
    let r = evaluate_scenario(&scenario, config)?;
    Ok((r.margin_db, r.features()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencySweepConfig {
    pub n_realizations: usize,
    pub fill: f64,
    pub anchor_freq_thz: f64,
    pub psd_anchor_dbm: f64,
    pub f_min_thz: f64,
    pub f_max_thz: f64,
    pub n_points: usize,
    pub normalization: Normalization,
}

/// Reference used to normalise frequency-sweep margins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Each realization by its own GN margin at the anchor frequency.
    PerRealization,
    /// Every sample by the mean GN margin at the anchor frequency.
    AnchorMean,
}

impl Default for FrequencySweepConfig {
    fn default() -> Self {
        Self {
            n_realizations: 2000,
            fill: 0.30,
            anchor_freq_thz: 193.7,
            psd_anchor_dbm: 0.0,
            f_min_thz: 191.5,
            f_max_thz: 195.9,
            n_points: 9,
            normalization: Normalization::AnchorMean,
        }
    }
}

/// Margin against CUT frequency, normalised by GN margins at the anchor frequency.
pub fn frequency_sweep(
    model: &BayesRidgeModel,
    config: &DatasetConfig,
    sweep: &FrequencySweepConfig,
    seed: u64,
) -> Result<SweepResult> {
    let grid = linspace(sweep.f_min_thz, sweep.f_max_thz, sweep.n_points);
    let rows = (0..sweep.n_realizations as u64)
        .into_par_iter()
        .map(|s| {
            let realization = derive_seed(seed, s);
            let topo = draw_topology(&mut rng_from_seed(realization));
            let plan_seed = derive_seed(realization, 1);
            let (norm, _) = probe(config, topo, sweep.psd_anchor_dbm, sweep.anchor_freq_thz, sweep.fill, plan_seed)?;
            let mut gn_row = Vec::with_capacity(grid.len());
            let mut ml_row = Vec::with_capacity(grid.len());
            for &f in &grid {
                let (m, x) = probe(config, topo, sweep.psd_anchor_dbm, f, sweep.fill, plan_seed)?;
                gn_row.push(m);
                ml_row.push(model.predict_mean(&x));
            }
            Ok((norm, gn_row, ml_row))
        })
        .collect::<Vec<Result<(f64, Vec<f64>, Vec<f64>)>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let anchor_mean = stats::mean(&rows.iter().map(|r| r.0).collect::<Vec<f64>>());
    let mut gn_cols = vec![Vec::new(); grid.len()];
    let mut ml_cols = vec![Vec::new(); grid.len()];
    for (norm, g, m) in rows {
        let d = match sweep.normalization {
            Normalization::PerRealization => norm,
            Normalization::AnchorMean => anchor_mean,
        };
        for i in 0..grid.len() {
            gn_cols[i].push(g[i] / d);
            ml_cols[i].push(m[i] / d);
        }
    }
    Ok(SweepResult::from_samples("center_freq_thz", grid, &gn_cols, &ml_cols))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FillSweepConfig {
    pub n_realizations: usize,
    pub fill_min: f64,
    pub n_points: usize,
}

impl Default for FillSweepConfig {
    fn default() -> Self {
        Self {
            n_realizations: 2000,
            fill_min: 0.1,
            n_points: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillSweep {
    pub result: SweepResult,
    /// Correlation of the grid with the mean predicted margin.
    pub mean_curve_correlation: f64,
    /// Correlation over every (fill target, predicted margin) sample.
    pub pooled_correlation: f64,
}

/// Margin against fill target over random topologies, frequencies and powers.
pub fn fill_sweep(
    model: &BayesRidgeModel,
    config: &DatasetConfig,
    sweep: &FillSweepConfig,
    seed: u64,
) -> Result<FillSweep> {
    let grid = linspace(sweep.fill_min, 1.0, sweep.n_points);
    let rows: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..sweep.n_realizations as u64)
        .into_par_iter()
        .map(|s| {
            let realization = derive_seed(seed, s);
            let mut rng = rng_from_seed(realization);
            let topo = draw_topology(&mut rng);
            let anchor = rng.random_range(-3.0..=0.0);
            let f = rng.random_range(191.4..=196.0);
            let mut gn_row = Vec::new();
            let mut ml_row = Vec::new();
            for (i, &t) in grid.iter().enumerate() {
                let (m, x) = probe(config, topo, anchor, f, t, derive_seed(realization, 10 + i as u64))?;
                gn_row.push(m);
                ml_row.push(model.predict_mean(&x));
            }
            Ok((gn_row, ml_row))
        })
        .collect();
    let mut gn_cols = vec![Vec::new(); grid.len()];
    let mut ml_cols = vec![Vec::new(); grid.len()];
    for row in rows {
        let (g, m) = row?;
        for i in 0..grid.len() {
            gn_cols[i].push(g[i]);
            ml_cols[i].push(m[i]);
        }
    }
    let result = SweepResult::from_samples("fill_fraction", grid.clone(), &gn_cols, &ml_cols);
    let mean_curve_correlation = stats::pearson(&grid, &result.ml_mean);
    let pooled_x: Vec<f64> = grid
        .iter()
        .zip(&ml_cols)
        .flat_map(|(&t, col)| std::iter::repeat_n(t, col.len()))
        .collect();
    let pooled_y: Vec<f64> = ml_cols.concat();
    Ok(FillSweep {
        pooled_correlation: stats::pearson(&pooled_x, &pooled_y),
        mean_curve_correlation,
        result,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rounding {
    Nearest,
    Floor,
    Ceil,
}

impl FromStr for Rounding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Rounding::Nearest),
            "floor" => Ok(Rounding::Floor),
            "ceil" => Ok(Rounding::Ceil),
            other => Err(Error::InvalidArgument(format!("unknown rounding `{other}`"))),
        }
    }
}

/// Snaps a fill fraction to multiples of `granularity`; 0 leaves it unchanged.
pub fn quantize(fill: f64, granularity: f64, rounding: Rounding) -> f64 {
    if granularity <= 0.0 {
        return fill;
    }
    let q = fill / granularity;
    // Values a hair above a multiple from float noise snap down, not up.
    let q = if (q - q.round()).abs() < 1e-9 { q.round() } else { q };
    let k = match rounding {
        Rounding::Nearest => q.round(),
        Rounding::Floor => q.floor(),
        Rounding::Ceil => q.ceil(),
    };
    k * granularity
}

fn quantized_features(rows: &[ProbeRecord], granularity: f64, rounding: Rounding) -> Vec<RawFeatures> {
    rows.iter()
        .map(|r| {
            let mut x = r.features();
            x[4] = quantize(x[4], granularity, rounding);
            x
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GranularityRow {
    pub granularity: f64,
    pub rmse_original: f64,
    pub rmse_retrained: f64,
    pub rmse_retrained_validation: f64,
}

/// RMSE on the test rows with the fill feature quantized, for the base model
/// and for a model retrained on quantized training rows.
pub fn granularity_sweep(
    base: &BayesRidgeModel,
    train: &[ProbeRecord],
    validation: &[ProbeRecord],
    test: &[ProbeRecord],
    granularities: &[f64],
    rounding: Rounding,
    seed: u64,
) -> Result<Vec<GranularityRow>> {
    let labels = |rows: &[ProbeRecord]| rows.iter().map(|r| r.margin_db).collect::<Vec<f64>>();
    let (y_train, y_val, y_test) = (labels(train), labels(validation), labels(test));
    granularities
        .iter()
        .map(|&g| {
            let x_test = quantized_features(test, g, rounding);
            let rmse_original = bayes_ridge::rmse(base, &x_test, &y_test);
            let (retrained, _) =
                BayesRidgeModel::fit(&quantized_features(train, g, rounding), &y_train, seed, &FitOptions::default())?;
            Ok(GranularityRow {
                granularity: g,
                rmse_original,
                rmse_retrained: bayes_ridge::rmse(&retrained, &x_test, &y_test),
                rmse_retrained_validation: if validation.is_empty() {
                    f64::NAN
                } else {
                    bayes_ridge::rmse(&retrained, &quantized_features(validation, g, rounding), &y_val)
                },
            })
        })
        .collect()
}

pub fn granularity_csv(rows: &[GranularityRow]) -> String {
    let mut s = String::from("granularity,rmse_original,rmse_retrained,rmse_retrained_validation\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{:.6},{:.6},{:.6},{:.6}",
            r.granularity, r.rmse_original, r.rmse_retrained, r.rmse_retrained_validation
        );
    }
    s
}

/// Measured and adapted predicted margin against launch power for one
/// CUT frequency and fill level of a surrogate campaign.
pub fn power_sweep(
    model: &BayesRidgeModel,
    recal: &Recalibration,
    records: &[ProbeRecord],
    center_thz: f64,
    fill: f64,
) -> Result<SweepResult> {
    // Realized fills sit within half a 50 GHz slot of the target.
    let tol = 0.5 * 50.0 / (GridPolicy::default().band_width_ghz());
    let selected: Vec<&ProbeRecord> = records
        .iter()
        .filter(|r| (r.center_freq_thz - center_thz).abs() < 1e-6 && (r.fill_fraction - fill).abs() <= tol)
        .collect();
    let mut grid: Vec<f64> = selected.iter().map(|r| r.p_ch_dbm).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    if grid.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no records at {center_thz} THz and fill {fill}"
        )));
    }
    let mut gn_cols = vec![Vec::new(); grid.len()];
    let mut ml_cols = vec![Vec::new(); grid.len()];
    for r in selected {
        let i = grid.iter().position(|p| (p - r.p_ch_dbm).abs() < 1e-9).unwrap_or(0);
        gn_cols[i].push(r.margin_db);
        ml_cols[i].push(recal.apply(model.predict_mean(&r.features())));
    }
    let mut result = SweepResult::from_samples("p_ch_dbm", grid, &gn_cols, &ml_cols);
    result.reference = "measured".to_string();
    Ok(result)
}

pub fn summary_json(summary: &Summary) -> Result<String> {
    Ok(serde_json::to_string_pretty(summary)? + "\n")
}
