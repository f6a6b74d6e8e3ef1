//! Gaussian-noise link model: ASE, nonlinear interference, SNR and margin.
//!
//! Two NLI paths are provided. [`nli_psd_closed_form`] is the fast incoherent
//! asinh approximation used for dataset generation; [`nli_psd_integral`]
//! evaluates the single-span GN double integral numerically and serves as the
//! reference. Both scale the single-span result by the span count.

mod channel;
mod closed_form;
mod integral;

use serde::{Deserialize, Serialize};

pub use channel::{
    db_to_lin, dbm_to_w, lin_to_db, w_to_dbm, ChannelSpec, Modulation, SpectrumRealization,
    REFERENCE_SYMBOL_RATE_GBD,
};
pub use closed_form::{lorentzian_length, nli_psd_closed_form};
pub use integral::{nli_psd_integral, sine_integral, IntegralOptions};

use crate::error::{Error, Result};

pub const PLANCK: f64 = 6.626_070_15e-34;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiberParams {
    /// Power attenuation in dB/km.
    pub attenuation_db_per_km: f64,
    pub beta2_ps2_per_km: f64,
    pub gamma_per_w_km: f64,
    pub nf_db: f64,
}

impl Default for FiberParams {
    fn default() -> Self {
        Self {
            attenuation_db_per_km: 0.2,
            beta2_ps2_per_km: -21.3,
            gamma_per_w_km: 1.3,
            nf_db: 5.0,
        }
    }
}

impl FiberParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.attenuation_db_per_km > 0.0 && self.attenuation_db_per_km.is_finite()) {
            return Err(Error::InvalidConfig("attenuation_db_per_km must be positive".into()));
        }
        if !(self.gamma_per_w_km > 0.0 && self.gamma_per_w_km.is_finite()) {
            return Err(Error::InvalidConfig("gamma_per_w_km must be positive".into()));
        }
        if self.beta2_ps2_per_km == 0.0 || !self.beta2_ps2_per_km.is_finite() {
            return Err(Error::InvalidConfig("beta2_ps2_per_km must be nonzero".into()));
        }
        if !(self.nf_db >= 3.0) || !self.nf_db.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "nf_db = {} is below the 3 dB quantum limit",
                self.nf_db
            )));
        }
        Ok(())
    }

    /// Power attenuation coefficient 2α in 1/km.
    pub fn power_alpha_per_km(&self) -> f64 {
        self.attenuation_db_per_km / (10.0 * std::f64::consts::LOG10_E)
    }

    /// |β₂| in s²/km.
    pub fn beta2_abs_s2_per_km(&self) -> f64 {
        self.beta2_ps2_per_km.abs() * 1e-24
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkTopology {
    pub n_spans: u32,
    pub span_length_km: f64,
    pub fiber: FiberParams,
}

impl LinkTopology {
    pub fn new(n_spans: u32, span_length_km: f64, fiber: FiberParams) -> Result<Self> {
        let topo = Self {
            n_spans,
            span_length_km,
            fiber,
        };
        topo.validate()?;
        Ok(topo)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_spans < 1 {
            return Err(Error::InvalidConfig("n_spans must be at least 1".into()));
        }
        if !(self.span_length_km > 0.0 && self.span_length_km.is_finite()) {
            return Err(Error::InvalidConfig("span_length_km must be positive".into()));
        }
        self.fiber.validate()
    }

    pub fn span_loss_db(&self) -> f64 {
        self.fiber.attenuation_db_per_km * self.span_length_km
    }
}

/// L_eff = (1 − e^(−2αL)) / (2α) in km.
pub fn effective_length(fiber: &FiberParams, span_length_km: f64) -> f64 {
    let a = fiber.power_alpha_per_km();
    -(-a * span_length_km).exp_m1() / a
}

/// Infinite-span limit 1/(2α) in km.
pub fn asymptotic_effective_length(fiber: &FiberParams) -> f64 {
    1.0 / fiber.power_alpha_per_km()
}

/// Accumulated ASE power in `ref_bandwidth_ghz` at `f_thz`, amplifier gain equal to span loss.
pub fn ase_power(topology: &LinkTopology, ref_bandwidth_ghz: f64, f_thz: f64) -> f64 {
    ase_power_with(topology, ref_bandwidth_ghz, f_thz, topology.fiber.nf_db, 0.0)
}

/// ASE with an explicit noise figure and extra lumped loss per span that the
/// amplifier also compensates.
pub fn ase_power_with(
    topology: &LinkTopology,
    ref_bandwidth_ghz: f64,
    f_thz: f64,
    nf_db: f64,
    extra_loss_db: f64,
) -> f64 {
    let gain = db_to_lin(topology.span_loss_db() + extra_loss_db);
    let nf = db_to_lin(nf_db);
    topology.n_spans as f64 * PLANCK * f_thz * 1e12 * nf * (gain - 1.0) * ref_bandwidth_ghz * 1e9
}

#[derive(Debug, Clone, Copy, Default)]
pub enum NliPath {
    #[default]
    ClosedForm,
    Integral(IntegralOptions),
}

/// NLI PSD at the CUT center through the chosen path.
pub fn nli_psd(spectrum: &SpectrumRealization, topology: &LinkTopology, path: &NliPath) -> Result<f64> {
    match path {
        NliPath::ClosedForm => nli_psd_closed_form(spectrum, topology, spectrum.cut_index),
        NliPath::Integral(opts) => nli_psd_integral(spectrum, topology, spectrum.cut().center_freq_thz, opts),
    }
}

pub fn snr_from_powers(signal_w: f64, ase_w: f64, nli_w: f64) -> f64 {
    lin_to_db(signal_w / (ase_w + nli_w))
}

/// CUT SNR in dB with the closed-form NLI path.
pub fn snr(spectrum: &SpectrumRealization, topology: &LinkTopology) -> Result<f64> {
    snr_with(spectrum, topology, &NliPath::ClosedForm)
}

pub fn snr_with(spectrum: &SpectrumRealization, topology: &LinkTopology, path: &NliPath) -> Result<f64> {
    let cut = spectrum.cut();
    let nli = nli_psd(spectrum, topology, path)? * cut.bandwidth_hz();
    let ase = ase_power(topology, cut.symbol_rate_gbd, cut.center_freq_thz);
    Ok(snr_from_powers(cut.power_w(), ase, nli))
}

/// SNR of the partial spectrum minus SNR of the same plan fully loaded.
pub fn margin(partial: &SpectrumRealization, topology: &LinkTopology) -> Result<f64> {
    margin_with(partial, topology, &NliPath::ClosedForm)
}

pub fn margin_with(partial: &SpectrumRealization, topology: &LinkTopology, path: &NliPath) -> Result<f64> {
    let current = snr_with(partial, topology, path)?;
    let full = snr_with(&partial.with_all_active(), topology, path)?;
    Ok(current - full)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate, QuadOptions};

    #[test]
    fn lossless_limit_of_effective_length() {
        let fiber = FiberParams {
            attenuation_db_per_km: 1e-9,
            ..Default::default()
        };
        assert!((effective_length(&fiber, 100.0) - 100.0).abs() < 1e-3);
    }

    #[test]
    fn effective_length_asymptote() {
        let fiber = FiberParams::default();
        let la = asymptotic_effective_length(&fiber);
        assert!((la - 21.714_724_095_162_59).abs() < 1e-9, "{la}");
        assert!((effective_length(&fiber, 1e4) - la).abs() < 1e-9);
    }

    #[test]
    fn effective_length_matches_quadrature() {
        let fiber = FiberParams::default();
        let a = fiber.power_alpha_per_km();
        let numeric = integrate(
            |z| (-a * z).exp(),
            0.0,
            100.0,
            &[],
            &QuadOptions {
                rel_tol: 1e-12,
                ..Default::default()
            },
        )
        .unwrap()
        .value;
        let leff = effective_length(&fiber, 100.0);
        assert!((leff - numeric).abs() < 1e-10);
        assert!((leff - 21.5).abs() < 0.05, "{leff}");
    }

    #[test]
    fn rejects_sub_quantum_noise_figure() {
        let fiber = FiberParams {
            nf_db: 2.5,
            ..Default::default()
        };
        assert!(matches!(fiber.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn ase_reference_value() {
        // n·h·f·F·(G−1)·B with G = 10 dB, F = 5 dB.
        let topo = LinkTopology::new(2, 50.0, FiberParams::default()).unwrap();
        let p = ase_power(&topo, 34.4, 193.5);
        let hand = 2.0 * 6.626_070_15e-34 * 193.5e12 * 10f64.powf(0.5) * 9.0 * 34.4e9;
        assert!((p - hand).abs() / hand < 1e-14);
        assert!((p - 2.510_544_631_283_287e-7).abs() / p < 1e-12, "{p:e}");
    }

    #[test]
    fn ase_scales_with_spans_and_vanishes_without_loss() {
        let one = LinkTopology::new(3, 80.0, FiberParams::default()).unwrap();
        let two = LinkTopology { n_spans: 6, ..one };
        let r = ase_power(&two, 35.0, 193.0) / ase_power(&one, 35.0, 193.0);
        assert!((r - 2.0).abs() < 1e-14);
        assert_eq!(ase_power_with(&one, 35.0, 193.0, 5.0, -one.span_loss_db()), 0.0);
    }
}
