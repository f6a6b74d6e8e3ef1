use std::f64::consts::PI;

use super::{asymptotic_effective_length, effective_length, LinkTopology, SpectrumRealization};
use crate::error::Result;

/// Incoherent closed-form NLI PSD at the center of channel `cut_index`.
///
/// The span kernel is replaced by a Lorentzian L_eff²/(1 + (κ·L_w)²) whose
/// peak and area both match the exact one, which gives
/// L_w = L_eff·L_a / (2·L_a − L_eff). For long spans L_w → L_a.
///
/// SCI uses asinh(π²/2·|β₂|·L_w·B²); every active interferer adds an XCI
/// term asinh(π²|β₂|L_w·B_cut·(Δf + B/2)) − asinh(π²|β₂|L_w·B_cut·(Δf − B/2)).
pub fn nli_psd_closed_form(spectrum: &SpectrumRealization, topology: &LinkTopology, cut_index: usize) -> Result<f64> {
    spectrum.check_disjoint()?;
    let fiber = &topology.fiber;
    let beta2 = fiber.beta2_abs_s2_per_km();
    let leff = effective_length(fiber, topology.span_length_km);
    let lw = lorentzian_length(fiber, topology.span_length_km);
    let k = PI * PI * beta2 * lw;

    let cut = &spectrum.channels[cut_index];
    let b_cut = cut.bandwidth_hz();
    let f_cut = cut.center_hz();
    let g_cut = cut.psd_w_per_hz();

    // Summed in channel order so that a subset never exceeds the full sum.
    let mut acc = 0.0;
    for (i, ch) in spectrum.active_channels() {
        let g = ch.psd_w_per_hz();
        let psi = if i == cut_index {
            (0.5 * k * b_cut * b_cut).asinh()
        } else {
            let df = (ch.center_hz() - f_cut).abs();
            let half = 0.5 * ch.bandwidth_hz();
            (k * b_cut * (df + half)).asinh() - (k * b_cut * (df - half)).asinh()
        };
        acc += g * g * psi;
    }
    let eta = 16.0 / 27.0 * fiber.gamma_per_w_km.powi(2) * leff * leff / (2.0 * PI * beta2 * lw);
    Ok(eta * g_cut * acc * topology.n_spans as f64)
}

/// Width parameter L_w of the matched Lorentzian kernel in km.
pub fn lorentzian_length(fiber: &super::FiberParams, span_length_km: f64) -> f64 {
    let la = asymptotic_effective_length(fiber);
    let leff = effective_length(fiber, span_length_km);
    leff * la / (2.0 * la - leff)
}
