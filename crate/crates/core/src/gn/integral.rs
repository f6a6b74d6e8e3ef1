//! Reference NLI integral.
//!
//! With u = f₁ − f and v = f₂ − f the single-span kernel is
//! ρ = (1 − 2ε·cos(κL) + ε²) / (a² + κ²), a = 2α, ε = e^(−aL), κ = 4π²β₂uv.
//! The outer integral runs over u, the inner one over v. Inside the inner
//! integral the aggregate PSD product is piecewise constant, so every
//! constant piece is integrated separately. Where |κ| exceeds a fixed
//! multiple of a the cosine term oscillates far too fast for quadrature;
//! there the smooth part is integrated exactly (arctan) and the oscillating
//! part through the sine integral, using 1/(a² + κ²) ≈ 1/κ².

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;

use super::{LinkTopology, SpectrumRealization};
use crate::error::{Error, Result};
use crate::quadrature::{try_integrate_segments, QuadOptions};

#[derive(Debug, Clone, Copy)]
pub struct IntegralOptions {
    /// Relative tolerance of the outer integral.
    pub rel_tol: f64,
    pub inner_rel_tol: f64,
    pub max_subdivisions: usize,
    pub inner_max_subdivisions: usize,
    /// |κ|/a beyond which the oscillating term is handled analytically.
    pub oscillation_cutoff: f64,
}

impl Default for IntegralOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-4,
            inner_rel_tol: 1e-7,
            max_subdivisions: 20_000,
            inner_max_subdivisions: 4_000,
            oscillation_cutoff: 40.0,
        }
    }
}

/// Piecewise-constant PSD run, frequencies in Hz relative to the evaluation point.
#[derive(Debug, Clone, Copy)]
struct Run {
    lo: f64,
    hi: f64,
    psd: f64,
}

struct Kernel {
    a: f64,
    eps: f64,
    length: f64,
    /// 4π²β₂ in km⁻¹·Hz⁻².
    k0: f64,
}

impl Kernel {
    fn rho(&self, k: f64, v: f64) -> f64 {
        let kappa = k * v;
        (1.0 - 2.0 * self.eps * (kappa * self.length).cos() + self.eps * self.eps) / (self.a * self.a + kappa * kappa)
    }

    /// ∫ ρ dv over p ≤ v ≤ q where p > 0 and |k|·p ≥ cutoff·a.
    fn far_field(&self, k: f64, p: f64, q: f64) -> f64 {
        let kk = k.abs();
        let x1 = kk * p / self.a;
        let x2 = kk * q / self.a;
        let smooth = (1.0 + self.eps * self.eps) * ((x2 - x1) / (1.0 + x1 * x2)).atan() / (self.a * kk);
        let c = kk * self.length;
        // Antiderivative of cos(cv)/v² up to a constant: −cos(cv)/v + c·(π/2 − Si(cv)).
        let prim = |v: f64| -(c * v).cos() / v + c * sine_integral_tail(c * v);
        let osc = -2.0 * self.eps / (kk * kk) * (prim(q) - prim(p));
        smooth + osc
    }
}

/// Sine integral Si(x).
pub fn sine_integral(x: f64) -> f64 {
    if x < 0.0 {
        return -sine_integral(-x);
    }
    FRAC_PI_2 - sine_integral_tail(x)
}

/// π/2 − Si(x) for x ≥ 0, evaluated without cancellation for large x.
fn sine_integral_tail(x: f64) -> f64 {
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;
    if x <= 2.0 {
        // Power series.
        let x2 = x * x;
        let mut term = x;
        let mut sum = x;
        let mut k = 0.0;
        loop {
            k += 1.0;
            term *= -x2 / ((2.0 * k) * (2.0 * k + 1.0));
            let add = term / (2.0 * k + 1.0);
            sum += add;
            if add.abs() <= EPS * sum.abs() {
                break;
            }
        }
        return FRAC_PI_2 - sum;
    }
    // Continued fraction for E₁(ix) by modified Lentz.
    let mut b = Complex64::new(1.0, x);
    let mut c = Complex64::new(1.0 / TINY, 0.0);
    let mut d = Complex64::new(1.0, 0.0) / b;
    let mut h = d;
    for i in 2..100_000 {
        let a = -((i - 1) as f64).powi(2);
        b += 2.0;
        d = Complex64::new(1.0, 0.0) / (d * a + b);
        c = b + Complex64::new(a, 0.0) / c;
        let del = c * d;
        h *= del;
        if (del.re - 1.0).abs() + del.im.abs() < EPS {
            break;
        }
    }
    h *= Complex64::new(x.cos(), -x.sin());
    -h.im
}

fn active_runs(spectrum: &SpectrumRealization, f_hz: f64) -> Vec<Run> {
    let mut runs: Vec<Run> = Vec::new();
    for (_, ch) in spectrum.active_channels() {
        let half = 0.5 * ch.bandwidth_hz();
        let lo = ch.center_hz() - half - f_hz;
        let hi = ch.center_hz() + half - f_hz;
        let psd = ch.psd_w_per_hz();
        if let Some(last) = runs.last_mut() {
            // Adjacent channels at equal PSD form one run.
            if (lo - last.hi).abs() < 1.0 && (psd - last.psd).abs() <= 1e-9 * psd {
                let w_last = last.hi - last.lo;
                let w = hi - lo;
                last.psd = (last.psd * w_last + psd * w) / (w_last + w);
                last.hi = hi;
                continue;
            }
        }
        runs.push(Run { lo, hi, psd });
    }
    runs
}

/// GN reference integral for the NLI PSD at `f_thz`, multiplied by the span count.
pub fn nli_psd_integral(
    spectrum: &SpectrumRealization,
    topology: &LinkTopology,
    f_thz: f64,
    opts: &IntegralOptions,
) -> Result<f64> {
    spectrum.check_disjoint()?;
    if f_thz < spectrum.band_start_thz || f_thz > spectrum.band_end_thz {
        return Err(Error::InvalidArgument(format!("evaluation frequency {f_thz} THz outside the band")));
    }
    let fiber = &topology.fiber;
    let a = fiber.power_alpha_per_km();
    let length = topology.span_length_km;
    let kernel = Kernel {
        a,
        eps: (-a * length).exp(),
        length,
        k0: 4.0 * PI * PI * fiber.beta2_ps2_per_km * 1e-24,
    };
    let runs = active_runs(spectrum, f_thz * 1e12);

    let mut outer_segments = Vec::new();
    let mut outer_psd = Vec::new();
    for run in &runs {
        if run.lo < 0.0 && run.hi > 0.0 {
            outer_segments.extend([(run.lo, 0.0), (0.0, run.hi)]);
            outer_psd.extend([run.psd, run.psd]);
        } else {
            outer_segments.push((run.lo, run.hi));
            outer_psd.push(run.psd);
        }
    }

    let inner_opts = QuadOptions {
        rel_tol: opts.inner_rel_tol,
        abs_tol: 0.0,
        max_subdivisions: opts.inner_max_subdivisions,
    };
    let mut pieces: Vec<(f64, f64, f64)> = Vec::new();
    let mut numeric: Vec<(f64, f64)> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let inner = |u: f64,
                 pieces: &mut Vec<(f64, f64, f64)>,
                 numeric: &mut Vec<(f64, f64)>,
                 weights: &mut Vec<f64>|
     -> Result<f64> {
        // Intersect {v : f + v active} with {v : f + u + v active}.
        pieces.clear();
        let (mut i, mut j) = (0, 0);
        while i < runs.len() && j < runs.len() {
            let lo = runs[i].lo.max(runs[j].lo - u);
            let hi = runs[i].hi.min(runs[j].hi - u);
            if hi > lo {
                pieces.push((lo, hi, runs[i].psd * runs[j].psd));
            }
            if runs[i].hi < runs[j].hi - u {
                i += 1;
            } else {
                j += 1;
            }
        }

        let k = kernel.k0 * u;
        let vc = if k == 0.0 {
            f64::INFINITY
        } else {
            opts.oscillation_cutoff * a / k.abs()
        };
        numeric.clear();
        weights.clear();
        let mut analytic = 0.0;
        for &(lo, hi, w) in pieces.iter() {
            let mut cuts = [lo, -vc, 0.0, vc, hi];
            cuts[1..4].iter_mut().for_each(|x| *x = x.clamp(lo, hi));
            for pair in cuts.windows(2) {
                let (p, q) = (pair[0], pair[1]);
                if !(q > p) {
                    continue;
                }
                if p >= vc {
                    analytic += w * kernel.far_field(k, p, q);
                } else if q <= -vc {
                    analytic += w * kernel.far_field(k, -q, -p);
                } else {
                    numeric.push((p, q));
                    weights.push(w);
                }
            }
        }
        let near = if numeric.is_empty() {
            0.0
        } else {
            try_integrate_segments(numeric, |s, v| Ok(weights[s] * kernel.rho(k, v)), &inner_opts)?.value
        };
        Ok(near + analytic)
    };

    let outer_opts = QuadOptions {
        rel_tol: opts.rel_tol,
        abs_tol: 0.0,
        max_subdivisions: opts.max_subdivisions,
    };
    let est = try_integrate_segments(
        &outer_segments,
        |s, u| Ok(outer_psd[s] * inner(u, &mut pieces, &mut numeric, &mut weights)?),
        &outer_opts,
    )?;
    let gamma = fiber.gamma_per_w_km;
    Ok(16.0 / 27.0 * gamma * gamma * est.value * topology.n_spans as f64)
}
