//! Standardisation and degree-4 monomial expansion of the five probe features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

pub const N_RAW: usize = 5;
pub const MAX_DEGREE: usize = 4;
pub const N_MONOMIALS: usize = 125;

pub const RAW_FEATURE_NAMES: [&str; N_RAW] = [
    "snr_current_db",
    "p_ch_dbm",
    "center_freq_thz",
    "n_spans",
    "fill_fraction",
];

pub type RawFeatures = [f64; N_RAW];

/// Per-feature population mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub mean: [f64; N_RAW],
    pub std: [f64; N_RAW],
}

impl ScalerStats {
    pub fn fit(rows: &[RawFeatures]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "scaler needs at least 2 rows, got {}",
                rows.len()
            )));
        }
        let mut mean = [0.0; N_RAW];
        let mut std = [0.0; N_RAW];
        let mut column = vec![0.0; rows.len()];
        for j in 0..N_RAW {
            for (c, r) in column.iter_mut().zip(rows) {
                *c = r[j];
            }
            let (lo, hi) = column
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
            if lo == hi {
                return Err(Error::DegenerateFeature(RAW_FEATURE_NAMES[j].to_string()));
            }
            mean[j] = stats::mean(&column);
            std[j] = stats::std_dev(&column);
            if !(std[j] > 0.0) {
                return Err(Error::DegenerateFeature(RAW_FEATURE_NAMES[j].to_string()));
            }
        }
        Ok(Self { mean, std })
    }

    pub fn transform(&self, x: &RawFeatures) -> RawFeatures {
        let mut z = [0.0; N_RAW];
        for j in 0..N_RAW {
            z[j] = (x[j] - self.mean[j]) / self.std[j];
        }
        z
    }
}

/// Exponent vectors of all monomials of total degree 1..=4, graded, and
/// within a degree in descending lexicographic order of the exponents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonomialTable {
    pub exponents: Vec<[u8; N_RAW]>,
}

impl Default for MonomialTable {
    fn default() -> Self {
        Self::new(MAX_DEGREE)
    }
}

impl MonomialTable {
    pub fn new(max_degree: usize) -> Self {
        fn combos(start: usize, left: usize, current: &mut [u8; N_RAW], out: &mut Vec<[u8; N_RAW]>) {
            if left == 0 {
                out.push(*current);
                return;
            }
            for i in start..N_RAW {
                current[i] += 1;
                combos(i, left - 1, current, out);
                current[i] -= 1;
            }
        }
        let mut exponents = Vec::new();
        for d in 1..=max_degree {
            combos(0, d, &mut [0; N_RAW], &mut exponents);
        }
        Self { exponents }
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if *self != Self::new(MAX_DEGREE) {
            return Err(Error::InvalidConfig("monomial table does not match the degree-4 layout".into()));
        }
        Ok(())
    }

    /// φ_j = Π_i x_i^e_ji, multiplied in a fixed order.
    pub fn expand(&self, x: &RawFeatures) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.exponents.len());
        self.expand_into(x, &mut out);
        out
    }

    pub fn expand_into(&self, x: &RawFeatures, out: &mut Vec<f64>) {
        out.clear();
        for e in &self.exponents {
            let mut v = 1.0;
            for i in 0..N_RAW {
                for _ in 0..e[i] {
                    v *= x[i];
                }
            }
            out.push(v);
        }
    }

    /// Human-readable names such as `snr_current_db^2 n_spans`.
    pub fn names(&self) -> Vec<String> {
        self.exponents
            .iter()
            .map(|e| {
                e.iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0)
                    .map(|(i, &p)| {
                        if p == 1 {
                            RAW_FEATURE_NAMES[i].to_string()
                        } else {
                            format!("{}^{p}", RAW_FEATURE_NAMES[i])
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_layout() {
        let t = MonomialTable::default();
        assert_eq!(t.len(), N_MONOMIALS);
        let mut sorted = t.exponents.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), N_MONOMIALS);
        assert_eq!(t.exponents[0], [1, 0, 0, 0, 0]);
        assert_eq!(t.exponents[4], [0, 0, 0, 0, 1]);
        assert_eq!(t.exponents[5], [2, 0, 0, 0, 0]);
        assert_eq!(t.exponents[6], [1, 1, 0, 0, 0]);
        assert_eq!(t.exponents[124], [0, 0, 0, 0, 4]);
        for w in t.exponents.windows(2) {
            let d0: u8 = w[0].iter().sum();
            let d1: u8 = w[1].iter().sum();
            assert!(d0 < d1 || (d0 == d1 && w[0] > w[1]));
        }
    }

    #[test]
    fn expand_special_points() {
        let t = MonomialTable::default();
        assert!(t.expand(&[0.0; 5]).iter().all(|&v| v == 0.0));
        assert!(t.expand(&[1.0; 5]).iter().all(|&v| v == 1.0));
        let phi = t.expand(&[2.0, 3.0, 1.0, 1.0, 1.0]);
        let idx = t.exponents.iter().position(|e| *e == [2, 1, 0, 0, 0]).unwrap();
        assert_eq!(phi[idx], 12.0);
    }

    #[test]
    fn scaler_standardises_columns() {
        let rows: Vec<RawFeatures> = (0..50)
            .map(|i| {
                let x = i as f64;
                [x, x * x, (x * 0.3).sin(), 2.0 + (i % 7) as f64, 1.0 / (1.0 + x)]
            })
            .collect();
        let s = ScalerStats::fit(&rows).unwrap();
        let z: Vec<RawFeatures> = rows.iter().map(|r| s.transform(r)).collect();
        for j in 0..N_RAW {
            let col: Vec<f64> = z.iter().map(|r| r[j]).collect();
            assert!(stats::mean(&col).abs() < 1e-9);
            assert!((stats::variance(&col) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_column_is_rejected() {
        let rows = vec![[1.0, 2.0, 3.0, 4.0, 0.5], [2.0, 2.0, 4.0, 5.0, 0.6]];
        assert!(matches!(ScalerStats::fit(&rows), Err(Error::DegenerateFeature(name)) if name == "p_ch_dbm"));
    }
}
