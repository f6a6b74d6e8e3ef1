//! Bayesian ridge regression with evidence maximisation.
//!
//! Prior w ~ N(0, λ⁻¹I), noise precision β, Gamma(a, b) hyperpriors on both.
//! The eigendecomposition of ΦᵀΦ is computed once; every iteration then
//! costs one pass over the data for the residual sum of squares.
//! Targets and design columns are centred, so the intercept is neither
//! penalised nor part of the weight vector.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{MonomialTable, RawFeatures, ScalerStats};
use crate::stats;

pub const SCHEMA: &str = "margin-probe/bayes-ridge";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Convergence threshold on max |Δm| in target units.
    pub tol: f64,
    pub hyper_a: f64,
    pub hyper_b: f64,
    pub beta_cap: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-4,
            hyper_a: 1e-6,
            hyper_b: 1e-6,
            beta_cap: 1e12,
        }
    }
}

/// Per-iteration record of the evidence optimisation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub log_evidence: Vec<f64>,
    pub lambda_w: Vec<f64>,
    pub beta_n: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Posterior over weights for a centred design.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub lambda_w: f64,
    pub beta_n: f64,
    pub column_mean: DVector<f64>,
    pub target_mean: f64,
    pub trace: FitTrace,
}

struct Centered {
    phi: DMatrix<f64>,
    y: DVector<f64>,
    column_mean: DVector<f64>,
    target_mean: f64,
    eigvals: DVector<f64>,
    eigvecs: DMatrix<f64>,
    /// Vᵀ Φᵀ y
    z: DVector<f64>,
}

fn center(phi: &DMatrix<f64>, y: &[f64]) -> Result<Centered> {
    let (n, p) = phi.shape();
    if n < 2 || y.len() != n {
        return Err(Error::InsufficientData(format!(
            "design has {n} rows and {} targets; need matching counts of at least 2",
            y.len()
        )));
    }
    if phi.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::SingularDesign("design or targets contain non-finite values".into()));
    }
    let column_mean = DVector::from_iterator(p, (0..p).map(|j| stats::mean(phi.column(j).as_slice())));
    let mut phi_c = phi.clone();
    for j in 0..p {
        let m = column_mean[j];
        phi_c.column_mut(j).iter_mut().for_each(|v| *v -= m);
    }
    let target_mean = stats::mean(y);
    let y_c = DVector::from_iterator(n, y.iter().map(|v| v - target_mean));

    let gram = phi_c.tr_mul(&phi_c);
    let eig = SymmetricEigen::new(gram);
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularDesign("eigendecomposition of the Gram matrix failed".into()));
    }
    let eigvals = eig.eigenvalues.map(|s| s.max(0.0));
    let z = eig.eigenvectors.tr_mul(&phi_c.tr_mul(&y_c));
    Ok(Centered {
        phi: phi_c,
        y: y_c,
        column_mean,
        target_mean,
        eigvals,
        eigvecs: eig.eigenvectors,
        z,
    })
}

impl Centered {
    fn coef(&self, lambda: f64, beta: f64) -> DVector<f64> {
        let scaled = DVector::from_iterator(
            self.z.len(),
            self.z
                .iter()
                .zip(self.eigvals.iter())
                .map(|(z, s)| beta * z / (lambda + beta * s)),
        );
        &self.eigvecs * scaled
    }

    fn rss(&self, m: &DVector<f64>) -> f64 {
        let r = &self.y - &self.phi * m;
        r.norm_squared()
    }

    fn covariance(&self, lambda: f64, beta: f64) -> DMatrix<f64> {
        let inv = self.eigvals.map(|s| 1.0 / (lambda + beta * s));
        let scaled = DMatrix::from_fn(self.eigvecs.nrows(), self.eigvecs.ncols(), |i, j| self.eigvecs[(i, j)] * inv[j]);
        let s = &scaled * self.eigvecs.transpose();
        (&s + s.transpose()) * 0.5
    }

    fn log_evidence(&self, m: &DVector<f64>, rss: f64, lambda: f64, beta: f64, opts: &FitOptions) -> f64 {
        let n = self.y.len() as f64;
        let p = m.len() as f64;
        let logdet_sigma: f64 = -self.eigvals.iter().map(|s| (lambda + beta * s).ln()).sum::<f64>();
        let mut score = opts.hyper_a * lambda.ln() - opts.hyper_b * lambda;
        score += opts.hyper_a * beta.ln() - opts.hyper_b * beta;
        score += 0.5
            * (p * lambda.ln() + n * beta.ln() - beta * rss - lambda * m.norm_squared() + logdet_sigma
                - n * (2.0 * PI).ln());
        score
    }

    fn check_precision(&self, lambda: f64, beta: f64) -> Result<()> {
        let min = self.eigvals.iter().fold(f64::INFINITY, |acc, s| acc.min(lambda + beta * s));
        if !(min > 0.0 && min.is_finite()) {
            return Err(Error::SingularDesign(format!(
                "posterior precision is singular (smallest eigenvalue {min:e})"
            )));
        }
        Ok(())
    }
}

/// Evidence-maximising fit on a raw (uncentred) design matrix.
pub fn fit_design(phi: &DMatrix<f64>, y: &[f64], opts: &FitOptions) -> Result<Posterior> {
    let c = center(phi, y)?;
    let n = y.len() as f64;
    let var_y = c.y.norm_squared() / n;
    let mut lambda = 1.0;
    let mut beta = (1.0 / (var_y + f64::EPSILON)).min(opts.beta_cap);
    c.check_precision(lambda, beta)?;

    let mut trace = FitTrace::default();
    let mut previous: Option<DVector<f64>> = None;
    for iter in 0..opts.max_iter {
        let m = c.coef(lambda, beta);
        let rss = c.rss(&m);
        trace.log_evidence.push(c.log_evidence(&m, rss, lambda, beta, opts));
        trace.lambda_w.push(lambda);
        trace.beta_n.push(beta);
        trace.iterations = iter + 1;

        let gamma: f64 = c.eigvals.iter().map(|s| beta * s / (lambda + beta * s)).sum();
        lambda = (gamma + 2.0 * opts.hyper_a) / (m.norm_squared() + 2.0 * opts.hyper_b);
        beta = ((n - gamma + 2.0 * opts.hyper_a) / (rss + 2.0 * opts.hyper_b)).min(opts.beta_cap);

        if let Some(prev) = &previous {
            let delta = (&m - prev).amax();
            if delta < opts.tol {
                trace.converged = true;
                break;
            }
        }
        previous = Some(m);
    }
    c.check_precision(lambda, beta)?;
    let mean = c.coef(lambda, beta);
    let rss = c.rss(&mean);
    trace.log_evidence.push(c.log_evidence(&mean, rss, lambda, beta, opts));
    trace.lambda_w.push(lambda);
    trace.beta_n.push(beta);
    Ok(Posterior {
        covariance: c.covariance(lambda, beta),
        mean,
        lambda_w: lambda,
        beta_n: beta,
        column_mean: c.column_mean,
        target_mean: c.target_mean,
        trace,
    })
}

/// Posterior at fixed hyperparameters (no evidence updates).
pub fn solve_fixed(phi: &DMatrix<f64>, y: &[f64], lambda_w: f64, beta_n: f64) -> Result<Posterior> {
    let c = center(phi, y)?;
    c.check_precision(lambda_w, beta_n)?;
    Ok(Posterior {
        mean: c.coef(lambda_w, beta_n),
        covariance: c.covariance(lambda_w, beta_n),
        lambda_w,
        beta_n,
        column_mean: c.column_mean,
        target_mean: c.target_mean,
        trace: FitTrace::default(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub n_rows: usize,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub log_evidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesRidgeModel {
    pub schema: String,
    pub version: u32,
    pub scaler: ScalerStats,
    pub monomials: MonomialTable,
    /// Mean of every expanded feature over the training rows.
    pub feature_mean: Vec<f64>,
    pub weights: Vec<f64>,
    /// Row-major posterior covariance.
    pub covariance: Vec<f64>,
    pub lambda_w: f64,
    pub beta_n: f64,
    pub target_offset: f64,
    pub meta: TrainingMeta,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub std: f64,
}

/// Expanded design matrix of standardised rows.
pub fn design_matrix(scaler: &ScalerStats, table: &MonomialTable, rows: &[RawFeatures]) -> DMatrix<f64> {
    let p = table.len();
    let mut phi = DMatrix::zeros(rows.len(), p);
    let mut buf = Vec::with_capacity(p);
    for (i, r) in rows.iter().enumerate() {
        table.expand_into(&scaler.transform(r), &mut buf);
        for (j, v) in buf.iter().enumerate() {
            phi[(i, j)] = *v;
        }
    }
    phi
}

impl BayesRidgeModel {
    pub fn fit(rows: &[RawFeatures], targets: &[f64], seed: u64, opts: &FitOptions) -> Result<(Self, FitTrace)> {
        let scaler = ScalerStats::fit(rows)?;
        let monomials = MonomialTable::default();
        let phi = design_matrix(&scaler, &monomials, rows);
        let post = fit_design(&phi, targets, opts)?;
        let weights: Vec<f64> = post.mean.iter().copied().collect();
        let feature_mean: Vec<f64> = post.column_mean.iter().copied().collect();
        let target_offset = post.target_mean - dot(&weights, &feature_mean);
        let p = weights.len();
        let covariance = (0..p * p).map(|k| post.covariance[(k / p, k % p)]).collect();
        let model = Self {
            schema: SCHEMA.to_string(),
            version: SCHEMA_VERSION,
            scaler,
            monomials,
            feature_mean,
            weights,
            covariance,
            lambda_w: post.lambda_w,
            beta_n: post.beta_n,
            target_offset,
            meta: TrainingMeta {
                n_rows: rows.len(),
                seed,
                iterations: post.trace.iterations,
                converged: post.trace.converged,
                log_evidence: *post.trace.log_evidence.last().unwrap_or(&f64::NAN),
            },
        };
        Ok((model, post.trace))
    }

    fn expand(&self, x: &RawFeatures) -> Vec<f64> {
        self.monomials.expand(&self.scaler.transform(x))
    }

    pub fn predict_mean(&self, x: &RawFeatures) -> f64 {
        dot(&self.weights, &self.expand(x)) + self.target_offset
    }

    pub fn predict(&self, x: &RawFeatures) -> Prediction {
        let phi = self.expand(x);
        let mean = dot(&self.weights, &phi) + self.target_offset;
        let centred: Vec<f64> = phi.iter().zip(&self.feature_mean).map(|(a, b)| a - b).collect();
        let p = centred.len();
        let mut quad = 0.0;
        for i in 0..p {
            quad += centred[i] * dot(&self.covariance[i * p..(i + 1) * p], &centred);
        }
        Prediction {
            mean,
            std: (1.0 / self.beta_n + quad.max(0.0)).sqrt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA || self.version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported model schema {} v{}",
                self.schema, self.version
            )));
        }
        self.monomials.validate()?;
        let p = self.monomials.len();
        if self.weights.len() != p || self.feature_mean.len() != p || self.covariance.len() != p * p {
            return Err(Error::InvalidConfig("model arrays do not match the monomial table".into()));
        }
        if !(self.lambda_w > 0.0 && self.beta_n > 0.0) {
            return Err(Error::InvalidConfig("model precisions must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&crate::error::read_to_string(path)?)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Root-mean-square of prediction minus label.
pub fn rmse(model: &BayesRidgeModel, rows: &[RawFeatures], labels: &[f64]) -> f64 {
    let errors: Vec<f64> = rows
        .iter()
        .zip(labels)
        .map(|(x, y)| model.predict_mean(x) - y)
        .collect();
    stats::rmse(&errors)
}
