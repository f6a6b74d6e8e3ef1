//! Model persistence and an independent normal-equation check of the fitted posterior.

use margin_probe::bayes_ridge::{self, BayesRidgeModel, FitOptions};
use margin_probe::dataset::{self, DatasetConfig, ProbeRecord};
use margin_probe::features::RawFeatures;
use margin_probe::Error;

fn rows(n: usize, seed: u64) -> Vec<ProbeRecord> {
    dataset::generate_records(n, seed, &DatasetConfig::default(), 2).unwrap().0
}

fn xy(rows: &[ProbeRecord]) -> (Vec<RawFeatures>, Vec<f64>) {
    (rows.iter().map(ProbeRecord::features).collect(), rows.iter().map(|r| r.margin_db).collect())
}

/// Every monomial of total degree 1..=4 in five variables, in lexicographic exponent order.
fn monomials(z: &[f64; 5]) -> Vec<f64> {
    let mut out = Vec::new();
    for a in 0..=4u32 {
        for b in 0..=4 - a {
            for c in 0..=4 - a - b {
                for d in 0..=4 - a - b - c {
                    for e in 0..=4 - a - b - c - d {
                        if a + b + c + d + e > 0 {
                            out.push(
                                z[0].powi(a as i32)
                                    * z[1].powi(b as i32)
                                    * z[2].powi(c as i32)
                                    * z[3].powi(d as i32)
                                    * z[4].powi(e as i32),
                            );
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gaussian elimination with partial pivoting on a dense square system.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        let pivot = a[k].clone();
        for i in k + 1..n {
            let f = a[i][k] / pivot[k];
            for (aij, pj) in a[i][k..].iter_mut().zip(&pivot[k..]) {
                *aij -= f * pj;
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

#[test]
fn json_round_trip_preserves_predictions_bitwise() {
    let data = rows(600, 21);
    let (x, y) = xy(&data);
    let (model, _) = BayesRidgeModel::fit(&x, &y, 21, &FitOptions::default()).unwrap();
    let back = BayesRidgeModel::from_json(&model.to_json().unwrap()).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.to_json().unwrap(), model.to_json().unwrap());
    for r in &x {
        assert_eq!(back.predict_mean(r).to_bits(), model.predict_mean(r).to_bits());
        let p = back.predict(r);
        assert_eq!(p.mean.to_bits(), model.predict_mean(r).to_bits());
        assert!(p.std >= 1.0 / model.beta_n.sqrt());
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    model.save(&path).unwrap();
    assert_eq!(BayesRidgeModel::load(&path).unwrap(), model);
}

#[test]
fn tampered_models_are_rejected() {
    let data = rows(300, 22);
    let (x, y) = xy(&data);
    let (model, _) = BayesRidgeModel::fit(&x, &y, 22, &FitOptions::default()).unwrap();
    let mut short = model.clone();
    short.weights.pop();
    assert!(matches!(BayesRidgeModel::from_json(&short.to_json().unwrap()), Err(Error::InvalidConfig(_))));
    let mut renamed = model.clone();
    renamed.schema = "other".into();
    assert!(BayesRidgeModel::from_json(&renamed.to_json().unwrap()).is_err());
    assert!(BayesRidgeModel::from_json("{").is_err());
}

#[test]
fn fitted_model_solves_the_normal_equations() {
    let data = rows(50, 23);
    let (x, y) = xy(&data);
    let (model, trace) = BayesRidgeModel::fit(&x, &y, 23, &FitOptions::default()).unwrap();
    assert!(trace.converged);

    // Independent standardisation and expansion of the same 50 rows.
    let n = x.len() as f64;
    let mut mean = [0.0; 5];
    let mut std = [0.0; 5];
    for j in 0..5 {
        mean[j] = x.iter().map(|r| r[j]).sum::<f64>() / n;
        std[j] = (x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
    }
    let phi: Vec<Vec<f64>> = x
        .iter()
        .map(|r| monomials(&std::array::from_fn(|j| (r[j] - mean[j]) / std[j])))
        .collect();
    let p = phi[0].len();
    assert_eq!(p, 125);
    let col_mean: Vec<f64> = (0..p).map(|j| phi.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let y_mean = y.iter().sum::<f64>() / n;
    let c: Vec<Vec<f64>> = phi.iter().map(|r| r.iter().zip(&col_mean).map(|(v, m)| v - m).collect()).collect();

    // With p > n the dual form (C Cᵀ + α I) a = y, w = Cᵀ a is the well-posed system.
    let alpha = model.lambda_w / model.beta_n;
    let gram: Vec<Vec<f64>> = (0..c.len())
        .map(|i| {
            (0..c.len())
                .map(|k| c[i].iter().zip(&c[k]).map(|(u, v)| u * v).sum::<f64>() + if i == k { alpha } else { 0.0 })
                .collect()
        })
        .collect();
    let dual = solve(gram, y.iter().map(|v| v - y_mean).collect());
    let w: Vec<f64> = (0..p).map(|j| c.iter().zip(&dual).map(|(r, a)| r[j] * a).sum()).collect();

    let probe = rows(40, 24);
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for r in &probe {
        let f = r.features();
        let z: [f64; 5] = std::array::from_fn(|j| (f[j] - mean[j]) / std[j]);
        let brute: f64 = monomials(&z).iter().zip(&w).zip(&col_mean).map(|((v, wj), m)| (v - m) * wj).sum::<f64>() + y_mean;
        let err = (brute - model.predict_mean(&f)).abs();
        assert!(err <= 1e-8 * scale.max(1.0), "prediction mismatch {err:e}");
    }
    assert!(bayes_ridge::rmse(&model, &x, &y).is_finite());
}
