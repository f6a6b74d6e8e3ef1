//! Order-independent summary statistics.

/// Pairwise (cascade) summation; error grows as O(log n) instead of O(n).
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Population variance (divisor N), two-pass.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / xs.len() as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

pub fn rmse(errors: &[f64]) -> f64 {
    let sq: Vec<f64> = errors.iter().map(|e| e * e).collect();
    (pairwise_sum(&sq) / errors.len() as f64).sqrt()
}

/// Pearson correlation coefficient; NaN when either series is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let mx = mean(xs);
    let my = mean(ys);
    let sxy: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).collect();
    let sxx: Vec<f64> = xs.iter().map(|x| (x - mx) * (x - mx)).collect();
    let syy: Vec<f64> = ys.iter().map(|y| (y - my) * (y - my)).collect();
    pairwise_sum(&sxy) / (pairwise_sum(&sxx) * pairwise_sum(&syy)).sqrt()
}
