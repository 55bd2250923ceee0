//! Aggregate statistics: interquartile mean, percentile bootstrap intervals
//! and per-step prediction errors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("need at least 2 values, got {0}")]
    InsufficientData(usize),
    #[error("confidence level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
    #[error("non-finite value in input")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Mean of the middle half. Order statistic `i` of `n` carries weight equal
/// to the overlap of `[i, i+1]` with `[n/4, 3n/4]`, so the boundary values
/// are weighted linearly when `n` is not divisible by 4.
pub fn iqm(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(iqm_sorted(&sorted))
}

fn iqm_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let (lo, hi) = (0.25 * n, 0.75 * n);
    let first = lo.floor() as usize;
    let last = (hi.ceil() as usize).min(sorted.len());
    let mut acc = 0.0;
    for (i, v) in sorted.iter().enumerate().take(last).skip(first) {
        let a = (i as f64).max(lo);
        let b = ((i + 1) as f64).min(hi);
        if b > a {
            acc += (b - a) * v;
        }
    }
    acc / (hi - lo)
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Percentile bootstrap interval for the IQM. The interval is widened if
/// needed so that it always contains the point estimate.
pub fn bootstrap_ci(values: &[f64], level: f64, resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(MetricsError::InsufficientData(values.len()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(MetricsError::InvalidLevel(level));
    }
    let point = iqm(values)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let mut sample = vec![0.0; n];
    let mut stats = Vec::with_capacity(resamples.max(1));
    for _ in 0..resamples.max(1) {
        for s in sample.iter_mut() {
            *s = values[rng.random_range(0..n)];
        }
        sample.sort_by(f64::total_cmp);
        stats.push(iqm_sorted(&sample));
    }
    stats.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    let lo = quantile_sorted(&stats, alpha / 2.0).min(point);
    let hi = quantile_sorted(&stats, 1.0 - alpha / 2.0).max(point);
    Ok((lo, hi))
}

/// Mean over rows of `‖y_i − c_i M‖₁`.
pub fn prediction_l1(c: &Matrix, m: &Matrix, y: &Matrix) -> f64 {
    if c.rows() == 0 {
        return 0.0;
    }
    let pred = c.matmul(m);
    pred.sub(y).as_slice().iter().map(|v| v.abs()).sum::<f64>() / c.rows() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iqm_examples() {
        assert_eq!(iqm(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 2.5);
        assert_eq!(iqm(&[7.0; 9]).unwrap(), 7.0);
        assert_eq!(iqm(&[0.0, 0.0, 0.0, 100.0]).unwrap(), 0.0);
        assert_eq!(iqm(&[3.0]).unwrap(), 3.0);
        assert_eq!(iqm(&[]), Err(MetricsError::EmptyInput));
        // n = 5: weights 0, .75, 1, .75, 0 over 2.5
        assert!((iqm(&[10.0, 1.0, 2.0, 3.0, -10.0]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn bootstrap_examples() {
        assert_eq!(bootstrap_ci(&[4.0; 6], 0.95, 2000, 0).unwrap(), (4.0, 4.0));
        let v = [0.1, 0.5, 0.2, 0.9, 0.4, 0.35, 0.6];
        let (lo, hi) = bootstrap_ci(&v, 0.95, 2000, 1).unwrap();
        let p = iqm(&v).unwrap();
        assert!(lo <= p && p <= hi);
        assert_eq!(bootstrap_ci(&v, 0.95, 2000, 1).unwrap(), (lo, hi));
        assert_eq!(bootstrap_ci(&[1.0], 0.95, 10, 0), Err(MetricsError::InsufficientData(1)));
    }

    #[test]
    fn l1_error() {
        let c = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 2.0]]);
        let m = Matrix::from_rows(&[&[1.0], &[1.0]]);
        let y = Matrix::from_rows(&[&[0.5], &[3.0]]);
        assert_eq!(prediction_l1(&c, &m, &y), 0.75);
    }
}
