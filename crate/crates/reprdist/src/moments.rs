//! Weighted population moments. Every variance in the crate goes through here.

use nalgebra::DVector;

use crate::{Error, Result};

/// Checks that `w` is a finite, nonnegative probability vector of length `n`.
pub fn check_weights(w: &DVector<f64>, n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::Weights(format!("expected {n} weights, got {}", w.len())));
    }
    if let Some(i) = w.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Weights(format!("weight {i} is negative or non-finite")));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::Weights(format!("weights sum to {s}, not 1")));
    }
    Ok(())
}

pub fn uniform(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0 / n as f64)
}

pub fn mean<I>(values: I, w: &[f64]) -> f64
where
    I: IntoIterator<Item = f64>,
{
    values.into_iter().zip(w).map(|(v, wi)| v * wi).sum()
}

/// Population variance of `values` under weights `w`.
pub fn var(values: &[f64], w: &[f64]) -> f64 {
    let m = mean(values.iter().copied(), w);
    values.iter().zip(w).map(|(v, wi)| wi * (v - m) * (v - m)).sum::<f64>().max(0.0)
}

/// Population variance with uniform weights.
pub fn var_uniform(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
}

pub fn cov(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    let ma = mean(a.iter().copied(), w);
    let mb = mean(b.iter().copied(), w);
    a.iter().zip(b).zip(w).map(|((x, y), wi)| wi * (x - ma) * (y - mb)).sum()
}

pub fn corr(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    cov(a, b, w) / (var(a, w) * var(b, w)).sqrt()
}

/// Sample mean and population standard deviation of a slice.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    (m, var_uniform(values).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_variance() {
        let w = [0.5, 0.5];
        assert!((var(&[1.0, 4.0], &w) - 2.25).abs() < 1e-15);
        assert!((var_uniform(&[1.0, 4.0]) - 2.25).abs() < 1e-15);
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(check_weights(&DVector::from_vec(vec![0.5, 0.25]), 2).is_err());
        assert!(check_weights(&DVector::from_vec(vec![-0.5, 1.5]), 2).is_err());
        assert!(check_weights(&uniform(7), 7).is_ok());
    }

    #[test]
    fn perfect_anticorrelation() {
        let w = [1.0 / 3.0; 3];
        assert!((corr(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0], &w) + 1.0).abs() < 1e-12);
    }
}
