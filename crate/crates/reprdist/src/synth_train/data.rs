use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Isotropic Gaussian points labelled by angle: `c` classes, each owning a
/// slice of width `π/c` and the opposite slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularDataset {
    pub c: usize,
    pub sigma: f64,
    pub seed: u64,
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
}

/// Label of the direction `(x, y)`: `⌊(θ mod π) / (π/c)⌋`.
pub fn slice_label(x: f64, y: f64, c: usize) -> usize {
    let theta = y.atan2(x).rem_euclid(PI);
    ((theta / (PI / c as f64)) as usize).min(c - 1)
}

pub fn gen_angular_data(c: usize, n: usize, sigma: f64, seed: u64) -> Result<AngularDataset> {
    if c < 2 || c % 2 == 1 {
        return Err(Error::InvalidArgument(format!("class count must be even and at least 2, got {c}")));
    }
    if n == 0 || !(sigma > 0.0) {
        return Err(Error::InvalidArgument("need n > 0 and sigma > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<[f64; 2]> = (0..n)
        .map(|_| [sigma * rng.sample::<f64, _>(StandardNormal), sigma * rng.sample::<f64, _>(StandardNormal)])
        .collect();
    let labels = points.iter().map(|p| slice_label(p[0], p[1], c)).collect();
    Ok(AngularDataset { c, sigma, seed, points, labels })
}

impl AngularDataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// First `⌊frac·n⌋` points for training, the rest held out.
    pub fn split(&self, frac: f64) -> (AngularDataset, AngularDataset) {
        let cut = ((self.len() as f64) * frac).floor() as usize;
        let part = |r: std::ops::Range<usize>| AngularDataset {
            points: self.points[r.clone()].to_vec(),
            labels: self.labels[r].to_vec(),
            ..self.clone()
        };
        (part(0..cut), part(cut..self.len()))
    }

    /// The first `n` points (all of them if fewer).
    pub fn head(&self, n: usize) -> AngularDataset {
        let n = n.min(self.len());
        AngularDataset { points: self.points[..n].to_vec(), labels: self.labels[..n].to_vec(), ..self.clone() }
    }

    pub fn class_frequencies(&self) -> Vec<f64> {
        let mut h = vec![0.0; self.c];
        for &y in &self.labels {
            h[y] += 1.0;
        }
        h.iter().map(|v| v / self.len() as f64).collect()
    }
}
