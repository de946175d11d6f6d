#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reprdist::model_core::{cond_log_probs, CondLogProb, ModelTable, PivotConfig};
use reprdist::moments;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

pub fn random_model(rng: &mut ChaCha8Rng, n: usize, k: usize, m: usize) -> ModelTable {
    ModelTable::new(random_matrix(rng, n, m, 2.0), random_matrix(rng, k, m, 2.0)).unwrap()
}

pub fn uniform_dist(model: &ModelTable) -> CondLogProb {
    cond_log_probs(model, &moments::uniform(model.n_inputs())).unwrap()
}

/// `x₀ = 0`, `X_LLV = {1, …, M}`, `y₀ = 0`, last label excluded.
pub fn fixed_pivots(k: usize, m: usize) -> PivotConfig {
    PivotConfig::new(0, (1..=m).collect(), 0, k - 1, k)
}

/// Haar-distributed orthonormal matrix via QR of a Gaussian matrix.
pub fn random_orthonormal(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
    let a = random_matrix(rng, m, m, 1.0);
    let qr = a.qr();
    let (q, r) = (qr.q(), qr.r());
    let signs = DMatrix::from_diagonal(&r.diagonal().map(|v| v.signum()));
    q * signs
}

/// Random matrix with condition number at most about 10.
pub fn well_conditioned(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
    let u = random_orthonormal(rng, m);
    let v = random_orthonormal(rng, m);
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(m, |_, _| rng.random_range(0.3..3.0)));
    u * s * v.transpose()
}
