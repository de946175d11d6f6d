//! The deflation SVD behind m_SVD against a library SVD, and m_SVD against
//! m_CCA on the same samples.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reprdist::metrics_representational::{
    direct_svd, m_cca, pls_svd, similarity, standardized_cross_covariance, SampleMatrix,
};

fn main() -> reprdist::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let z = DMatrix::from_fn(500, 3, |_, _| rng.random_range(-1.0..1.0));
    let mix = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.0, 1.0, 0.5, 0.3, 0.0, 1.0]);
    let w = &z * mix + DMatrix::from_fn(500, 3, |_, _| rng.random_range(-0.5..0.5));
    let (z, w) = (SampleMatrix::uniform(z)?, SampleMatrix::uniform(w)?);
    let sigma = standardized_cross_covariance(&z, &w)?;
    let (a, b) = (pls_svd(&sigma), direct_svd(&sigma));
    println!("deflation  {:?}", a.singular_values.as_slice());
    println!("direct     {:?}", b.singular_values.as_slice());
    println!("max gap    {:.2e}", (&a.singular_values - &b.singular_values).amax());
    let s = similarity(&z, &w)?;
    println!("m_svd {:.4}  d_svd {:.4}  m_cca {:.4}", s.m_svd, s.d_svd, m_cca(&z, &w)?);
    Ok(())
}
