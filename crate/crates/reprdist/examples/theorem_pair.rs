//! Two models with near-zero loss and matching distributions whose
//! embeddings are far from linearly related.

use reprdist::constructions::{build_theorem_pair, TheoremSpec, DEFAULT_RHOS};
use reprdist::metrics_distributional::d_kl;
use reprdist::metrics_representational::{linear_fit_residuals, similarity, SampleMatrix};
use reprdist::model_core::nll;

fn main() -> reprdist::Result<()> {
    let spec = TheoremSpec::default();
    println!("{:>5} {:>10} {:>10} {:>10} {:>8}", "rho", "nll", "d_kl", "residual", "m_svd");
    for rho in DEFAULT_RHOS {
        let pair = build_theorem_pair(&spec, rho)?;
        let mp = pair.to_model_pair()?;
        let z = SampleMatrix::new(pair.first.embeddings().clone(), pair.weights.clone())?;
        let w = SampleMatrix::new(pair.second.embeddings().clone(), pair.weights.clone())?;
        let resid = linear_fit_residuals(&z, &w)?.dot(&pair.weights);
        println!(
            "{:>5} {:>10.3e} {:>10.3e} {:>10.4} {:>8.4}",
            rho,
            nll(&pair.first, &pair.labels, &pair.weights)?,
            d_kl(&mp.p, &mp.q)?,
            resid,
            similarity(&z, &w)?.m_svd
        );
    }
    Ok(())
}
