//! The ρ-sweep table: KL divergence vanishes while d_LLV, m_CCA and d_SVD stay put.

use reprdist::constructions::{rho_sweep, CircleSpec, FamilyBase, RhoFamily, DEFAULT_RHOS};
use reprdist::metrics_distributional::{PivotSearch, DEFAULT_LAMBDA};

fn main() -> reprdist::Result<()> {
    let family = RhoFamily { rho_values: DEFAULT_RHOS.to_vec(), base: FamilyBase::Circle(CircleSpec::table1()) };
    let (rows, pivots) = rho_sweep(&family, DEFAULT_LAMBDA, &PivotSearch::default())?;
    println!("pivots: {pivots:?}");
    println!("{:>5} {:>11} {:>11} {:>8} {:>8} {:>9}", "rho", "d_kl(p,q)", "d_kl(q,p)", "d_llv", "m_cca", "max_dsvd");
    for r in rows {
        println!(
            "{:>5} {:>11.3e} {:>11.3e} {:>8.4} {:>8.4} {:>9.4}",
            r.rho, r.d_kl_pq, r.d_kl_qp, r.d_llv, r.m_cca, r.max_d_svd
        );
    }
    Ok(())
}
