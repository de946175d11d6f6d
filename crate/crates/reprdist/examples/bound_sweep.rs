//! Perturb a reference model's embeddings with growing Gaussian noise and
//! certify `max d_SVD ≤ 2Mε` at every noise level.

use reprdist::bound_lab::{noise_sweep, NoiseSweep};
use reprdist::constructions::{build_circle_pair, CircleSpec};
use reprdist::metrics_distributional::{PivotSearch, DEFAULT_LAMBDA};

fn main() -> reprdist::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let (k, ppl, rho, smax) = match args.as_slice() {
        [k, p, r, s] => (*k as usize, *p as usize, *r, *s),
        _ => (6, 50, 3.0, 0.2),
    };
    let reference = build_circle_pair(&CircleSpec::new(k, ppl, 0)?, rho)?;
    let sweep = NoiseSweep {
        sigmas: (0..10).map(|i| smax * i as f64 / 9.0).collect(),
        seed: 1,
        lambda: DEFAULT_LAMBDA,
        search: PivotSearch::default(),
    };
    let points = noise_sweep(&reference.first, &reference.weights, &sweep)?;
    println!(
        "{:>7} {:>9} {:>9} {:>9} {:>8} {:>6} {:>8}",
        "sigma", "epsilon", "lhs_emb", "lhs_unemb", "rhs", "holds", "vacuous"
    );
    for p in points {
        let c = &p.certificate;
        println!(
            "{:>7.4} {:>9.5} {:>9.5} {:>9.5} {:>8.4} {:>6} {:>8}",
            p.sigma,
            c.epsilon,
            c.lhs_emb,
            c.lhs_unemb,
            c.rhs,
            c.holds.map_or("n/a".to_string(), |h| h.to_string()),
            c.vacuous
        );
    }
    Ok(())
}
