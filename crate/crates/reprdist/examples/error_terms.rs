//! Decomposes one model's embeddings and unembeddings into a linear map of
//! the other's plus error terms, and checks the variance-correlation identity.

use reprdist::bound_lab::{embedding_decomposition, unembedding_decomposition, var_corr_identity, verify_bound};
use reprdist::constructions::{build_circle_pair, CircleSpec};
use reprdist::metrics_distributional::{select_pivots, PivotSearch, DEFAULT_LAMBDA};

fn main() -> reprdist::Result<()> {
    let pair = build_circle_pair(&CircleSpec::new(6, 50, 0)?, 3.0)?.to_model_pair()?;
    let piv = select_pivots(&pair.p, &pair.q, pair.dim(), Some((&pair.a, &pair.b)), &PivotSearch::default())?;
    let e = embedding_decomposition(&pair, &piv)?;
    let u = unembedding_decomposition(&pair, &piv)?;
    let f_err = pair.b.embeddings() * e.a_tilde.transpose() + &e.h - pair.a.embeddings();
    println!("A~ = {}", e.a_tilde);
    println!("embedding reconstruction error {:.2e}, largest |h_f| {:.4}", f_err.amax(), e.h.amax());
    println!("unembedding offset {:?}, largest |h_g| {:.4}", u.offset.as_slice(), u.h.amax());
    println!("variance-correlation gap {:.2e}", var_corr_identity(&pair, &piv)?.max_gap());
    let c = verify_bound(&pair, &piv, DEFAULT_LAMBDA)?;
    println!(
        "epsilon {:.4}: lhs {:.4}/{:.4} vs rhs {:.4}, holds {:?}, vacuous {}",
        c.epsilon, c.lhs_emb, c.lhs_unemb, c.rhs, c.holds, c.vacuous
    );
    Ok(())
}
