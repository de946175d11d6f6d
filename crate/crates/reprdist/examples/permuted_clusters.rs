//! Two classifiers with frozen circular unembeddings in different label
//! orders: both fit the data, yet their embeddings are not linearly related.

use reprdist::synth_train::{permuted_pair, PermutedPairConfig};

fn main() -> reprdist::Result<()> {
    let cfg = PermutedPairConfig::ci();
    let r = permuted_pair(&cfg)?;
    println!("orders {:?} vs {:?}", cfg.order_a, cfg.order_b);
    println!("accuracy {:.4} / {:.4}", r.accuracy_a, r.accuracy_b);
    println!("train loss {:.4} / {:.4}", r.loss_a, r.loss_b);
    println!("d_kl {:.4}  d_llv {:.4}  m_cca {:.4}", r.d_kl, r.d_llv, r.m_cca);
    Ok(())
}
