//! Pivot search on a constructed pair, and how d_LLV's terms depend on it.

use reprdist::constructions::{build_circle_pair, CircleSpec};
use reprdist::metrics_distributional::{d_llv, select_pivots, PivotSearch, DEFAULT_LAMBDA};
use reprdist::model_core::{check_diversity, PivotConfig};

fn main() -> reprdist::Result<()> {
    let pair = build_circle_pair(&CircleSpec::new(6, 50, 0)?, 3.0)?.to_model_pair()?;
    let m = pair.dim();
    let chosen = select_pivots(&pair.p, &pair.q, m, Some((&pair.a, &pair.b)), &PivotSearch::default())?;
    let naive = PivotConfig::new(0, (1..=m).collect(), 0, 5, 6);
    for (name, piv) in [("searched", &chosen), ("first inputs", &naive)] {
        let r = d_llv(&pair.p, &pair.q, piv, DEFAULT_LAMBDA)?;
        let div = check_diversity(&pair.a, piv, PivotSearch::default().cond_cap)?;
        println!("{name}: {piv:?}");
        println!("  t1 {:.4}  t2 {:.4}  t3 {:.3e}  t4 {:.3e}  d_llv {:.4}", r.t1, r.t2, r.t3, r.t4, r.value);
        println!("  diversity {div:?}");
    }
    Ok(())
}
