//! Trains classifiers at several widths and reports pairwise distances.
//!
//! `cargo run --release --example width_sweep -- [c=4] [full] [widths=16,64] [seeds=5] [steps=3000]`

use reprdist::synth_train::{spearman, width_sweep, WidthSweepConfig};

fn main() -> reprdist::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let get = |key: &str| args.iter().find_map(|a| a.strip_prefix(key).and_then(|r| r.strip_prefix('=')));
    let c = get("c").and_then(|s| s.parse().ok()).unwrap_or(4);
    let mut cfg = if args.iter().any(|a| a == "full") { WidthSweepConfig::full(c) } else { WidthSweepConfig::ci(c) };
    if let Some(w) = get("widths") {
        cfg.widths = w.split(',').filter_map(|v| v.parse().ok()).collect();
    }
    if let Some(n) = get("seeds").and_then(|s| s.parse::<u64>().ok()) {
        cfg.seeds = (0..n).collect();
    }
    if let Some(n) = get("steps").and_then(|s| s.parse().ok()) {
        cfg.train.steps = n;
    }
    let t = std::time::Instant::now();
    let r = width_sweep(&cfg)?;
    for run in &r.runs {
        println!("width {:>3} seed {:>2}  acc {:.4}  loss {:.4}", run.width, run.seed, run.accuracy, run.final_loss);
    }
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    println!("{:>5} {:>3} {:>10} {:>10} {:>10} {:>10}", "width", "n", "mean_llv", "std_llv", "mean_svd", "std_svd");
    for row in &r.rows {
        println!(
            "{:>5} {:>3} {:>10} {:>10} {:>10} {:>10}",
            row.width,
            row.n_retained,
            fmt(row.mean_d_llv),
            fmt(row.std_d_llv),
            fmt(row.mean_max_d_svd),
            fmt(row.std_max_d_svd)
        );
    }
    let (w, m): (Vec<f64>, Vec<f64>) =
        r.rows.iter().filter_map(|row| row.mean_d_llv.map(|m| (row.width as f64, m))).unzip();
    if w.len() >= 2 {
        println!("spearman(width, mean d_llv) = {:.3}", spearman(&w, &m)?);
    }
    let violations = r.pairs.iter().filter(|p| p.certificate.holds == Some(false)).count();
    let active = r.pairs.iter().filter(|p| p.certificate.holds.is_some() && !p.certificate.vacuous).count();
    println!("bound: {active} non-vacuous pairs, {violations} violations");
    for d in &r.diagnostics {
        println!("note: {d}");
    }
    println!("elapsed {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
