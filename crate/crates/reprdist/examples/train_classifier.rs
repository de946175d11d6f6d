//! Trains one angular-slice classifier and exports its model table.
//!
//! Usage: `cargo run --release --example train_classifier -- [width] [steps]`

use reprdist::synth_train::{gen_angular_data, train, TrainConfig};

fn main() -> reprdist::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let width = args.first().copied().unwrap_or(64);
    let data = gen_angular_data(4, 20_000, 3.0, 0)?;
    let cfg = TrainConfig { steps: args.get(1).copied().unwrap_or(3000), ..TrainConfig::new(width, 0) };
    let model = train(&cfg, &data)?;
    println!("width {width}, {} steps", cfg.steps);
    println!("loss {:.4} -> {:.4}, test accuracy {:.4}", model.initial_loss, model.final_loss, model.accuracy);
    let (_, test) = data.split(cfg.train_fraction);
    let table = model.to_model_table(&test.head(500).points)?;
    println!("model table: {} inputs, {} labels, M = {}", table.n_inputs(), table.n_labels(), table.dim());
    println!("unembeddings:\n{}", table.unembeddings());
    Ok(())
}
