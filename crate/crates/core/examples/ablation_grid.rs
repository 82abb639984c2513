//! The 2x2x2 component grid (decoupled loss, depth prior, complementary
//! masking) trained on a tiny benchmark, summarized as a method x split table.
//!
//! cargo run --release --example ablation_grid

use ccf::experiment::{ablation_grid, cmd_gen, evaluate_splits, parse_ablation, run_training, summary_table, ExperimentConfig};

fn main() -> ccf::Result<()> {
    let root = std::env::temp_dir().join("ccf-example-ablation");
    let mut cfg = ExperimentConfig::new(7, root.join("data"), root.join("out"));
    cfg.splits.train_scenes = 16;
    cfg.splits.eval_scenes = 12;
    cfg.train.epochs = 6;
    cfg.eval.splits = vec!["source".into(), "rain".into()];
    cmd_gen(&cfg)?;

    let mut rows = Vec::new();
    for (name, tc) in ablation_grid(&cfg.train, &parse_ablation("all")?) {
        let run = run_training(&cfg, &name, &tc, &root.join("out").join(&name))?;
        rows.push((name, evaluate_splits(&cfg, &run.weights, &run.confnet, run.lambda)?));
    }
    print!("{}", summary_table(&cfg.eval.splits, &rows));
    Ok(())
}
