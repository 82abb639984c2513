//! Proposal-level pilot study: how far image proposals trail LiDAR ones, and
//! how matching favors LiDAR-origin queries, on every split.
//!
//! cargo run --release --example pilot_study

use ccf::depthprior::{ConfidenceNet, LambdaMode};
use ccf::evalkit::pilot_split;
use ccf::experiment::{fmt_opt, generate_split, ExperimentConfig, EVAL_SPLITS};

fn main() -> ccf::Result<()> {
    let mut cfg = ExperimentConfig::new(42, "unused", "unused");
    cfg.splits.eval_scenes = 40;
    let confnet = ConfidenceNet::with_defaults(cfg.train.pipeline.bins.count, 0);
    println!("split   2d-map50 native/projected   3d-map from2d/from3d   matched 3d:2d   depth MAE image");
    for split in EVAL_SPLITS {
        let scenes = generate_split(&cfg, split)?;
        let row = pilot_split(split, &scenes, &cfg.train.pipeline, LambdaMode::Fixed(1.0), &confnet, &cfg.train.matching, 9)?;
        println!(
            "{split:<7} {:>8} / {:<8}          {:>6} / {:<6}        {:>6.2}          {}",
            fmt_opt(row.map2d_native),
            fmt_opt(row.map2d_projected),
            fmt_opt(row.map3d_from_2d),
            fmt_opt(row.map3d_from_3d),
            row.supervision.ratio,
            fmt_opt(row.depth_mae_image)
        );
    }
    Ok(())
}
