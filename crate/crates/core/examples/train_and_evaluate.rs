//! Trains a small model with complementary masking and evaluates it on the
//! source and rain splits.
//!
//! cargo run --release --example train_and_evaluate

use ccf::decoder::train;
use ccf::evalkit::Origin;
use ccf::experiment::{generate_split, ExperimentConfig};
use ccf::masking::MaskKind;

fn main() -> ccf::Result<()> {
    let mut cfg = ExperimentConfig::new(42, "unused", "unused");
    cfg.splits.train_scenes = 32;
    cfg.splits.eval_scenes = 24;
    cfg.train.epochs = 15;
    cfg.train.mask.kind = MaskKind::ComplementaryGrid;

    let train_scenes = generate_split(&cfg, "train")?;
    let source = generate_split(&cfg, "source")?;
    let rain = generate_split(&cfg, "rain")?;
    let outcome = train(&train_scenes, &[("source", &source), ("rain", &rain)], &cfg.train, cfg.seed)?;

    for row in outcome.log.iter().filter(|r| r.split == "train" && r.epoch % 5 == 0) {
        println!("epoch {:>2}: L_2d {:.3} L_3d {:.3} L_fused {:.3}", row.epoch, row.loss_2d, row.loss_3d, row.loss_fused);
    }
    for row in outcome.log.iter().filter(|r| r.split != "train") {
        println!("epoch {:>2} {:>6}: mAP {}", row.epoch, row.split, ccf::experiment::fmt_opt(row.map));
    }

    let setup = ccf::evalkit::EvalSetup {
        pipeline: &cfg.train.pipeline,
        confnet: &outcome.confnet,
        lambda: outcome.lambda,
        matching: &cfg.train.matching,
        seed: 1,
    };
    let r = ccf::evalkit::evaluate_model(&outcome.weights, "rain", &rain, &setup)?;
    println!(
        "rain: mAP {:.3} (image-origin {:.3}, lidar-origin {:.3}), depth MAE image {:.2} m vs fused {:.2} m",
        r.map.unwrap_or(0.0),
        r.origin_map(Origin::From2D).unwrap_or(0.0),
        r.origin_map(Origin::From3D).unwrap_or(0.0),
        r.depth_mae_image.unwrap_or(f64::NAN),
        r.depth_mae_fused.unwrap_or(f64::NAN)
    );
    Ok(())
}
