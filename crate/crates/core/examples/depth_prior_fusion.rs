//! Fusing an image depth distribution with a LiDAR frustum histogram, with a
//! fixed weight and with a trained fusion-weight network.
//!
//! cargo run --release --example depth_prior_fusion

use ccf::depthprior::{discretized_gaussian, expected_depth, fuse_distributions, lidar_depth_histogram, ConfTrainConfig, ConfidenceNet, DepthBins};
use ccf::pipeline::{confidence_examples, PipelineConfig};
use ccf::scenesim::{generate_scene, SimConfig};

fn main() -> ccf::Result<()> {
    let bins = DepthBins::default();
    let gt = 21.0;
    // A blurry, biased image estimate and a sharp LiDAR histogram with one
    // background return.
    let image = discretized_gaussian(gt + 2.5, 3.0, &bins);
    let lidar = lidar_depth_histogram(&[20.8, 21.1, 21.3, 34.0], &bins);
    for lambda in [1.0, 0.75, 0.5, 0.25, 0.0] {
        let fused = fuse_distributions(&image, &lidar, lambda);
        println!("lambda {lambda:.2}: expected depth {:.2} m (gt {gt})", expected_depth(&fused, &bins));
    }

    let cfg = PipelineConfig::default();
    let scenes = (0..12).map(|i| generate_scene(&SimConfig::default(), i)).collect::<ccf::Result<Vec<_>>>()?;
    let data = confidence_examples(&scenes, &cfg, 7)?;
    let mut net = ConfidenceNet::with_defaults(cfg.bins.count, 1);
    let curve = net.train(&data, &cfg.bins, &ConfTrainConfig::default())?;
    println!(
        "fusion-weight net on {} frusta: L1 {:.3} -> {:.3} m, mean lambda {:.3}",
        data.len(),
        curve[0],
        curve[curve.len() - 1],
        net.mean_lambda(&data)
    );
    Ok(())
}
