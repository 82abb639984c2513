//! The three decoder passes over one sample and the decoupled objective.
//!
//! cargo run --release --example decoder_passes

use ccf::decoder::{decoupled_loss, pass_counts, predict, reset_pass_counts, DecoderConfig, DecoderWeights, PassKind};
use ccf::depthprior::{ConfidenceNet, LambdaMode};
use ccf::matching::MatchWeights;
use ccf::pipeline::{build_sample, PipelineConfig};
use ccf::scenesim::{generate_scene, SimConfig};

fn main() -> ccf::Result<()> {
    let cfg = PipelineConfig::default();
    let scene = generate_scene(&SimConfig::default(), 5)?;
    let confnet = ConfidenceNet::with_defaults(cfg.bins.count, 0);
    // Without a trained fusion net the image distribution is used alone.
    let sample = build_sample(&scene, &cfg, &confnet, LambdaMode::Fixed(1.0), None, 1)?;
    println!(
        "{} gts, {} image queries, {} lidar queries, {} tokens",
        sample.gts.len(),
        sample.sets.queries_2d.len(),
        sample.sets.queries_3d.len(),
        sample.tokens.len()
    );

    let weights = DecoderWeights::new(DecoderConfig::default(), 2);
    let loss = decoupled_loss(&weights, &sample.sets, &sample.tokens, &sample.gts, &PassKind::ALL, &MatchWeights::default(), None)?;
    for (pass, m, origins) in &loss.matches {
        let from_2d = m.pairs.iter().filter(|(q, _)| origins[*q] == ccf::evalkit::Origin::From2D).count();
        println!(
            "{:>5} pass: loss {:.3}, matched {} ({} image-origin)",
            pass.as_str(),
            loss.pass_total(*pass),
            m.pairs.len(),
            from_2d
        );
    }
    println!("decoupled total {:.3}", loss.total());

    reset_pass_counts();
    let dets = predict(&weights, &sample, cfg.scene_radius)?;
    println!("inference: {} detections, pass calls [2d, 3d, fused] = {:?}", dets.len(), pass_counts());
    Ok(())
}
