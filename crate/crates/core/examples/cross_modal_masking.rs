//! Consistent vs complementary masking of one sample, plus the curriculum
//! schedule. Writes mask renderings to the temp directory.
//!
//! cargo run --example cross_modal_masking

use ccf::masking::{apply_policy, curriculum_prob, first_projection, MaskKind, MaskPolicy};
use ccf::scenesim::{generate_scene, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = generate_scene(&SimConfig::default(), 3)?;
    let projectable = scene.points.iter().filter(|p| first_projection(&scene.cameras, p).is_some()).count();
    println!("{} points, {projectable} project into a camera", scene.points.len());

    for kind in [MaskKind::ConsistentGrid, MaskKind::ComplementaryGrid, MaskKind::ComplementaryRandom, MaskKind::Modal] {
        let policy = MaskPolicy {
            kind,
            p_max: 1.0,
            curriculum: false,
            ..MaskPolicy::default()
        };
        let aug = apply_policy(&scene.cameras, &scene.points, &policy, 0, 1, 11)?;
        let masked = aug.images.iter().map(|m| m.masked_fraction()).sum::<f64>() / aug.images.len() as f64;
        println!(
            "{:>20}: image masked {:.0}%, lidar points kept {}",
            kind.as_str(),
            100.0 * masked,
            aug.points.len()
        );
        let path = std::env::temp_dir().join(format!("ccf-mask-{}.svg", kind.as_str()));
        std::fs::write(&path, ccf::svg::mask_image(&aug.images[0], 3))?;
    }

    let total = 1000;
    for step in [0, 250, 500, 1000] {
        println!("masking probability at step {step:>4}/{total}: {:.3}", curriculum_prob(step, total, 0.7));
    }
    Ok(())
}
