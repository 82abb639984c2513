//! Generates a few seeded scenes, corrupts them into the held-out domains and
//! round-trips them through the JSONL format.
//!
//! cargo run --example generate_dataset

use ccf::scenesim::{apply_domain, generate_scene, read_dataset, write_dataset, DomainName, DomainTag, SimConfig};

fn main() -> ccf::Result<()> {
    let sim = SimConfig::default();
    let scenes = (0..4).map(|i| generate_scene(&sim, 100 + i)).collect::<ccf::Result<Vec<_>>>()?;

    for scene in &scenes {
        println!("{}: {} objects, {} lidar points, {} cameras", scene.id, scene.gt_boxes.len(), scene.points.len(), scene.cameras.len());
    }

    for name in [DomainName::Rain, DomainName::Night, DomainName::Geo] {
        let tag = DomainTag::new(name, 0.8)?;
        let shifted: Vec<_> = scenes.iter().enumerate().map(|(i, s)| apply_domain(s, tag, i as u64)).collect();
        let points: usize = shifted.iter().map(|s| s.points.len()).sum();
        println!("{:>6}: {points} points in total", name.as_str());
    }

    let dir = std::env::temp_dir().join("ccf-example-dataset");
    let path = dir.join("source.jsonl");
    write_dataset(&scenes, &path)?;
    let back = read_dataset(&path)?;
    assert_eq!(back, scenes);
    println!("round-tripped {} scenes through {}", back.len(), path.display());
    Ok(())
}
