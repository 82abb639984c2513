//! Per-sample assembly: masking -> proposals -> queries -> scene tokens.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{QueryInput, QuerySets, SceneTokens, TokenConfig};
use crate::depthprior::{
    image_depth_distribution, make_query2d, make_query3d, ConfExample, ConfidenceNet, DepthBins, LambdaMode, Query2D, Query3D,
    DEFAULT_SIGMA_BASE,
};
use crate::error::Result;
use crate::evalkit::Origin;
use crate::geometry::Box3D;
use crate::masking::AugmentedInputs;
use crate::matching::{normalize_box, BoxParams};
use crate::rng::{derive_seed, rng_for, tag};
use crate::scenesim::{simulate_proposals_with, ProposalNoise, ProposalSet, Scene, SensorView, CLASS_MEAN_SIZE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub noise: ProposalNoise,
    pub bins: DepthBins,
    pub sigma_base: f64,
    pub tokens: TokenConfig,
    pub scene_radius: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            noise: ProposalNoise::default(),
            bins: DepthBins::default(),
            sigma_base: DEFAULT_SIGMA_BASE,
            tokens: TokenConfig::default(),
            scene_radius: 40.0,
        }
    }
}

/// Everything the decoder and the evaluation need for one scene.
#[derive(Debug, Clone)]
pub struct Sample {
    pub sets: QuerySets,
    pub tokens: SceneTokens,
    pub gts: Vec<Box3D>,
    pub proposals: ProposalSet,
    pub queries_2d: Vec<Query2D>,
    pub queries_3d: Vec<Query3D>,
}

/// Camera-frame depth of a gt center, if it lies in front of the camera.
pub fn gt_camera_depth(scene: &Scene, camera: usize, gt: usize) -> f64 {
    scene.cameras[camera].to_camera(&scene.gt_boxes[gt].center).z
}

fn anchor_2d(ref_point: &Vector3<f64>, class_id: usize, radius: f64) -> BoxParams {
    let s = CLASS_MEAN_SIZE[class_id.min(CLASS_MEAN_SIZE.len() - 1)];
    [
        ref_point.x / radius,
        ref_point.y / radius,
        ref_point.z / radius,
        s[0] / radius,
        s[1] / radius,
        s[2] / radius,
        0.0,
    ]
}

/// Simulated image depth distribution for a 2D proposal. False positives
/// get a distribution around a random depth.
fn image_dist_for(scene: &Scene, cfg: &PipelineConfig, camera: usize, gt_index: Option<usize>, ordinal: usize, seed: u64) -> crate::depthprior::DepthDistribution {
    let (depth, key) = match gt_index {
        Some(g) => (gt_camera_depth(scene, camera, g), g as u64),
        None => {
            let mut rng = rng_for(seed, &[tag::IMAGE_DEPTH, camera as u64, 1 << 20, ordinal as u64]);
            (rng.random_range(5.0..40.0), (1 << 20) + ordinal as u64)
        }
    };
    let s = derive_seed(seed, &[tag::IMAGE_DEPTH, camera as u64, key]);
    image_depth_distribution(depth, cfg.sigma_base, scene.domain, &cfg.bins, s)
}

/// Builds one sample. `aug` is the masked sensor data (none = unmasked);
/// `seed` keys proposal and image-depth noise.
pub fn build_sample(
    scene: &Scene,
    cfg: &PipelineConfig,
    net: &ConfidenceNet,
    lambda: LambdaMode,
    aug: Option<&AugmentedInputs>,
    seed: u64,
) -> Result<Sample> {
    let (points, view) = match aug {
        Some(a) => (
            &a.points[..],
            SensorView {
                points: &a.points,
                visibility: if a.applied { Some(&a.images) } else { None },
                image_dropped: a.image_dropped,
            },
        ),
        None => (&scene.points[..], SensorView::unmasked(scene)),
    };
    let proposals = simulate_proposals_with(scene, view, &cfg.noise, seed);

    let mut queries_2d = Vec::with_capacity(proposals.proposals_2d.len());
    let mut inputs_2d = Vec::with_capacity(proposals.proposals_2d.len());
    for (ordinal, p) in proposals.proposals_2d.iter().enumerate() {
        let cam = &scene.cameras[p.camera];
        let img = image_dist_for(scene, cfg, p.camera, p.gt_index, ordinal, seed);
        let q = make_query2d(&p.bbox, p.camera, cam, points, &cfg.bins, net, lambda, &img)?;
        // Masked image area removes the matching share of the content.
        let content = q.content.map(|c| c * p.visible_fraction);
        inputs_2d.push(QueryInput {
            content,
            origin: Origin::From2D,
            ref_point: q.ref_point,
            anchor: anchor_2d(&q.ref_point, p.bbox.class_id, cfg.scene_radius),
        });
        queries_2d.push(q);
    }
    let queries_3d: Vec<Query3D> = proposals
        .proposals_3d
        .iter()
        .map(|p| make_query3d(&p.bbox, p.num_points, cfg.scene_radius))
        .collect();
    let inputs_3d = queries_3d
        .iter()
        .map(|q| QueryInput {
            content: q.content,
            origin: Origin::From3D,
            ref_point: q.ref_point,
            anchor: normalize_box(&q.source_box, cfg.scene_radius),
        })
        .collect();
    Ok(Sample {
        sets: QuerySets {
            queries_2d: inputs_2d,
            queries_3d: inputs_3d,
        },
        tokens: SceneTokens::from_points(points, &cfg.tokens),
        gts: scene.gt_boxes.clone(),
        proposals,
        queries_2d,
        queries_3d,
    })
}

/// Fusion-weight supervision from the gt-derived 2D proposals of `scenes`
/// (unmasked). The confidence net is only read for `Query2D` bookkeeping.
pub fn confidence_examples(scenes: &[Scene], cfg: &PipelineConfig, seed: u64) -> Result<Vec<ConfExample>> {
    let net = ConfidenceNet::with_defaults(cfg.bins.count, 0);
    let mut out = Vec::new();
    for (i, scene) in scenes.iter().enumerate() {
        let s = build_sample(scene, cfg, &net, LambdaMode::Fixed(0.5), None, derive_seed(seed, &[i as u64]))?;
        for (p, q) in s.proposals.proposals_2d.iter().zip(&s.queries_2d) {
            let Some(g) = p.gt_index else { continue };
            out.push(ConfExample {
                image: q.image_dist.clone(),
                lidar: q.lidar_dist.clone(),
                gt_depth: gt_camera_depth(scene, p.camera, g),
                empty_frustum: q.frustum_points == 0,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenesim::{generate_scene, SimConfig};

    #[test]
    fn sample_is_deterministic_and_consistent() {
        let scene = generate_scene(&SimConfig::default(), 6).unwrap();
        let cfg = PipelineConfig::default();
        let net = ConfidenceNet::with_defaults(25, 0);
        let a = build_sample(&scene, &cfg, &net, LambdaMode::Learned, None, 5).unwrap();
        let b = build_sample(&scene, &cfg, &net, LambdaMode::Learned, None, 5).unwrap();
        assert_eq!(a.sets.queries_2d, b.sets.queries_2d);
        assert_eq!(a.sets.queries_2d.len(), a.proposals.proposals_2d.len());
        assert_eq!(a.sets.queries_3d.len(), a.proposals.proposals_3d.len());
        for q in &a.sets.queries_3d {
            assert_eq!(q.origin, Origin::From3D);
        }
    }

    #[test]
    fn lidar_prior_improves_depth() {
        let cfg = PipelineConfig::default();
        let net = ConfidenceNet::with_defaults(25, 0);
        let (mut img, mut fused, mut n) = (0.0, 0.0, 0);
        for seed in 0..40 {
            let scene = generate_scene(&SimConfig::default(), seed).unwrap();
            let s = build_sample(&scene, &cfg, &net, LambdaMode::Fixed(0.5), None, seed).unwrap();
            for (p, q) in s.proposals.proposals_2d.iter().zip(&s.queries_2d) {
                let Some(g) = p.gt_index else { continue };
                let d = gt_camera_depth(&scene, p.camera, g);
                if d > 40.0 {
                    continue;
                }
                img += (q.image_depth - d).abs();
                fused += (q.fused_depth - d).abs();
                n += 1;
            }
        }
        assert!(n > 100);
        assert!(fused < img, "fused {} image {}", fused / n as f64, img / n as f64);
    }
}
