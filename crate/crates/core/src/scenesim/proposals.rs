//! Stand-in 2D and 3D proposal generators.
//!
//! Proposals are derived from ground truth with seeded noise. Detection of an
//! object depends on what the sensors actually see: a 2D proposal needs
//! enough unmasked image area, a 3D proposal needs LiDAR returns on the
//! object. All random draws for an object are keyed by the object index, so a
//! masked and an unmasked view of the same scene share their noise and differ
//! only in what is detectable.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{LidarPoint, Scene, CLASS_MEAN_SIZE, NUM_CLASSES};
use crate::geometry::{project_box3d, Box2D, Box3D};
use crate::masking::Mask;
use crate::rng::{rng_for, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalNoise {
    pub recall_2d: f64,
    pub recall_3d: f64,
    /// Mean number of false positives per camera image.
    pub fp_per_camera: f64,
    /// Mean number of false-positive 3D boxes per scene.
    pub fp_per_scene: f64,
    /// Edge jitter as a fraction of the box extent.
    pub box2d_jitter: f64,
    /// Base horizontal center sigma (m) for 3D proposals.
    pub center3d_sigma: f64,
    /// Center sigma grows as `1 + gain / sqrt(1 + n_points)`.
    pub sparse_center_gain: f64,
    pub size3d_jitter: f64,
    pub yaw_sigma: f64,
    /// Point count at which 3D detection probability reaches `1 - 1/e` of
    /// `recall_3d`. Zero makes 3D detection independent of point count.
    pub points_half_saturation: f64,
    /// Minimum unmasked fraction of a projected box for a 2D detection.
    pub min_visible_fraction: f64,
    /// Minimum clipped box extent in pixels.
    pub min_box_pixels: f64,
    pub class_confusion_2d: f64,
    pub class_confusion_3d: f64,
}

impl Default for ProposalNoise {
    /// LiDAR-favoring setting: 3D centers are accurate to decimeters while
    /// image proposals carry no depth at all.
    fn default() -> Self {
        Self {
            recall_2d: 0.95,
            recall_3d: 0.97,
            fp_per_camera: 0.5,
            fp_per_scene: 2.0,
            box2d_jitter: 0.04,
            center3d_sigma: 0.12,
            sparse_center_gain: 3.0,
            size3d_jitter: 0.05,
            yaw_sigma: 0.1,
            points_half_saturation: 6.0,
            min_visible_fraction: 0.35,
            min_box_pixels: 2.0,
            class_confusion_2d: 0.05,
            class_confusion_3d: 0.05,
        }
    }
}

impl ProposalNoise {
    /// No jitter, no false positives, perfect recall, no point dependence.
    pub fn exact() -> Self {
        Self {
            recall_2d: 1.0,
            recall_3d: 1.0,
            fp_per_camera: 0.0,
            fp_per_scene: 0.0,
            box2d_jitter: 0.0,
            center3d_sigma: 0.0,
            sparse_center_gain: 0.0,
            size3d_jitter: 0.0,
            yaw_sigma: 0.0,
            points_half_saturation: 0.0,
            min_visible_fraction: 0.0,
            min_box_pixels: 0.0,
            class_confusion_2d: 0.0,
            class_confusion_3d: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal2D {
    pub camera: usize,
    pub bbox: Box2D,
    /// Ground-truth object this proposal was derived from; `None` for false
    /// positives.
    pub gt_index: Option<usize>,
    /// Unmasked fraction of the box area.
    pub visible_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal3D {
    pub bbox: Box3D,
    pub gt_index: Option<usize>,
    pub num_points: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProposalSet {
    pub proposals_2d: Vec<Proposal2D>,
    pub proposals_3d: Vec<Proposal3D>,
}

impl ProposalSet {
    /// 2D boxes grouped by camera.
    pub fn boxes_2d_per_camera(&self, n_cameras: usize) -> Vec<Vec<Box2D>> {
        let mut out = vec![Vec::new(); n_cameras];
        for p in &self.proposals_2d {
            out[p.camera].push(p.bbox);
        }
        out
    }

    pub fn boxes_3d(&self) -> Vec<Box3D> {
        self.proposals_3d.iter().map(|p| p.bbox).collect()
    }
}

/// What the sensors deliver for one sample: a (possibly filtered) point cloud
/// and an optional per-camera visibility mask.
#[derive(Debug, Clone, Copy)]
pub struct SensorView<'a> {
    pub points: &'a [LidarPoint],
    pub visibility: Option<&'a [Mask]>,
    /// When set, every image is blank and no 2D proposal survives.
    pub image_dropped: bool,
}

impl<'a> SensorView<'a> {
    pub fn unmasked(scene: &'a Scene) -> Self {
        Self {
            points: &scene.points,
            visibility: None,
            image_dropped: false,
        }
    }
}

pub fn simulate_proposals(scene: &Scene, noise: &ProposalNoise, seed: u64) -> ProposalSet {
    simulate_proposals_with(scene, SensorView::unmasked(scene), noise, seed)
}

fn confuse(rng: &mut impl Rng, cls: usize, p: f64) -> usize {
    if rng.random::<f64>() < p {
        (cls + rng.random_range(1..NUM_CLASSES)) % NUM_CLASSES
    } else {
        cls
    }
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma.max(0.0)).expect("finite sigma")
}

pub fn simulate_proposals_with(scene: &Scene, view: SensorView<'_>, noise: &ProposalNoise, seed: u64) -> ProposalSet {
    let mut out = ProposalSet::default();

    for (ci, cam) in scene.cameras.iter().enumerate() {
        let (w, h) = (cam.width() as f64, cam.height() as f64);
        for (gi, gt) in scene.gt_boxes.iter().enumerate() {
            // Draw everything up front so masking never shifts the stream.
            let mut rng = rng_for(seed, &[tag::PROPOSAL_2D, ci as u64, gi as u64]);
            let u_detect: f64 = rng.random();
            let n = normal(noise.box2d_jitter);
            let jit: [f64; 4] = [n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng)];
            let u_score: f64 = rng.random();
            let cls = confuse(&mut rng, gt.class_id, noise.class_confusion_2d);

            let Some(proj) = project_box3d(cam, gt) else { continue };
            if proj.width() < noise.min_box_pixels || proj.height() < noise.min_box_pixels {
                continue;
            }
            let visible = if view.image_dropped {
                0.0
            } else {
                view.visibility.map_or(1.0, |m| m[ci].visible_fraction_in(&proj))
            };
            if visible <= 0.0 || visible < noise.min_visible_fraction || u_detect >= noise.recall_2d {
                continue;
            }
            let (bw, bh) = (proj.width(), proj.height());
            let x0 = (proj.x_min + jit[0] * bw).clamp(0.0, w);
            let y0 = (proj.y_min + jit[1] * bh).clamp(0.0, h);
            let x1 = (proj.x_max + jit[2] * bw).clamp(0.0, w);
            let y1 = (proj.y_max + jit[3] * bh).clamp(0.0, h);
            let score = ((0.6 + 0.4 * u_score) * visible).clamp(0.0, 1.0);
            if let Ok(bbox) = Box2D::new(x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1), score, cls) {
                out.proposals_2d.push(Proposal2D {
                    camera: ci,
                    bbox,
                    gt_index: Some(gi),
                    visible_fraction: visible,
                });
            }
        }

        if noise.fp_per_camera > 0.0 && !view.image_dropped {
            let mut rng = rng_for(seed, &[tag::FALSE_POS_2D, ci as u64]);
            let count = Poisson::new(noise.fp_per_camera).expect("positive rate").sample(&mut rng) as usize;
            for _ in 0..count {
                let bw = rng.random_range(6.0..30.0);
                let bh = rng.random_range(6.0..30.0);
                let cx = rng.random_range(0.0..w);
                let cy = rng.random_range(0.25 * h..0.75 * h);
                let score = rng.random_range(0.1..0.6);
                let cls = rng.random_range(0..NUM_CLASSES);
                let x0 = (cx - bw / 2.0).max(0.0);
                let y0 = (cy - bh / 2.0).max(0.0);
                let x1 = (cx + bw / 2.0).min(w);
                let y1 = (cy + bh / 2.0).min(h);
                let Ok(bbox) = Box2D::new(x0, y0, x1, y1, score, cls) else { continue };
                let visible = view.visibility.map_or(1.0, |m| m[ci].visible_fraction_in(&bbox));
                if visible < noise.min_visible_fraction.max(1e-12) {
                    continue;
                }
                out.proposals_2d.push(Proposal2D {
                    camera: ci,
                    bbox,
                    gt_index: None,
                    visible_fraction: visible,
                });
            }
        }
    }

    for (gi, gt) in scene.gt_boxes.iter().enumerate() {
        let mut rng = rng_for(seed, &[tag::PROPOSAL_3D, gi as u64]);
        let u_detect: f64 = rng.random();
        let std = normal(1.0);
        let eps: [f64; 6] = std::array::from_fn(|_| std.sample(&mut rng));
        let cls = confuse(&mut rng, gt.class_id, noise.class_confusion_3d);

        let n_points = view.points.iter().filter(|p| gt.contains(&p.position, 0.2)).count();
        let p_detect = if noise.points_half_saturation > 0.0 {
            noise.recall_3d * (1.0 - (-(n_points as f64) / noise.points_half_saturation).exp())
        } else {
            noise.recall_3d
        };
        if u_detect >= p_detect {
            continue;
        }
        let sigma = noise.center3d_sigma * (1.0 + noise.sparse_center_gain / (1.0 + n_points as f64).sqrt());
        let center = gt.center + Vector3::new(sigma * eps[0], sigma * eps[1], 0.5 * sigma * eps[2]);
        let size = gt.size * (1.0 + noise.size3d_jitter * eps[3]).clamp(0.5, 1.5);
        let yaw = gt.yaw + noise.yaw_sigma * eps[4];
        let density = 1.0 - (-(n_points as f64) / 20.0).exp();
        let score = (0.45 + 0.5 * density + 0.03 * eps[5]).clamp(0.0, 1.0);
        if let Ok(bbox) = Box3D::new(center, size, yaw, score, cls) {
            out.proposals_3d.push(Proposal3D {
                bbox,
                gt_index: Some(gi),
                num_points: n_points,
            });
        }
    }

    if noise.fp_per_scene > 0.0 {
        let mut rng = rng_for(seed, &[tag::FALSE_POS_3D]);
        let count = Poisson::new(noise.fp_per_scene).expect("positive rate").sample(&mut rng) as usize;
        let radius = scene.gt_boxes.iter().map(|b| b.center.xy().norm()).fold(30.0, f64::max);
        for _ in 0..count {
            let cls = rng.random_range(0..NUM_CLASSES);
            let mean = CLASS_MEAN_SIZE[cls];
            let r = radius * rng.random::<f64>().sqrt();
            let a = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let size = Vector3::new(mean[0], mean[1], mean[2]);
            let center = Vector3::new(r * a.cos(), r * a.sin(), 0.5 * mean[2]);
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let score = rng.random_range(0.05..0.45);
            let n_points = view.points.iter().filter(|p| {
                (p.position.xy() - center.xy()).norm() < 0.5 * size.x
            }).count();
            if let Ok(bbox) = Box3D::new(center, size, yaw, score, cls) {
                out.proposals_3d.push(Proposal3D {
                    bbox,
                    gt_index: None,
                    num_points: n_points,
                });
            }
        }
    }
    out
}
