//! Seeded synthetic multi-modal scenes and parametric domain shift.
//!
//! A scene is an ego-centric world: ground-truth boxes resting on the z = 0
//! ground plane, a LiDAR sweep from a sensor above the origin, and a ring of
//! outward-facing pinhole cameras. Everything is a pure function of
//! `(SimConfig, seed)`; all floats are rounded to nine significant digits at
//! creation so that the line-delimited JSON format round-trips exactly.

mod dataset;
mod proposals;

pub use dataset::{read_dataset, write_dataset};
pub use proposals::{simulate_proposals, simulate_proposals_with, Proposal2D, Proposal3D, ProposalNoise, ProposalSet, SensorView};

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Box3D, CameraModel};
use crate::rng::{rng_for, tag};

pub const NUM_CLASSES: usize = 3;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["car", "pedestrian", "large_vehicle"];
/// Mean (length, width, height) per class in meters.
pub const CLASS_MEAN_SIZE: [[f64; 3]; NUM_CLASSES] = [[4.5, 1.9, 1.6], [0.8, 0.7, 1.75], [10.0, 2.8, 3.4]];

/// Rounds to nine significant digits, the precision of the dataset format.
pub fn quantize(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

fn quantize_vec(v: &Vector3<f64>) -> Vector3<f64> {
    v.map(quantize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainName {
    Source,
    Rain,
    Night,
    Geo,
}

impl DomainName {
    pub const ALL: [DomainName; 4] = [DomainName::Source, DomainName::Rain, DomainName::Night, DomainName::Geo];

    pub fn as_str(&self) -> &'static str {
        match self {
            DomainName::Source => "source",
            DomainName::Rain => "rain",
            DomainName::Night => "night",
            DomainName::Geo => "geo",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainTag {
    pub name: DomainName,
    pub severity: f64,
}

impl DomainTag {
    pub fn new(name: DomainName, severity: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&severity) {
            return Err(Error::InvalidConfig(format!("domain severity {severity} outside [0, 1]")));
        }
        Ok(Self { name, severity })
    }

    pub fn source() -> Self {
        Self {
            name: DomainName::Source,
            severity: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub position: Vector3<f64>,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub gt_boxes: Vec<Box3D>,
    pub points: Vec<LidarPoint>,
    pub cameras: Vec<CameraModel>,
    pub domain: DomainTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Inclusive range of objects per scene.
    pub n_objects: [usize; 2],
    pub class_weights: [f64; NUM_CLASSES],
    /// Inclusive range of the per-object LiDAR ray budget at close range.
    pub rays_per_object: [usize; 2],
    /// Range (m) below which an object receives its full ray budget; the
    /// budget falls off with the square of range beyond it.
    pub full_density_range: f64,
    /// Gaussian point noise sigma in meters.
    pub point_noise: f64,
    pub clutter_points: usize,
    pub camera_count: usize,
    pub camera_height: f64,
    pub lidar_height: f64,
    pub image_height: u32,
    pub image_width: u32,
    pub scene_radius: f64,
    pub min_object_range: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_objects: [4, 10],
            class_weights: [0.6, 0.25, 0.15],
            rays_per_object: [80, 160],
            full_density_range: 12.0,
            point_noise: 0.03,
            clutter_points: 600,
            camera_count: 4,
            camera_height: 1.6,
            lidar_height: 1.8,
            image_height: 96,
            image_width: 160,
            scene_radius: 40.0,
            min_object_range: 4.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_objects[0] > self.n_objects[1] {
            return bad("n_objects range is empty");
        }
        if self.rays_per_object[0] > self.rays_per_object[1] {
            return bad("rays_per_object range is empty");
        }
        if self.class_weights.iter().any(|w| !(*w >= 0.0)) || self.class_weights.iter().sum::<f64>() <= 0.0 {
            return bad("class_weights must be non-negative with a positive sum");
        }
        if !(self.point_noise >= 0.0) {
            return bad("point_noise must be >= 0");
        }
        if self.camera_count < 2 {
            return bad("camera_count must be at least 2");
        }
        if self.image_height == 0 || self.image_width == 0 {
            return bad("image size must be positive");
        }
        if !(self.scene_radius > self.min_object_range && self.min_object_range > 0.0) {
            return bad("need 0 < min_object_range < scene_radius");
        }
        if !(self.full_density_range > 0.0) {
            return bad("full_density_range must be positive");
        }
        Ok(())
    }

    /// Outward-facing ring of cameras. The focal length makes adjacent
    /// horizontal fields of view meet exactly, so every point in the
    /// horizontal plane falls into at most one camera.
    pub fn camera_rig(&self) -> Result<Vec<CameraModel>> {
        let n = self.camera_count as f64;
        let focal = 0.5 * self.image_width as f64 / (std::f64::consts::PI / n).tan();
        (0..self.camera_count)
            .map(|i| {
                let yaw = 2.0 * std::f64::consts::PI * i as f64 / n;
                let cam = CameraModel::looking_along(
                    yaw,
                    Vector3::new(0.0, 0.0, self.camera_height),
                    quantize(focal),
                    self.image_height,
                    self.image_width,
                )?;
                CameraModel::new(
                    cam.intrinsics().map(quantize),
                    cam.rotation().map(quantize),
                    cam.translation().map(quantize),
                    cam.height(),
                    cam.width(),
                )
            })
            .collect()
    }

    pub fn lidar_origin(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, self.lidar_height)
    }
}

fn sample_class(rng: &mut impl Rng, weights: &[f64; NUM_CLASSES]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    NUM_CLASSES - 1
}

/// Uniform sample on the surface of `b`, faces weighted by area.
fn sample_on_surface(rng: &mut impl Rng, b: &Box3D) -> Vector3<f64> {
    let (l, w, h) = (b.size.x, b.size.y, b.size.z);
    let areas = [w * h, l * h, l * w];
    let total = 2.0 * areas.iter().sum::<f64>();
    let mut u = rng.random::<f64>() * total;
    let mut axis = 2;
    for (i, a) in areas.iter().enumerate() {
        if u < 2.0 * a {
            axis = i;
            break;
        }
        u -= 2.0 * a;
    }
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let mut local = Vector3::new(
        (rng.random::<f64>() - 0.5) * l,
        (rng.random::<f64>() - 0.5) * w,
        (rng.random::<f64>() - 0.5) * h,
    );
    local[axis] = sign * 0.5 * b.size[axis];
    b.to_world(&local)
}

/// Number of LiDAR returns an object receives from a given ray budget.
fn object_point_count(cfg: &SimConfig, budget: usize, b: &Box3D) -> usize {
    if budget == 0 {
        return 0;
    }
    let range = b.center.xy().norm();
    let falloff = (cfg.full_density_range / range).powi(2).clamp(0.05, 1.0);
    let size_factor = ((b.size.x.max(b.size.y) * b.size.z) / (4.5 * 1.6)).sqrt().clamp(0.3, 2.0);
    ((budget as f64 * falloff * size_factor).round() as usize).max(1)
}

/// Deterministic scene for `(cfg, seed)`.
pub fn generate_scene(cfg: &SimConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = rng_for(seed, &[tag::SCENE]);
    let n_objects = rng.random_range(cfg.n_objects[0]..=cfg.n_objects[1]);
    let size_noise = Normal::new(0.0, 0.08).expect("valid sigma");
    let r_max = 0.95 * cfg.scene_radius;

    let mut gt_boxes: Vec<Box3D> = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        for _attempt in 0..50 {
            let cls = sample_class(&mut rng, &cfg.class_weights);
            let mean = CLASS_MEAN_SIZE[cls];
            let size = Vector3::from_fn(|i, _| mean[i] * (1.0_f64 + size_noise.sample(&mut rng)).clamp(0.75, 1.25));
            let range = (rng.random_range(cfg.min_object_range.powi(2)..r_max.powi(2))).sqrt();
            let bearing = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let center = Vector3::new(range * bearing.cos(), range * bearing.sin(), 0.5 * size.z);
            let candidate = Box3D::new(quantize_vec(&center), quantize_vec(&size), quantize(yaw), 1.0, cls)?;
            let radius = |b: &Box3D| 0.5 * b.size.x.hypot(b.size.y);
            if gt_boxes
                .iter()
                .all(|o| o.bev_distance(&candidate) > radius(o) + radius(&candidate) + 0.2)
            {
                gt_boxes.push(candidate);
                break;
            }
        }
    }

    let noise = if cfg.point_noise > 0.0 {
        Some(Normal::new(0.0, cfg.point_noise).expect("valid sigma"))
    } else {
        None
    };
    let mut points = Vec::new();
    for b in &gt_boxes {
        let budget = rng.random_range(cfg.rays_per_object[0]..=cfg.rays_per_object[1]);
        let count = object_point_count(cfg, budget, b);
        let reflectivity = rng.random_range(0.3..0.9);
        for _ in 0..count {
            let mut p = sample_on_surface(&mut rng, b);
            if let Some(n) = &noise {
                p += Vector3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng));
            }
            let intensity: f64 = (reflectivity + rng.random_range(-0.05_f64..0.05)).clamp(0.0, 1.0);
            points.push(LidarPoint {
                position: quantize_vec(&p),
                intensity: quantize(intensity),
            });
        }
    }
    let clutter_radius = 1.1 * cfg.scene_radius;
    for _ in 0..cfg.clutter_points {
        let r = clutter_radius * rng.random::<f64>().sqrt();
        let a = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let z = noise.as_ref().map_or(0.0, |n| n.sample(&mut rng));
        points.push(LidarPoint {
            position: quantize_vec(&Vector3::new(r * a.cos(), r * a.sin(), z)),
            intensity: quantize(rng.random_range(0.0..0.3)),
        });
    }

    Ok(Scene {
        id: format!("scene-{seed:016x}"),
        gt_boxes,
        points,
        cameras: cfg.camera_rig()?,
        domain: DomainTag::source(),
    })
}

/// Parameters of the domain corruptions. These stand in for real weather and
/// geography and are free parameters of the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionModel {
    /// Range at which rain dropout saturates.
    pub rain_max_range: f64,
    /// Lower clamp on the normalized range in the dropout curve.
    pub rain_floor: f64,
    /// Rain range-jitter sigma (m) at severity 1.
    pub rain_range_jitter: f64,
    /// Relative growth of vehicle sizes at severity 1 (Geo).
    pub geo_size_gain: f64,
    /// Fraction of clutter returns removed at severity 1 (Geo).
    pub geo_clutter_drop: f64,
    pub lidar_height: f64,
}

impl Default for CorruptionModel {
    fn default() -> Self {
        Self {
            rain_max_range: 40.0,
            rain_floor: 0.1,
            rain_range_jitter: 0.1,
            geo_size_gain: 0.2,
            geo_clutter_drop: 0.5,
            lidar_height: 1.8,
        }
    }
}

impl CorruptionModel {
    /// Probability that rain removes a return at range `r`.
    pub fn rain_drop_probability(&self, range: f64, severity: f64) -> f64 {
        severity * (range / self.rain_max_range).clamp(self.rain_floor, 1.0)
    }
}

pub fn apply_domain(scene: &Scene, tag: DomainTag, seed: u64) -> Scene {
    apply_domain_with(&CorruptionModel::default(), scene, tag, seed)
}

pub fn apply_domain_with(model: &CorruptionModel, scene: &Scene, domain: DomainTag, seed: u64) -> Scene {
    let mut out = scene.clone();
    out.domain = domain;
    if domain.severity == 0.0 {
        return out;
    }
    let mut rng = rng_for(seed, &[tag::DOMAIN, domain.name as u64]);
    let sev = domain.severity;
    match domain.name {
        DomainName::Source | DomainName::Night => {}
        DomainName::Rain => {
            let origin = Vector3::new(0.0, 0.0, model.lidar_height);
            let jitter = Normal::new(0.0, (model.rain_range_jitter * sev).max(1e-12)).expect("valid sigma");
            out.points = scene
                .points
                .iter()
                .filter_map(|p| {
                    let ray = p.position - origin;
                    let range = ray.norm();
                    let keep = rng.random::<f64>() >= model.rain_drop_probability(range, sev);
                    let dr = jitter.sample(&mut rng);
                    if !keep || range == 0.0 {
                        return keep.then_some(*p);
                    }
                    let moved = origin + ray * ((range + dr) / range);
                    Some(LidarPoint {
                        position: quantize_vec(&moved),
                        intensity: p.intensity,
                    })
                })
                .collect();
        }
        DomainName::Geo => {
            let factor = 1.0 + model.geo_size_gain * sev;
            let mut owner: Vec<Option<usize>> = vec![None; scene.points.len()];
            for (pi, p) in scene.points.iter().enumerate() {
                owner[pi] = scene.gt_boxes.iter().position(|b| b.contains(&p.position, 0.15));
            }
            let mut new_boxes = scene.gt_boxes.clone();
            for b in new_boxes.iter_mut() {
                // Pedestrians keep their size; vehicles grow.
                if b.class_id != 1 {
                    b.size = quantize_vec(&(b.size * factor));
                    b.center.z = quantize(0.5 * b.size.z);
                }
            }
            out.points = scene
                .points
                .iter()
                .zip(owner)
                .filter_map(|(p, own)| match own {
                    Some(bi) => {
                        let local = scene.gt_boxes[bi].to_local(&p.position);
                        let scale = new_boxes[bi].size.component_div(&scene.gt_boxes[bi].size);
                        let moved = new_boxes[bi].to_world(&local.component_mul(&scale));
                        Some(LidarPoint {
                            position: quantize_vec(&moved),
                            intensity: p.intensity,
                        })
                    }
                    None => (rng.random::<f64>() >= model.geo_clutter_drop * sev).then_some(*p),
                })
                .collect();
            out.gt_boxes = new_boxes;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_generation() {
        let cfg = SimConfig::default();
        let a = generate_scene(&cfg, 7).unwrap();
        let b = generate_scene(&cfg, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_scene(&cfg, 8).unwrap());
    }

    #[test]
    fn zero_objects_gives_only_clutter() {
        let cfg = SimConfig {
            n_objects: [0, 0],
            ..SimConfig::default()
        };
        let s = generate_scene(&cfg, 3).unwrap();
        assert!(s.gt_boxes.is_empty());
        assert_eq!(s.points.len(), cfg.clutter_points);
        assert!(s.points.iter().all(|p| p.position.z.abs() < 0.5));
    }

    #[test]
    fn noiseless_points_lie_on_surface() {
        let cfg = SimConfig {
            n_objects: [1, 1],
            rays_per_object: [100, 100],
            full_density_range: 100.0,
            point_noise: 0.0,
            clutter_points: 0,
            ..SimConfig::default()
        };
        let s = generate_scene(&cfg, 21).unwrap();
        assert_eq!(s.gt_boxes.len(), 1);
        let b = &s.gt_boxes[0];
        assert!(s.points.len() >= 30);
        for p in &s.points {
            // Nine-digit quantization of coordinates up to ~40 m.
            assert!(b.surface_distance(&p.position) < 1e-6, "{}", b.surface_distance(&p.position));
        }
    }

    #[test]
    fn noiseless_points_on_surface_before_quantization() {
        let cfg = SimConfig::default();
        let mut rng = rng_for(5, &[]);
        let b = Box3D::new(Vector3::new(10.0, 3.0, 0.8), Vector3::new(4.5, 1.9, 1.6), 0.7, 1.0, 0).unwrap();
        for _ in 0..100 {
            let p = sample_on_surface(&mut rng, &b);
            assert!(b.surface_distance(&p) < 1e-9);
        }
        assert!(object_point_count(&cfg, 1, &b) >= 1);
    }

    #[test]
    fn boxes_within_radius_and_every_box_has_points() {
        let cfg = SimConfig::default();
        for seed in 0..20 {
            let s = generate_scene(&cfg, seed).unwrap();
            for b in &s.gt_boxes {
                assert!(b.center.xy().norm() <= cfg.scene_radius);
                assert!(s.points.iter().any(|p| b.contains(&p.position, 0.2)));
            }
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SimConfig {
            n_objects: [5, 2],
            ..SimConfig::default()
        };
        assert!(generate_scene(&cfg, 0).is_err());
        let cfg = SimConfig {
            point_noise: -1.0,
            ..SimConfig::default()
        };
        assert!(generate_scene(&cfg, 0).is_err());
    }

    #[test]
    fn zero_severity_only_retags() {
        let s = generate_scene(&SimConfig::default(), 1).unwrap();
        for name in DomainName::ALL {
            let t = DomainTag::new(name, 0.0).unwrap();
            let c = apply_domain(&s, t, 9);
            assert_eq!(c.points, s.points);
            assert_eq!(c.gt_boxes, s.gt_boxes);
            assert_eq!(c.domain, t);
        }
    }

    #[test]
    fn night_keeps_points_and_cameras() {
        let s = generate_scene(&SimConfig::default(), 1).unwrap();
        let n = apply_domain(&s, DomainTag::new(DomainName::Night, 1.0).unwrap(), 4);
        assert_eq!(n.points, s.points);
        assert_eq!(n.cameras, s.cameras);
    }

    fn ring_scene(range: f64, n: usize) -> Scene {
        let cfg = SimConfig::default();
        let points = (0..n)
            .map(|i| {
                let a = i as f64 * 0.001;
                LidarPoint {
                    position: Vector3::new(range * a.cos(), range * a.sin(), 1.8),
                    intensity: 0.5,
                }
            })
            .collect();
        Scene {
            id: "ring".into(),
            gt_boxes: vec![],
            points,
            cameras: cfg.camera_rig().unwrap(),
            domain: DomainTag::source(),
        }
    }

    // Binomial 4-sigma band at n = 10^4.
    fn assert_rate(observed: usize, n: usize, p: f64) {
        let rate = observed as f64 / n as f64;
        let band = 4.0 * (p * (1.0 - p) / n as f64).sqrt() + 1e-12;
        assert!((rate - p).abs() <= band, "rate {rate} vs {p} +- {band}");
    }

    #[test]
    fn rain_survival_matches_closed_form() {
        let model = CorruptionModel::default();
        let n = 10_000;
        // At max range and severity 1 the dropout curve saturates.
        let far = ring_scene(model.rain_max_range, n);
        let out = apply_domain(&far, DomainTag::new(DomainName::Rain, 1.0).unwrap(), 3);
        assert_rate(out.points.len(), n, 1.0 - model.rain_drop_probability(40.0, 1.0));
        assert_eq!(out.points.len(), 0);
        // Near range sits on the floor of the curve.
        let near = ring_scene(2.0, n);
        let out = apply_domain(&near, DomainTag::new(DomainName::Rain, 1.0).unwrap(), 3);
        assert_rate(out.points.len(), n, 1.0 - model.rain_floor);
        let mid = ring_scene(20.0, n);
        let out = apply_domain(&mid, DomainTag::new(DomainName::Rain, 0.6).unwrap(), 3);
        assert_rate(out.points.len(), n, 1.0 - 0.6 * 0.5);
        assert_eq!(out.cameras, mid.cameras);
    }

    #[test]
    fn rain_dropout_is_monotone() {
        let model = CorruptionModel::default();
        let mut prev_r = 0.0;
        for i in 0..200 {
            let r = i as f64 * 0.3;
            let mut prev_s = 0.0;
            for j in 0..=10 {
                let s = j as f64 / 10.0;
                let p = model.rain_drop_probability(r, s);
                assert!(p >= prev_s);
                prev_s = p;
            }
            let p = model.rain_drop_probability(r, 0.7);
            assert!(p >= prev_r);
            prev_r = p;
        }
    }

    #[test]
    fn geo_grows_vehicles_and_moves_their_points() {
        let s = generate_scene(&SimConfig::default(), 12).unwrap();
        let g = apply_domain(&s, DomainTag::new(DomainName::Geo, 1.0).unwrap(), 2);
        assert_eq!(g.gt_boxes.len(), s.gt_boxes.len());
        for (a, b) in s.gt_boxes.iter().zip(&g.gt_boxes) {
            if a.class_id == 1 {
                assert_eq!(a.size, b.size);
            } else {
                assert!(b.size.x > a.size.x);
            }
            assert!(g.points.iter().any(|p| b.contains(&p.position, 0.3)));
        }
        assert!(g.points.len() < s.points.len());
        assert_eq!(g.cameras, s.cameras);
    }

    #[test]
    fn rig_partitions_the_horizon() {
        let cfg = SimConfig::default();
        let rig = cfg.camera_rig().unwrap();
        for i in 0..3600 {
            let a = i as f64 * std::f64::consts::PI / 1800.0 + 1e-7;
            let p = Vector3::new(20.0 * a.cos(), 20.0 * a.sin(), 1.0);
            let hits = rig.iter().filter(|c| crate::geometry::project_point(c, &p).is_some()).count();
            assert_eq!(hits, 1, "angle {a}");
        }
    }

    #[test]
    fn quantize_is_idempotent() {
        for x in [1.0 / 3.0, 12345.678901234, -0.000123456789123, 40.0] {
            let q = quantize(x);
            assert_eq!(quantize(q), q);
            assert!((q - x).abs() <= 1e-8 * x.abs());
        }
    }
}
