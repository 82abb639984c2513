//! GridMask generation, complementary image/LiDAR masking and the masking
//! ablation variants.
//!
//! A [`Mask`] lives on a camera's pixel grid with 1 meaning "image visible".
//! Under complementary masking the image keeps the 1-cells and LiDAR keeps
//! exactly the points that project onto 0-cells, so at every pixel one
//! modality survives.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project_point, Box2D, CameraModel};
use crate::rng::{rng_for, tag};
use crate::scenesim::LidarPoint;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    cells: Vec<bool>,
}

impl Mask {
    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            cells: vec![true; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            cells: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut cells = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                cells.push(f(r, c));
            }
        }
        Self { height, width, cells }
    }

    pub fn for_camera(cam: &CameraModel) -> Self {
        Self::ones(cam.height() as usize, cam.width() as usize)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.width + col]
    }

    pub fn matches(&self, cam: &CameraModel) -> bool {
        self.height == cam.height() as usize && self.width == cam.width() as usize
    }

    pub fn visible_count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    pub fn masked_fraction(&self) -> f64 {
        if self.cells.is_empty() {
            return 0.0;
        }
        1.0 - self.visible_count() as f64 / self.cells.len() as f64
    }

    /// Elementwise AND.
    pub fn and(&self, other: &Mask) -> Mask {
        debug_assert_eq!((self.height, self.width), (other.height, other.width));
        Mask {
            height: self.height,
            width: self.width,
            cells: self.cells.iter().zip(&other.cells).map(|(a, b)| *a && *b).collect(),
        }
    }

    pub fn complement(&self) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            cells: self.cells.iter().map(|c| !c).collect(),
        }
    }

    /// Visible fraction over the pixel cells whose centers lie inside `b`.
    /// Boxes too small to cover a cell center use the cell under their center.
    pub fn visible_fraction_in(&self, b: &Box2D) -> f64 {
        let c0 = (b.x_min - 0.5).ceil().max(0.0) as usize;
        let r0 = (b.y_min - 0.5).ceil().max(0.0) as usize;
        let c1 = ((b.x_max - 0.5).floor() as isize).min(self.width as isize - 1);
        let r1 = ((b.y_max - 0.5).floor() as isize).min(self.height as isize - 1);
        let (mut seen, mut visible) = (0usize, 0usize);
        if c1 >= c0 as isize && r1 >= r0 as isize {
            for r in r0..=r1 as usize {
                for c in c0..=c1 as usize {
                    seen += 1;
                    visible += self.get(r, c) as usize;
                }
            }
        }
        if seen == 0 {
            let center = b.center();
            let r = (center.y.floor().max(0.0) as usize).min(self.height.saturating_sub(1));
            let c = (center.x.floor().max(0.0) as usize).min(self.width.saturating_sub(1));
            return if self.get(r, c) { 1.0 } else { 0.0 };
        }
        visible as f64 / seen as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridParams {
    /// Inclusive range of the grid period in pixels.
    pub unit_min: usize,
    pub unit_max: usize,
    /// Expected unmasked fraction.
    pub keep_ratio: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            unit_min: 16,
            unit_max: 40,
            keep_ratio: 0.5,
        }
    }
}

impl GridParams {
    pub fn validate(&self) -> Result<()> {
        if self.unit_min == 0 || self.unit_min > self.unit_max {
            return Err(Error::InvalidConfig(format!(
                "grid unit range [{}, {}] is invalid",
                self.unit_min, self.unit_max
            )));
        }
        if !(self.keep_ratio > 0.0 && self.keep_ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!("keep ratio {} outside (0, 1]", self.keep_ratio)));
        }
        Ok(())
    }

    /// Side of the masked square inside each grid period.
    fn block_side(&self, unit: usize) -> usize {
        ((unit as f64) * (1.0 - self.keep_ratio).sqrt()).round() as usize
    }
}

struct GridDraw {
    unit: usize,
    block: usize,
    offset_r: usize,
    offset_c: usize,
}

fn draw_grid(h: usize, w: usize, params: &GridParams, rng: &mut impl Rng) -> Result<GridDraw> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidConfig(format!("mask size {h}x{w} is empty")));
    }
    params.validate()?;
    let unit = rng.random_range(params.unit_min..=params.unit_max);
    Ok(GridDraw {
        unit,
        block: params.block_side(unit).min(unit),
        offset_r: rng.random_range(0..unit),
        offset_c: rng.random_range(0..unit),
    })
}

/// Periodic grid of masked square blocks with a random period and phase.
pub fn gridmask(h: usize, w: usize, params: &GridParams, seed: u64) -> Result<Mask> {
    let mut rng = rng_for(seed, &[tag::MASK, 0]);
    let g = draw_grid(h, w, params, &mut rng)?;
    Ok(Mask::from_fn(h, w, |r, c| {
        !((r + g.offset_r) % g.unit < g.block && (c + g.offset_c) % g.unit < g.block)
    }))
}

/// Unstructured counterpart of [`gridmask`]: cells of the same period are
/// masked i.i.d. with the grid's expected masked fraction.
pub fn random_cell_mask(h: usize, w: usize, params: &GridParams, seed: u64) -> Result<Mask> {
    let mut rng = rng_for(seed, &[tag::MASK, 1]);
    let g = draw_grid(h, w, params, &mut rng)?;
    let p_mask = (g.block * g.block) as f64 / (g.unit * g.unit) as f64;
    let rows = (h + g.offset_r).div_ceil(g.unit);
    let cols = (w + g.offset_c).div_ceil(g.unit);
    let cell_masked: Vec<bool> = (0..rows * cols).map(|_| rng.random::<f64>() < p_mask).collect();
    Ok(Mask::from_fn(h, w, |r, c| {
        let cr = (r + g.offset_r) / g.unit;
        let cc = (c + g.offset_c) / g.unit;
        !cell_masked[cr * cols + cc]
    }))
}

/// Masking probability rising linearly from 0 at step 0 to `p_max` at
/// `total_steps`.
pub fn curriculum_prob(step: usize, total_steps: usize, p_max: f64) -> f64 {
    if total_steps == 0 {
        return p_max;
    }
    let step = step.min(total_steps);
    p_max * (step as f64 / total_steps as f64)
}

/// Zeroes masked image cells and keeps the points landing on masked cells.
/// Points that do not project into `cam` are kept unchanged.
pub fn apply_complementary(image: &Mask, points: &[LidarPoint], cam: &CameraModel, mask: &Mask) -> (Mask, Vec<LidarPoint>) {
    let masked_image = image.and(mask);
    let retained = points
        .iter()
        .filter(|p| match project_point(cam, &p.position).and_then(|proj| cam.pixel_cell(&proj.pixel)) {
            Some((r, c)) => !mask.get(r, c),
            None => true,
        })
        .copied()
        .collect();
    (masked_image, retained)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MaskKind {
    None,
    Modal,
    ConsistentGrid,
    ComplementaryGrid,
    ComplementaryRandom,
}

impl MaskKind {
    pub const ALL: [MaskKind; 5] = [
        MaskKind::None,
        MaskKind::Modal,
        MaskKind::ConsistentGrid,
        MaskKind::ComplementaryGrid,
        MaskKind::ComplementaryRandom,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MaskKind::None => "none",
            MaskKind::Modal => "modal",
            MaskKind::ConsistentGrid => "consistent_grid",
            MaskKind::ComplementaryGrid => "complementary_grid",
            MaskKind::ComplementaryRandom => "complementary_random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskPolicy {
    pub kind: MaskKind,
    pub grid: GridParams,
    pub p_max: f64,
    pub curriculum: bool,
    /// Keep LiDAR where the image is visible instead of where it is masked.
    pub invert_complement: bool,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        Self {
            kind: MaskKind::None,
            grid: GridParams::default(),
            p_max: 0.7,
            curriculum: true,
            invert_complement: false,
        }
    }
}

impl MaskPolicy {
    pub fn with_kind(kind: MaskKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_max) {
            return Err(Error::InvalidConfig(format!("p_max {} outside [0, 1]", self.p_max)));
        }
        self.grid.validate()
    }

    pub fn probability(&self, step: usize, total_steps: usize) -> f64 {
        if self.curriculum {
            curriculum_prob(step, total_steps, self.p_max)
        } else {
            self.p_max
        }
    }
}

/// Sensor data of one sample after augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedInputs {
    /// Per-camera image visibility (1 = pixel content present).
    pub images: Vec<Mask>,
    pub points: Vec<LidarPoint>,
    pub image_dropped: bool,
    pub lidar_dropped: bool,
    /// Whether a masking variant fired for this sample.
    pub applied: bool,
}

impl AugmentedInputs {
    pub fn untouched(cameras: &[CameraModel], points: &[LidarPoint]) -> Self {
        Self {
            images: cameras.iter().map(Mask::for_camera).collect(),
            points: points.to_vec(),
            image_dropped: false,
            lidar_dropped: false,
            applied: false,
        }
    }
}

/// Index of the first camera `p` projects into, with its pixel cell.
pub fn first_projection(cameras: &[CameraModel], p: &LidarPoint) -> Option<(usize, (usize, usize))> {
    cameras.iter().enumerate().find_map(|(ci, cam)| {
        project_point(cam, &p.position)
            .and_then(|proj| cam.pixel_cell(&proj.pixel))
            .map(|cell| (ci, cell))
    })
}

/// Applies `policy` to one sample. Deterministic in `(seed, step)`; callers
/// fold the sample index into `seed`.
pub fn apply_policy(
    cameras: &[CameraModel],
    points: &[LidarPoint],
    policy: &MaskPolicy,
    step: usize,
    total_steps: usize,
    seed: u64,
) -> Result<AugmentedInputs> {
    policy.validate()?;
    let mut out = AugmentedInputs::untouched(cameras, points);
    if policy.kind == MaskKind::None {
        return Ok(out);
    }
    let mut rng = rng_for(seed, &[tag::MASK, 2, step as u64]);
    if rng.random::<f64>() >= policy.probability(step, total_steps) {
        return Ok(out);
    }
    out.applied = true;
    let mask_seed = rng.random::<u64>();
    match policy.kind {
        MaskKind::None => unreachable!(),
        MaskKind::Modal => {
            if rng.random::<bool>() {
                out.images = cameras
                    .iter()
                    .map(|c| Mask::zeros(c.height() as usize, c.width() as usize))
                    .collect();
                out.image_dropped = true;
            } else {
                out.points.clear();
                out.lidar_dropped = true;
            }
        }
        MaskKind::ConsistentGrid | MaskKind::ComplementaryGrid | MaskKind::ComplementaryRandom => {
            let masks = cameras
                .iter()
                .enumerate()
                .map(|(ci, c)| {
                    let (h, w) = (c.height() as usize, c.width() as usize);
                    let s = crate::rng::derive_seed(mask_seed, &[ci as u64]);
                    if policy.kind == MaskKind::ComplementaryRandom {
                        random_cell_mask(h, w, &policy.grid, s)
                    } else {
                        gridmask(h, w, &policy.grid, s)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            // Consistent masking keeps points on visible cells, complementary
            // on masked cells.
            let keep_visible = match policy.kind {
                MaskKind::ConsistentGrid => true,
                _ => policy.invert_complement,
            };
            out.points = points
                .iter()
                .filter(|p| match first_projection(cameras, p) {
                    Some((ci, (r, c))) => masks[ci].get(r, c) == keep_visible,
                    None => true,
                })
                .copied()
                .collect();
            out.images = masks;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenesim::{generate_scene, SimConfig};
    use nalgebra::Vector3;

    #[test]
    fn keep_ratio_one_is_all_visible() {
        let m = gridmask(64, 96, &GridParams { keep_ratio: 1.0, ..GridParams::default() }, 3).unwrap();
        assert_eq!(m.masked_fraction(), 0.0);
        let p = GridParams {
            unit_min: 8,
            unit_max: 12,
            keep_ratio: 0.9999,
        };
        assert_eq!(gridmask(64, 96, &p, 3).unwrap().masked_fraction(), 0.0);
    }

    #[test]
    fn gridmask_masked_fraction() {
        let p = GridParams {
            unit_min: 32,
            unit_max: 32,
            keep_ratio: 0.5,
        };
        let mean: f64 = (0..100).map(|s| gridmask(128, 128, &p, s).unwrap().masked_fraction()).sum::<f64>() / 100.0;
        assert!((mean - 0.5).abs() <= 0.05, "{mean}");
        for s in 0..20 {
            let f = gridmask(128, 160, &GridParams::default(), s).unwrap().masked_fraction();
            assert!((f - 0.5).abs() <= 0.1, "{f}");
        }
    }

    #[test]
    fn gridmask_is_deterministic() {
        let p = GridParams::default();
        assert_eq!(gridmask(96, 160, &p, 5).unwrap(), gridmask(96, 160, &p, 5).unwrap());
        assert_ne!(gridmask(96, 160, &p, 5).unwrap(), gridmask(96, 160, &p, 6).unwrap());
    }

    #[test]
    fn degenerate_params_rejected() {
        assert!(gridmask(0, 10, &GridParams::default(), 0).is_err());
        assert!(gridmask(10, 10, &GridParams { keep_ratio: 0.0, ..GridParams::default() }, 0).is_err());
        assert!(gridmask(10, 10, &GridParams { unit_min: 0, ..GridParams::default() }, 0).is_err());
        assert!(gridmask(10, 10, &GridParams { unit_min: 9, unit_max: 4, keep_ratio: 0.5 }, 0).is_err());
    }

    #[test]
    fn random_cells_match_grid_budget() {
        let p = GridParams::default();
        let n = 300;
        let g: f64 = (0..n).map(|s| gridmask(96, 160, &p, s).unwrap().masked_fraction()).sum::<f64>() / n as f64;
        let r: f64 = (0..n).map(|s| random_cell_mask(96, 160, &p, s).unwrap().masked_fraction()).sum::<f64>() / n as f64;
        assert!((g - r).abs() < 0.03, "grid {g} random {r}");
    }

    #[test]
    fn curriculum_endpoints() {
        assert_eq!(curriculum_prob(0, 100, 0.7), 0.0);
        assert_eq!(curriculum_prob(100, 100, 0.7), 0.7);
        assert!((curriculum_prob(50, 100, 0.7) - 0.35).abs() < 1e-15);
        let mut prev = 0.0;
        for s in 0..=37 {
            let p = curriculum_prob(s, 37, 0.7);
            assert!(p >= prev);
            prev = p;
        }
    }

    fn scene_points() -> (CameraModel, Vec<LidarPoint>) {
        let s = generate_scene(&SimConfig::default(), 2).unwrap();
        (s.cameras[0].clone(), s.points)
    }

    #[test]
    fn all_ones_mask_drops_projectable_points() {
        let (cam, pts) = scene_points();
        let img = Mask::for_camera(&cam);
        let (out_img, kept) = apply_complementary(&img, &pts, &cam, &Mask::for_camera(&cam));
        assert_eq!(out_img, img);
        assert!(kept.iter().all(|p| project_point(&cam, &p.position).is_none()));
        assert!(kept.len() < pts.len());
    }

    #[test]
    fn all_zeros_mask_keeps_everything() {
        let (cam, pts) = scene_points();
        let zeros = Mask::zeros(cam.height() as usize, cam.width() as usize);
        let (out_img, kept) = apply_complementary(&Mask::for_camera(&cam), &pts, &cam, &zeros);
        assert_eq!(out_img.visible_count(), 0);
        assert_eq!(kept.len(), pts.len());
    }

    #[test]
    fn complementary_xor_per_point() {
        let (cam, pts) = scene_points();
        let mask = gridmask(cam.height() as usize, cam.width() as usize, &GridParams::default(), 77).unwrap();
        let (img, kept) = apply_complementary(&Mask::for_camera(&cam), &pts, &cam, &mask);
        for p in &pts {
            let Some(proj) = project_point(&cam, &p.position) else { continue };
            let (r, c) = cam.pixel_cell(&proj.pixel).unwrap();
            let retained = kept.contains(p);
            assert!(retained ^ img.get(r, c));
        }
    }

    #[test]
    fn none_policy_is_identity() {
        let s = generate_scene(&SimConfig::default(), 2).unwrap();
        let out = apply_policy(&s.cameras, &s.points, &MaskPolicy::default(), 10, 10, 1).unwrap();
        assert_eq!(out, AugmentedInputs::untouched(&s.cameras, &s.points));
    }

    #[test]
    fn consistent_with_zero_mask_empties_both() {
        let s = generate_scene(&SimConfig::default(), 2).unwrap();
        // keep ratio tiny with unit 1 masks every cell
        let policy = MaskPolicy {
            kind: MaskKind::ConsistentGrid,
            grid: GridParams {
                unit_min: 1,
                unit_max: 1,
                keep_ratio: 1e-9,
            },
            p_max: 1.0,
            curriculum: false,
            invert_complement: false,
        };
        let out = apply_policy(&s.cameras, &s.points, &policy, 0, 1, 4).unwrap();
        assert!(out.images.iter().all(|m| m.visible_count() == 0));
        assert!(out.points.iter().all(|p| first_projection(&s.cameras, p).is_none()));
    }

    #[test]
    fn complementary_policy_partitions_pixels() {
        let s = generate_scene(&SimConfig::default(), 5).unwrap();
        let policy = MaskPolicy {
            kind: MaskKind::ComplementaryGrid,
            p_max: 1.0,
            curriculum: false,
            ..MaskPolicy::default()
        };
        let out = apply_policy(&s.cameras, &s.points, &policy, 0, 1, 9).unwrap();
        assert!(out.applied);
        for p in &s.points {
            match first_projection(&s.cameras, p) {
                Some((ci, (r, c))) => assert!(out.points.contains(p) ^ out.images[ci].get(r, c)),
                None => assert!(out.points.contains(p)),
            }
        }
    }

    #[test]
    fn modal_never_drops_both() {
        let s = generate_scene(&SimConfig::default(), 5).unwrap();
        let policy = MaskPolicy {
            kind: MaskKind::Modal,
            p_max: 1.0,
            curriculum: false,
            ..MaskPolicy::default()
        };
        let (mut img, mut lid) = (0, 0);
        for seed in 0..200 {
            let out = apply_policy(&s.cameras, &s.points, &policy, 0, 1, seed).unwrap();
            assert!(!(out.image_dropped && out.lidar_dropped));
            img += out.image_dropped as usize;
            lid += out.lidar_dropped as usize;
        }
        assert!(img > 60 && lid > 60);
    }

    #[test]
    fn curriculum_never_fires_at_step_zero() {
        let s = generate_scene(&SimConfig::default(), 5).unwrap();
        let policy = MaskPolicy::with_kind(MaskKind::ComplementaryGrid);
        for seed in 0..50 {
            assert!(!apply_policy(&s.cameras, &s.points, &policy, 0, 100, seed).unwrap().applied);
        }
    }

    #[test]
    fn visible_fraction_in_box() {
        let m = Mask::from_fn(10, 10, |_, c| c < 5);
        let b = Box2D::new(0.0, 0.0, 10.0, 10.0, 1.0, 0).unwrap();
        assert_eq!(m.visible_fraction_in(&b), 0.5);
        let tiny = Box2D::new(7.1, 3.1, 7.2, 3.2, 1.0, 0).unwrap();
        assert_eq!(m.visible_fraction_in(&tiny), 0.0);
        let _ = Vector3::<f64>::zeros();
    }
}
