//! Query construction: content embeddings and reference points for image-
//! and LiDAR-originated queries.

use nalgebra::Vector3;

use super::{expected_depth, fuse_distributions, lidar_depth_histogram, ConfidenceNet, DepthBins, DepthDistribution, LambdaMode};
use crate::error::Result;
use crate::geometry::{backproject, frustum_contains, project_point, Box2D, Box3D, CameraModel};
use crate::scenesim::{LidarPoint, NUM_CLASSES};

/// Width of every query content vector.
pub const QUERY_DIM: usize = 16;

/// Number of depth-distribution moments in a 2D query's content.
const DEPTH_MOMENTS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Query2D {
    pub content: [f64; QUERY_DIM],
    pub ref_point: Vector3<f64>,
    pub source_box: Box2D,
    pub camera_index: usize,
    /// Fused depth distribution that placed `ref_point`.
    pub depth_dist: DepthDistribution,
    pub image_dist: DepthDistribution,
    pub lidar_dist: DepthDistribution,
    pub lambda: f64,
    /// Expected depth of the image-only distribution.
    pub image_depth: f64,
    /// Expected depth of the fused distribution.
    pub fused_depth: f64,
    pub frustum_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query3D {
    pub content: [f64; QUERY_DIM],
    pub ref_point: Vector3<f64>,
    pub source_box: Box3D,
}

fn one_hot_class(out: &mut [f64], class_id: usize) {
    if class_id < NUM_CLASSES {
        out[class_id] = 1.0;
    }
}

/// `[score, class one-hot, cx/W, cy/H, w/W, h/H, first 8 moments of the
/// depth distribution over normalized bin centers]`.
pub fn content_2d(b: &Box2D, cam: &CameraModel, dist: &DepthDistribution, bins: &DepthBins) -> [f64; QUERY_DIM] {
    let (w, h) = (cam.width() as f64, cam.height() as f64);
    let mut c = [0.0; QUERY_DIM];
    c[0] = b.score;
    one_hot_class(&mut c[1..1 + NUM_CLASSES], b.class_id);
    let o = 1 + NUM_CLASSES;
    let center = b.center();
    c[o] = center.x / w;
    c[o + 1] = center.y / h;
    c[o + 2] = b.width() / w;
    c[o + 3] = b.height() / h;
    let span = bins.d_max - bins.d_min;
    for (k, p) in dist.probs().iter().enumerate() {
        let u = (bins.center(k) - bins.d_min) / span;
        let mut pow = u;
        for m in 0..DEPTH_MOMENTS {
            c[o + 4 + m] += p * pow;
            pow *= u;
        }
    }
    c
}

/// `[score, class one-hot, center/R, size/R, sin yaw, cos yaw,
/// log1p(points)/5, 0 ...]`.
pub fn content_3d(b: &Box3D, num_points: usize, radius: f64) -> [f64; QUERY_DIM] {
    let mut c = [0.0; QUERY_DIM];
    c[0] = b.score;
    one_hot_class(&mut c[1..1 + NUM_CLASSES], b.class_id);
    let o = 1 + NUM_CLASSES;
    for i in 0..3 {
        c[o + i] = b.center[i] / radius;
        c[o + 3 + i] = b.size[i] / radius;
    }
    c[o + 6] = b.yaw.sin();
    c[o + 7] = b.yaw.cos();
    c[o + 8] = (num_points as f64).ln_1p() / 5.0;
    c
}

pub fn make_query3d(b: &Box3D, num_points: usize, radius: f64) -> Query3D {
    Query3D {
        content: content_3d(b, num_points, radius),
        ref_point: b.center,
        source_box: *b,
    }
}

/// Builds an image query: LiDAR depths inside the box frustum form the
/// LiDAR-side distribution, which is fused with `image_dist` and decoded to a
/// reference point along the ray through the box center.
#[allow(clippy::too_many_arguments)]
pub fn make_query2d(
    bbox: &Box2D,
    camera_index: usize,
    cam: &CameraModel,
    points: &[LidarPoint],
    bins: &DepthBins,
    net: &ConfidenceNet,
    lambda_mode: LambdaMode,
    image_dist: &DepthDistribution,
) -> Result<Query2D> {
    let depths: Vec<f64> = points
        .iter()
        .filter(|p| frustum_contains(cam, bbox, (bins.d_min, bins.d_max), &p.position))
        .filter_map(|p| project_point(cam, &p.position).map(|pr| pr.depth))
        .collect();
    let lidar = lidar_depth_histogram(&depths, bins);
    let lambda = match lambda_mode {
        LambdaMode::Learned => net.lambda(image_dist, &lidar),
        LambdaMode::Fixed(l) => l.clamp(0.0, 1.0),
    };
    let fused = fuse_distributions(image_dist, &lidar, lambda);
    let fused_depth = expected_depth(&fused, bins);
    let ref_point = backproject(cam, &bbox.center(), fused_depth)?;
    Ok(Query2D {
        content: content_2d(bbox, cam, &fused, bins),
        ref_point,
        source_box: *bbox,
        camera_index,
        lambda,
        image_depth: expected_depth(image_dist, bins),
        fused_depth,
        frustum_points: depths.len(),
        depth_dist: fused,
        image_dist: image_dist.clone(),
        lidar_dist: lidar,
    })
}

#[cfg(test)]
mod tests {
    use super::super::discretized_gaussian;
    use super::*;
    use crate::geometry::project_box3d;
    use crate::scenesim::SimConfig;

    fn setup() -> (CameraModel, Box3D, Box2D) {
        let cam = SimConfig::default().camera_rig().unwrap().remove(0);
        let gt = Box3D::new(Vector3::new(18.0, 1.0, 0.8), Vector3::new(4.5, 1.9, 1.6), 0.0, 1.0, 0).unwrap();
        let b = project_box3d(&cam, &gt).unwrap();
        (cam, gt, b)
    }

    #[test]
    fn dense_points_at_gt_depth() {
        let (cam, gt, b) = setup();
        let bins = DepthBins::default();
        let gt_depth = cam.to_camera(&gt.center).z;
        // A dense sheet of points at the gt depth across the box.
        let mut points = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                let px = nalgebra::Vector2::new(
                    b.x_min + (i as f64 + 0.5) / 20.0 * b.width(),
                    b.y_min + (j as f64 + 0.5) / 20.0 * b.height(),
                );
                points.push(LidarPoint {
                    position: backproject(&cam, &px, gt_depth).unwrap(),
                    intensity: 0.5,
                });
            }
        }
        let net = ConfidenceNet::with_defaults(25, 0);
        let img = discretized_gaussian(gt_depth + 5.0, 2.0, &bins);
        let q = make_query2d(&b, 0, &cam, &points, &bins, &net, LambdaMode::Fixed(0.0), &img).unwrap();
        let depth = cam.to_camera(&q.ref_point).z;
        assert!((depth - gt_depth).abs() <= 0.5 * bins.width() + 1e-3, "{depth} vs {gt_depth}");
        assert_eq!(q.frustum_points, 400);
    }

    #[test]
    fn empty_frustum_uses_uniform_prior() {
        let (cam, _, b) = setup();
        let bins = DepthBins::default();
        let net = ConfidenceNet::with_defaults(25, 0);
        let img = discretized_gaussian(10.0, 2.0, &bins);
        let q = make_query2d(&b, 0, &cam, &[], &bins, &net, LambdaMode::Fixed(0.0), &img).unwrap();
        assert!((cam.to_camera(&q.ref_point).z - 26.0).abs() < 1e-9);
        assert!(q.ref_point.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn content_layout() {
        let (cam, gt, b) = setup();
        let bins = DepthBins::default();
        let c = content_2d(&b, &cam, &DepthDistribution::uniform(25), &bins);
        assert_eq!(c[0], 1.0);
        assert_eq!(&c[1..4], &[1.0, 0.0, 0.0]);
        assert!((c[8] - 0.5).abs() < 1e-12);
        let q3 = make_query3d(&gt, 40, 40.0);
        assert_eq!(q3.ref_point, gt.center);
        assert_eq!(q3.content[13..], [0.0; 3]);
    }
}
