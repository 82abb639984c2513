//! Scene tokens: bird's-eye-view pillars mean-pooled from the (possibly
//! masked) point cloud and lifted to feature vectors by a fixed random
//! projection.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::depthprior::QUERY_DIM;
use crate::rng::{rng_for, tag};
use crate::scenesim::LidarPoint;

/// Width of a token feature.
pub const TOKEN_FEATURES: usize = QUERY_DIM;

const RAW: usize = 8;
/// The projection is a constant of the model, not of a run.
const PROJECTION_SEED: u64 = 0x70CE;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenConfig {
    /// Pillar edge length (m).
    pub voxel: f64,
    /// Points beyond this horizontal range are ignored.
    pub radius: f64,
}

impl Default for TokenConfig {
    fn default() -> Self {
        Self {
            voxel: 2.0,
            radius: 40.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneTokens {
    pub features: Vec<Vec<f64>>,
    /// Centroid of each pillar's points.
    pub positions: Vec<Vector3<f64>>,
}

fn projection() -> Vec<f64> {
    let mut rng = rng_for(PROJECTION_SEED, &[tag::TOKENS]);
    let n = Normal::new(0.0, 1.0 / (RAW as f64).sqrt()).expect("finite");
    (0..TOKEN_FEATURES * RAW).map(|_| n.sample(&mut rng)).collect()
}

impl SceneTokens {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Pools `points` into pillars. Raw pillar features are the centroid
    /// offset from the pillar center, mean and max height, log point count,
    /// mean intensity, height spread and a constant; pillars are ordered by
    /// grid index so the result does not depend on point order.
    pub fn from_points(points: &[LidarPoint], cfg: &TokenConfig) -> Self {
        struct Acc {
            n: usize,
            sum: Vector3<f64>,
            sum_z2: f64,
            max_z: f64,
            sum_i: f64,
        }
        let mut cells: BTreeMap<(i64, i64), Acc> = BTreeMap::new();
        for p in points {
            if p.position.xy().norm() > cfg.radius {
                continue;
            }
            let key = ((p.position.x / cfg.voxel).floor() as i64, (p.position.y / cfg.voxel).floor() as i64);
            let acc = cells.entry(key).or_insert(Acc {
                n: 0,
                sum: Vector3::zeros(),
                sum_z2: 0.0,
                max_z: f64::NEG_INFINITY,
                sum_i: 0.0,
            });
            acc.n += 1;
            acc.sum += p.position;
            acc.sum_z2 += p.position.z * p.position.z;
            acc.max_z = acc.max_z.max(p.position.z);
            acc.sum_i += p.intensity;
        }
        let proj = projection();
        let mut out = SceneTokens::default();
        for ((ix, iy), acc) in cells {
            let n = acc.n as f64;
            let c = acc.sum / n;
            let var_z = (acc.sum_z2 / n - c.z * c.z).max(0.0);
            let cx = (ix as f64 + 0.5) * cfg.voxel;
            let cy = (iy as f64 + 0.5) * cfg.voxel;
            let raw = [
                (c.x - cx) / cfg.voxel,
                (c.y - cy) / cfg.voxel,
                c.z / 2.0,
                acc.max_z / 2.0,
                n.ln_1p() / 3.0,
                acc.sum_i / n,
                var_z.sqrt(),
                1.0,
            ];
            let feat = (0..TOKEN_FEATURES)
                .map(|r| (0..RAW).map(|k| proj[r * RAW + k] * raw[k]).sum())
                .collect();
            out.features.push(feat);
            out.positions.push(c);
        }
        out
    }
}
