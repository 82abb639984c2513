//! The fusion-weight MLP: concatenated (image, LiDAR) distributions ->
//! tanh -> tanh -> sigmoid, with analytic gradients.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{expected_depth, fuse_distributions, DepthBins, DepthDistribution};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::rng::{rng_for, tag};

const VERSION: &str = "ccf-confnet-v1";

/// How the fusion weight of a 2D query is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LambdaMode {
    Learned,
    /// Fixed weight: 1 is image-only, 0 is LiDAR-only.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceNet {
    input_dim: usize,
    hidden: [usize; 2],
    /// Flat storage: W1, b1, W2, b2, w3, b3 (row-major).
    params: Vec<f64>,
}

struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    len: usize,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ConfidenceCache {
    x: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    pub lambda: f64,
}

impl ConfidenceNet {
    /// Xavier-uniform hidden layers; the output layer starts at zero so the
    /// initial weight is 0.5 everywhere.
    pub fn new(bins: usize, hidden: [usize; 2], seed: u64) -> Self {
        let input_dim = 2 * bins;
        let mut net = Self {
            input_dim,
            hidden,
            params: Vec::new(),
        };
        let lay = net.layout();
        net.params = vec![0.0; lay.len];
        let mut rng = rng_for(seed, &[tag::INIT, 1]);
        let mut fill = |start: usize, fan_in: usize, fan_out: usize, params: &mut [f64]| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[start..start + fan_in * fan_out] {
                *p = rng.random_range(-a..a);
            }
        };
        fill(lay.w1, input_dim, hidden[0], &mut net.params);
        fill(lay.w2, hidden[0], hidden[1], &mut net.params);
        net
    }

    pub fn with_defaults(bins: usize, seed: u64) -> Self {
        Self::new(bins, [32, 32], seed)
    }

    fn layout(&self) -> Layout {
        let [h1, h2] = self.hidden;
        let w1 = 0;
        let b1 = w1 + h1 * self.input_dim;
        let w2 = b1 + h1;
        let b2 = w2 + h2 * h1;
        let w3 = b2 + h2;
        let b3 = w3 + h2;
        Layout {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            len: b3 + 1,
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Gaussian perturbation of every weight, for randomized checks.
    pub fn randomize(&mut self, scale: f64, seed: u64) {
        let mut rng = rng_for(seed, &[tag::INIT, 2]);
        let n = Normal::new(0.0, scale).expect("finite scale");
        for p in &mut self.params {
            *p = n.sample(&mut rng);
        }
    }

    pub fn forward(&self, d2: &DepthDistribution, d3: &DepthDistribution) -> ConfidenceCache {
        let x: Vec<f64> = d2.probs().iter().chain(d3.probs()).copied().collect();
        debug_assert_eq!(x.len(), self.input_dim);
        let lay = self.layout();
        let [n1, n2] = self.hidden;
        let p = &self.params;
        let h1: Vec<f64> = (0..n1)
            .map(|r| {
                let row = &p[lay.w1 + r * self.input_dim..lay.w1 + (r + 1) * self.input_dim];
                (row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + p[lay.b1 + r]).tanh()
            })
            .collect();
        let h2: Vec<f64> = (0..n2)
            .map(|r| {
                let row = &p[lay.w2 + r * n1..lay.w2 + (r + 1) * n1];
                (row.iter().zip(&h1).map(|(w, v)| w * v).sum::<f64>() + p[lay.b2 + r]).tanh()
            })
            .collect();
        let z3: f64 = p[lay.w3..lay.w3 + n2].iter().zip(&h2).map(|(w, v)| w * v).sum::<f64>() + p[lay.b3];
        ConfidenceCache {
            x,
            h1,
            h2,
            lambda: 1.0 / (1.0 + (-z3).exp()),
        }
    }

    pub fn lambda(&self, d2: &DepthDistribution, d3: &DepthDistribution) -> f64 {
        self.forward(d2, d3).lambda
    }

    /// Accumulates `dL/dparams` into `grads` given `dL/dlambda`.
    pub fn backward(&self, cache: &ConfidenceCache, dlambda: f64, grads: &mut [f64]) {
        let lay = self.layout();
        let [n1, n2] = self.hidden;
        let p = &self.params;
        let dz3 = dlambda * cache.lambda * (1.0 - cache.lambda);
        grads[lay.b3] += dz3;
        let mut dz2 = vec![0.0; n2];
        for r in 0..n2 {
            grads[lay.w3 + r] += dz3 * cache.h2[r];
            dz2[r] = dz3 * p[lay.w3 + r] * (1.0 - cache.h2[r] * cache.h2[r]);
        }
        let mut dh1 = vec![0.0; n1];
        for r in 0..n2 {
            grads[lay.b2 + r] += dz2[r];
            for c in 0..n1 {
                grads[lay.w2 + r * n1 + c] += dz2[r] * cache.h1[c];
                dh1[c] += p[lay.w2 + r * n1 + c] * dz2[r];
            }
        }
        for r in 0..n1 {
            let dz1 = dh1[r] * (1.0 - cache.h1[r] * cache.h1[r]);
            grads[lay.b1 + r] += dz1;
            for c in 0..self.input_dim {
                grads[lay.w1 + r * self.input_dim + c] += dz1 * cache.x[c];
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_wire())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_wire()).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let wire: WireNet = serde_json::from_str(text)?;
        if wire.version != VERSION {
            return Err(Error::VersionMismatch {
                expected: VERSION.into(),
                found: wire.version,
            });
        }
        let [l1, l2, l3] = &wire.layers;
        if l1.cols == 0 || l2.cols != l1.rows || l3.cols != l2.rows || l3.rows != 1 {
            return Err(Error::InvalidConfig("inconsistent confidence-net layer shapes".into()));
        }
        let mut params: Vec<f64> = Vec::new();
        for l in &wire.layers {
            if l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(Error::InvalidConfig("confidence-net layer size mismatch".into()));
            }
            params.extend(&l.weights);
            params.extend(&l.bias);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidConfig("non-finite confidence-net weight".into()));
        }
        Ok(Self {
            input_dim: l1.cols,
            hidden: [l1.rows, l2.rows],
            params,
        })
    }

    fn to_wire(&self) -> WireNet {
        let lay = self.layout();
        let [n1, n2] = self.hidden;
        let p = &self.params;
        let layer = |w: usize, b: usize, rows: usize, cols: usize| WireLayer {
            rows,
            cols,
            weights: p[w..w + rows * cols].to_vec(),
            bias: p[b..b + rows].to_vec(),
        };
        WireNet {
            version: VERSION.into(),
            layers: [
                layer(lay.w1, lay.b1, n1, self.input_dim),
                layer(lay.w2, lay.b2, n2, n1),
                layer(lay.w3, lay.b3, 1, n2),
            ],
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireLayer {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireNet {
    version: String,
    layers: [WireLayer; 3],
}

/// One supervision instance for the fusion weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfExample {
    pub image: DepthDistribution,
    pub lidar: DepthDistribution,
    pub gt_depth: f64,
    /// No LiDAR point fell in the frustum (the LiDAR distribution is the
    /// uniform fallback).
    pub empty_frustum: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Leave empty-frustum instances out of the fusion-weight loss.
    pub exclude_empty_frustums: bool,
}

impl Default for ConfTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            lr: 0.005,
            exclude_empty_frustums: false,
        }
    }
}

/// `dE/dlambda` of the fused expected depth: the covariance, under the fused
/// distribution, of bin centers and the log-ratio of the two experts.
pub(crate) fn expected_depth_slope(d2: &DepthDistribution, d3: &DepthDistribution, lambda: f64, bins: &DepthBins) -> (f64, f64) {
    let f = fuse_distributions(d2, d3, lambda);
    let (a, b) = (d2.floored_logs(), d3.floored_logs());
    let e = expected_depth(&f, bins);
    let diff_mean: f64 = f.probs().iter().zip(a.iter().zip(&b)).map(|(p, (x, y))| p * (x - y)).sum();
    let slope = f
        .probs()
        .iter()
        .enumerate()
        .map(|(k, p)| p * bins.center(k) * (a[k] - b[k] - diff_mean))
        .sum();
    (e, slope)
}

impl ConfidenceNet {
    /// Mean L1 depth loss and its gradient over `data`.
    pub fn loss_and_grad(&self, data: &[ConfExample], bins: &DepthBins) -> (f64, Vec<f64>) {
        let mut grads = vec![0.0; self.params.len()];
        if data.is_empty() {
            return (0.0, grads);
        }
        let mut loss = 0.0;
        for ex in data {
            let cache = self.forward(&ex.image, &ex.lidar);
            let (e, slope) = expected_depth_slope(&ex.image, &ex.lidar, cache.lambda, bins);
            let r = e - ex.gt_depth;
            loss += r.abs();
            let sign = if r > 0.0 {
                1.0
            } else if r < 0.0 {
                -1.0
            } else {
                0.0
            };
            self.backward(&cache, sign * slope, &mut grads);
        }
        let n = data.len() as f64;
        grads.iter_mut().for_each(|g| *g /= n);
        (loss / n, grads)
    }

    /// Full-batch Adam on the L1 expected-depth loss. Returns the per-epoch
    /// loss curve (loss before each update, then the final loss).
    pub fn train(&mut self, data: &[ConfExample], bins: &DepthBins, cfg: &ConfTrainConfig) -> Result<Vec<f64>> {
        let used: Vec<ConfExample> = data
            .iter()
            .filter(|e| !(cfg.exclude_empty_frustums && e.empty_frustum))
            .cloned()
            .collect();
        if used.is_empty() {
            return Err(Error::InvalidConfig("confidence-net training set is empty".into()));
        }
        let mut opt = Adam::new(self.params.len(), cfg.lr);
        let mut curve = Vec::with_capacity(cfg.epochs + 1);
        for epoch in 0..=cfg.epochs {
            let (loss, grads) = self.loss_and_grad(&used, bins);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss(format!("confidence net, epoch {epoch}")));
            }
            curve.push(loss);
            if epoch < cfg.epochs {
                opt.step(&mut self.params, &grads);
            }
        }
        Ok(curve)
    }

    pub fn mean_lambda(&self, data: &[ConfExample]) -> f64 {
        data.iter().map(|e| self.lambda(&e.image, &e.lidar)).sum::<f64>() / data.len().max(1) as f64
    }
}
