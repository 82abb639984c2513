//! LiDAR-guided depth priors for image queries.
//!
//! An image proposal carries a discretized depth distribution from a
//! (simulated) monocular estimator; the LiDAR points inside its frustum give a
//! second one. The two are combined in log space with an instance weight
//! `lambda` predicted by a small MLP, and the expected depth of the result
//! places the query's 3D reference point.

mod confnet;
mod query;

pub use confnet::{ConfExample, ConfTrainConfig, ConfidenceCache, ConfidenceNet, LambdaMode};
pub use query::{content_2d, content_3d, make_query2d, make_query3d, Query2D, Query3D, QUERY_DIM};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::rng::{rng_for, tag};
use crate::scenesim::{DomainName, DomainTag};

/// Probabilities are floored at this value before taking logs.
pub const EPS_PROB: f64 = 1e-6;

/// Image depth sigma calibrated so the image-only expected-depth MAE on the
/// source domain is 1.78 m (see `calibrate_sigma_base`).
pub const DEFAULT_SIGMA_BASE: f64 = 2.23;

/// Relative sigma growth at severity 1.
pub const RAIN_SIGMA_GAIN: f64 = 0.86;
pub const NIGHT_SIGMA_GAIN: f64 = 0.34;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthBins {
    pub d_min: f64,
    pub d_max: f64,
    pub count: usize,
}

impl Default for DepthBins {
    fn default() -> Self {
        Self {
            d_min: 1.0,
            d_max: 51.0,
            count: 25,
        }
    }
}

impl DepthBins {
    pub fn new(d_min: f64, d_max: f64, count: usize) -> Result<Self> {
        let b = Self { d_min, d_max, count };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_min < self.d_max) || !self.d_min.is_finite() || !self.d_max.is_finite() {
            return Err(Error::InvalidConfig(format!("depth range [{}, {}] is empty", self.d_min, self.d_max)));
        }
        if self.count < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 depth bins, got {}", self.count)));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        (self.d_max - self.d_min) / self.count as f64
    }

    pub fn center(&self, k: usize) -> f64 {
        self.d_min + (k as f64 + 0.5) * self.width()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.count).map(|k| self.center(k)).collect()
    }

    /// Bin holding `d`; the upper edge belongs to the last bin.
    pub fn index(&self, d: f64) -> Option<usize> {
        if !(d >= self.d_min && d <= self.d_max) {
            return None;
        }
        Some((((d - self.d_min) / self.width()) as usize).min(self.count - 1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthDistribution {
    probs: Vec<f64>,
}

impl DepthDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidConfig("depth probabilities must be finite and non-negative".into()));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("depth probabilities sum to {s}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights; all-zero weights give the uniform
    /// distribution.
    pub fn from_weights(weights: Vec<f64>) -> Self {
        let s: f64 = weights.iter().sum();
        if !(s > 0.0) {
            return Self::uniform(weights.len());
        }
        Self {
            probs: weights.into_iter().map(|w| w / s).collect(),
        }
    }

    pub fn uniform(d: usize) -> Self {
        Self {
            probs: vec![1.0 / d as f64; d],
        }
    }

    pub fn one_hot(d: usize, k: usize) -> Self {
        let mut probs = vec![0.0; d];
        probs[k] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Floored at [`EPS_PROB`] and renormalized.
    pub fn floored(&self) -> Vec<f64> {
        let f: Vec<f64> = self.probs.iter().map(|p| p.max(EPS_PROB)).collect();
        let s: f64 = f.iter().sum();
        f.into_iter().map(|p| p / s).collect()
    }

    pub fn floored_logs(&self) -> Vec<f64> {
        self.floored().into_iter().map(f64::ln).collect()
    }
}

/// Normalized histogram of in-range depths; uniform when none are in range.
pub fn lidar_depth_histogram(depths: &[f64], bins: &DepthBins) -> DepthDistribution {
    let mut counts = vec![0.0; bins.count];
    for d in depths {
        if let Some(k) = bins.index(*d) {
            counts[k] += 1.0;
        }
    }
    DepthDistribution::from_weights(counts)
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Gaussian N(mean, sigma) integrated over each bin, renormalized to the bin
/// range. Mass entirely outside the range collapses onto the nearest bin.
pub fn discretized_gaussian(mean: f64, sigma: f64, bins: &DepthBins) -> DepthDistribution {
    let sigma = sigma.max(1e-12);
    let w = bins.width();
    let mut cdf_lo = normal_cdf((bins.d_min - mean) / sigma);
    let mut probs = Vec::with_capacity(bins.count);
    for k in 0..bins.count {
        let hi = normal_cdf((bins.d_min + (k + 1) as f64 * w - mean) / sigma);
        probs.push((hi - cdf_lo).max(0.0));
        cdf_lo = hi;
    }
    if probs.iter().sum::<f64>() > 0.0 {
        DepthDistribution::from_weights(probs)
    } else {
        let k = if mean < bins.d_min { 0 } else { bins.count - 1 };
        DepthDistribution::one_hot(bins.count, k)
    }
}

/// Image-depth sigma after domain inflation.
pub fn image_sigma(sigma_base: f64, domain: DomainTag) -> f64 {
    let gain = match domain.name {
        DomainName::Rain => RAIN_SIGMA_GAIN,
        DomainName::Night => NIGHT_SIGMA_GAIN,
        DomainName::Source | DomainName::Geo => 0.0,
    };
    sigma_base * (1.0 + gain * domain.severity)
}

/// Simulated monocular depth estimate: a discretized Gaussian of width sigma
/// around the true depth plus a seeded bias drawn from N(0, sigma).
pub fn image_depth_distribution(gt_depth: f64, sigma_base: f64, domain: DomainTag, bins: &DepthBins, seed: u64) -> DepthDistribution {
    let sigma = image_sigma(sigma_base, domain);
    let mut rng = rng_for(seed, &[tag::IMAGE_DEPTH]);
    let z = Normal::new(0.0, 1.0).expect("unit normal").sample(&mut rng);
    discretized_gaussian(gt_depth + sigma * z, sigma, bins)
}

/// Product-of-experts fusion: `softmax(lambda log d2 + (1 - lambda) log d3)`.
pub fn fuse_distributions(d2: &DepthDistribution, d3: &DepthDistribution, lambda: f64) -> DepthDistribution {
    debug_assert_eq!(d2.len(), d3.len());
    let (a, b) = (d2.floored_logs(), d3.floored_logs());
    let s: Vec<f64> = a.iter().zip(&b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect();
    DepthDistribution {
        probs: softmax(&s),
    }
}

pub(crate) fn softmax(s: &[f64]) -> Vec<f64> {
    let m = s.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

pub fn expected_depth(d: &DepthDistribution, bins: &DepthBins) -> f64 {
    d.probs.iter().enumerate().map(|(k, p)| p * bins.center(k)).sum()
}

/// Mean |E[image distribution] - true depth| over `samples` seeded draws with
/// true depths uniform on `depth_range`.
pub fn image_only_mae(sigma_base: f64, bins: &DepthBins, depth_range: (f64, f64), samples: usize, seed: u64) -> f64 {
    let mut rng = rng_for(seed, &[tag::IMAGE_DEPTH, 1]);
    let total: f64 = (0..samples)
        .map(|i| {
            let gt = rand::Rng::random_range(&mut rng, depth_range.0..depth_range.1);
            let d = image_depth_distribution(gt, sigma_base, DomainTag::source(), bins, crate::rng::derive_seed(seed, &[i as u64]));
            (expected_depth(&d, bins) - gt).abs()
        })
        .sum();
    total / samples.max(1) as f64
}

/// Bisection on sigma so that [`image_only_mae`] hits `target`. Common random
/// numbers make the Monte-Carlo estimate monotone in sigma.
pub fn calibrate_sigma_base(target: f64, bins: &DepthBins, depth_range: (f64, f64), samples: usize, seed: u64) -> f64 {
    let (mut lo, mut hi) = (0.05, 10.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if image_only_mae(mid, bins, depth_range, samples, seed) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
