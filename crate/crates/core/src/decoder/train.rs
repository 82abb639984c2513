//! Training loop, inference and pass instrumentation.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{active_passes, decoupled_loss, DecoderConfig, DecoderWeights, PassKind, PASS_CALLS};
use crate::depthprior::{ConfTrainConfig, ConfidenceNet, LambdaMode};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate_model, Detection, EvalSetup};
use crate::masking::{apply_policy, MaskPolicy};
use crate::matching::MatchWeights;
use crate::optim::Adam;
use crate::pipeline::{build_sample, confidence_examples, PipelineConfig, Sample};
use crate::rng::{derive_seed, rng_for, tag};
use crate::scenesim::Scene;

/// Forward calls per pass kind `[2d, 3d, fused]` on the current thread
/// since the last reset.
pub fn pass_counts() -> [usize; 3] {
    PASS_CALLS.with(|c| [c[0].get(), c[1].get(), c[2].get()])
}

pub fn reset_pass_counts() {
    PASS_CALLS.with(|c| c.iter().for_each(|x| x.set(0)));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// The step size decays linearly to `lr * final_lr_fraction` over
    /// training (1 = constant).
    pub final_lr_fraction: f64,
    pub batch_size: usize,
    pub mask: MaskPolicy,
    /// Supervise the image-only and LiDAR-only passes as well as the fused one.
    pub decoupled: bool,
    /// Place image queries with the LiDAR-guided depth prior; otherwise the
    /// image depth distribution alone is used.
    pub depth_prior: bool,
    pub pipeline: PipelineConfig,
    pub matching: MatchWeights,
    pub decoder: DecoderConfig,
    pub conf: ConfTrainConfig,
    /// Evaluate on the held-out splits every this many epochs (0 = only at
    /// the end).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 3e-3,
            final_lr_fraction: 0.05,
            batch_size: 8,
            mask: MaskPolicy::default(),
            decoupled: true,
            depth_prior: true,
            pipeline: PipelineConfig::default(),
            matching: MatchWeights::default(),
            decoder: DecoderConfig::default(),
            conf: ConfTrainConfig::default(),
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::InvalidConfig(format!("final_lr_fraction {} outside [0, 1]", self.final_lr_fraction)));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate {} is invalid", self.lr)));
        }
        self.mask.validate()?;
        self.pipeline.bins.validate()
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub loss_2d: f64,
    pub loss_3d: f64,
    pub loss_fused: f64,
    /// Sum over the passes the objective uses.
    pub loss_total: f64,
    pub map: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: DecoderWeights,
    pub confnet: ConfidenceNet,
    pub lambda: LambdaMode,
    pub log: Vec<EpochMetrics>,
    /// Confidence-net loss per epoch (empty without the depth prior).
    pub conf_curve: Vec<f64>,
}

/// Decoded detections of the fused pass, the only pass used at inference.
pub fn predict(weights: &DecoderWeights, sample: &Sample, radius: f64) -> Result<Vec<Detection>> {
    let queries = sample.sets.for_pass(PassKind::Fused);
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    let out = weights.forward(&queries, &sample.tokens, PassKind::Fused)?;
    Ok(out
        .predictions
        .iter()
        .zip(out.origins())
        .map(|(p, o)| Detection::from_prediction(p, *o, radius))
        .collect())
}

fn total_of(losses: [f64; 3], decoupled: bool) -> f64 {
    if decoupled {
        losses.iter().sum()
    } else {
        losses[2]
    }
}

/// Mean per-pass losses of unmasked training samples under `weights`, with
/// the same proposal seeds as the training loop.
fn split_losses(weights: &DecoderWeights, scenes: &[Scene], cfg: &TrainConfig, confnet: &ConfidenceNet, lambda: LambdaMode, seed: u64) -> Result<[f64; 3]> {
    let per: Vec<[f64; 3]> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, s)| -> Result<[f64; 3]> {
            let sample = build_sample(s, &cfg.pipeline, confnet, lambda, None, derive_seed(seed, &[tag::PROPOSAL_3D, i as u64]))?;
            let l = decoupled_loss(weights, &sample.sets, &sample.tokens, &sample.gts, &PassKind::ALL, &cfg.matching, None)?;
            Ok([l.pass_total(PassKind::TwoDOnly), l.pass_total(PassKind::ThreeDOnly), l.pass_total(PassKind::Fused)])
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per.len().max(1) as f64;
    let mut out = [0.0; 3];
    for l in per {
        for k in 0..3 {
            out[k] += l[k] / n;
        }
    }
    Ok(out)
}

/// Trains the fusion-weight network (when the depth prior is on), then the
/// decoder with Adam on shuffled minibatches of masked samples. `eval`
/// splits are scored at epoch 0, every `eval_every` epochs and at the end.
pub fn train(train_scenes: &[Scene], eval: &[(&str, &[Scene])], cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_scenes.is_empty() {
        return Err(Error::InvalidConfig("training split is empty".into()));
    }
    let bins = &cfg.pipeline.bins;
    let mut confnet = ConfidenceNet::with_defaults(bins.count, derive_seed(seed, &[tag::INIT, 1]));
    let (lambda, conf_curve) = if cfg.depth_prior {
        let data = confidence_examples(train_scenes, &cfg.pipeline, derive_seed(seed, &[tag::INIT, 2]))?;
        let curve = confnet.train(&data, bins, &cfg.conf)?;
        (LambdaMode::Learned, curve)
    } else {
        (LambdaMode::Fixed(1.0), Vec::new())
    };

    let mut weights = DecoderWeights::new(cfg.decoder, seed);
    let mut opt = Adam::new(weights.num_params(), cfg.lr);
    let passes = active_passes(cfg.decoupled);
    let batches = train_scenes.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches;
    let eval_seed = derive_seed(seed, &[tag::PROPOSAL_2D, 0xE7A1]);
    let mut log = Vec::new();

    let log_eval = |weights: &DecoderWeights, epoch: usize, log: &mut Vec<EpochMetrics>| -> Result<()> {
        for (name, scenes) in eval {
            if scenes.is_empty() {
                continue;
            }
            let setup = EvalSetup {
                pipeline: &cfg.pipeline,
                confnet: &confnet,
                lambda,
                matching: &cfg.matching,
                seed: eval_seed,
            };
            let report = evaluate_model(weights, name, scenes, &setup)?;
            log.push(EpochMetrics {
                epoch,
                split: name.to_string(),
                loss_2d: report.losses[0],
                loss_3d: report.losses[1],
                loss_fused: report.losses[2],
                loss_total: total_of(report.losses, cfg.decoupled),
                map: report.map,
            });
        }
        Ok(())
    };

    let initial = split_losses(&weights, train_scenes, cfg, &confnet, lambda, seed)?;
    log.push(EpochMetrics {
        epoch: 0,
        split: "train".into(),
        loss_2d: initial[0],
        loss_3d: initial[1],
        loss_fused: initial[2],
        loss_total: total_of(initial, cfg.decoupled),
        map: None,
    });
    log_eval(&weights, 0, &mut log)?;

    let mut order: Vec<usize> = (0..train_scenes.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng_for(seed, &[tag::SHUFFLE, epoch as u64]));
        let mut sums = [0.0; 3];
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let step = (epoch - 1) * batches + b;
            let results: Vec<(Vec<f64>, [f64; 3])> = chunk
                .par_iter()
                .map(|&idx| -> Result<(Vec<f64>, [f64; 3])> {
                    let scene = &train_scenes[idx];
                    let mask_seed = derive_seed(seed, &[tag::MASK, idx as u64, epoch as u64]);
                    let aug = apply_policy(&scene.cameras, &scene.points, &cfg.mask, step, total_steps, mask_seed)?;
                    let sample_seed = derive_seed(seed, &[tag::PROPOSAL_3D, idx as u64]);
                    let sample = build_sample(scene, &cfg.pipeline, &confnet, lambda, Some(&aug), sample_seed)?;
                    let mut g = vec![0.0; weights.num_params()];
                    let l = decoupled_loss(&weights, &sample.sets, &sample.tokens, &sample.gts, passes, &cfg.matching, Some(&mut g))?;
                    Ok((g, [l.pass_total(PassKind::TwoDOnly), l.pass_total(PassKind::ThreeDOnly), l.pass_total(PassKind::Fused)]))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads = vec![0.0; weights.num_params()];
            let scale = 1.0 / chunk.len() as f64;
            for (g, l) in &results {
                for (a, x) in grads.iter_mut().zip(g) {
                    *a += x * scale;
                }
                for k in 0..3 {
                    sums[k] += l[k];
                }
            }
            let progress = step as f64 / total_steps.max(1) as f64;
            opt.lr = cfg.lr * (1.0 - (1.0 - cfg.final_lr_fraction) * progress);
            opt.step(weights.params_mut(), &grads);
        }
        let n = train_scenes.len() as f64;
        let mean = sums.map(|s| s / n);
        log.push(EpochMetrics {
            epoch,
            split: "train".into(),
            loss_2d: mean[0],
            loss_3d: mean[1],
            loss_fused: mean[2],
            loss_total: total_of(mean, cfg.decoupled),
            map: None,
        });
        let due = cfg.eval_every > 0 && epoch % cfg.eval_every == 0;
        if due || epoch == cfg.epochs {
            log_eval(&weights, epoch, &mut log)?;
        }
    }
    Ok(TrainOutcome {
        weights,
        confnet,
        lambda,
        log,
        conf_curve,
    })
}
