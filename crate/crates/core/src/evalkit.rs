//! Detection metrics: center-distance AP and mAP, 2D IoU AP, depth error,
//! plus model evaluation and the proposal-level pilot measurements.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::decoder::{decoupled_loss, DecoderWeights, PassKind};
use crate::depthprior::{ConfidenceNet, LambdaMode};
use crate::error::Result;
use crate::geometry::{project_box3d, Box2D, Box3D};
use crate::matching::{
    assign_queries, denormalize_box, hungarian, softmax, supervision_stats, CostMatrix, MatchResult, MatchWeights, Prediction, SupervisionStats, BACKGROUND,
    NUM_LOGITS,
};
use crate::pipeline::{build_sample, gt_camera_depth, PipelineConfig, Sample};
use crate::rng::derive_seed;
use crate::scenesim::{Scene, NUM_CLASSES};

pub const DEFAULT_THRESHOLDS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
const RECALL_POINTS: usize = 41;

/// Which query type produced a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    From2D,
    From3D,
    Fused,
}

impl Origin {
    pub fn as_str(&self) -> &'static str {
        match self {
            Origin::From2D => "2d",
            Origin::From3D => "3d",
            Origin::Fused => "fused",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: Box3D,
    pub score: f64,
    pub class_id: usize,
    pub origin: Origin,
}

impl Detection {
    /// Decodes a decoder prediction: best foreground class and its
    /// probability.
    pub fn from_prediction(pred: &Prediction, origin: Origin, radius: f64) -> Self {
        let probs = softmax(&pred.logits);
        let (class_id, score) = (0..BACKGROUND)
            .map(|k| (k, probs[k]))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        Self {
            bbox: denormalize_box(&pred.params, radius, score, class_id),
            score,
            class_id,
            origin,
        }
    }
}

/// Detections of one scene together with that scene's ground truth.
#[derive(Debug, Clone, Default)]
pub struct Frame {
    pub detections: Vec<Detection>,
    pub gts: Vec<Box3D>,
}

fn by_score_then_position(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.center.x.total_cmp(&b.bbox.center.x))
        .then(a.bbox.center.y.total_cmp(&b.bbox.center.y))
        .then(a.bbox.center.z.total_cmp(&b.bbox.center.z))
}

/// Area under the 41-point interpolated precision/recall curve given TP
/// flags in score order.
fn interpolated_ap(tp_flags: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut pr = Vec::with_capacity(tp_flags.len());
    for (i, t) in tp_flags.iter().enumerate() {
        tp += *t as usize;
        pr.push((tp as f64 / n_gt as f64, tp as f64 / (i + 1) as f64));
    }
    // Precision envelope from the right.
    let mut best = 0.0f64;
    let mut env = vec![0.0; pr.len()];
    for i in (0..pr.len()).rev() {
        best = best.max(pr[i].1);
        env[i] = best;
    }
    let mut sum = 0.0;
    let mut j = 0;
    for k in 0..RECALL_POINTS {
        let r = k as f64 / (RECALL_POINTS - 1) as f64;
        while j < pr.len() && pr[j].0 < r - 1e-12 {
            j += 1;
        }
        if j < pr.len() {
            sum += env[j];
        }
    }
    sum / RECALL_POINTS as f64
}

/// Center-distance AP of one class over a set of frames: greedy score-ordered
/// matching to the nearest unmatched gt within `threshold` meters (BEV).
/// Zero when the class has no ground truth.
pub fn average_precision(frames: &[Frame], class_id: usize, threshold: f64) -> f64 {
    let mut dets: Vec<(usize, Detection)> = frames
        .iter()
        .enumerate()
        .flat_map(|(fi, f)| f.detections.iter().filter(|d| d.class_id == class_id).map(move |d| (fi, *d)))
        .collect();
    dets.sort_by(|a, b| by_score_then_position(&a.1, &b.1).then(a.0.cmp(&b.0)));
    let n_gt: usize = frames.iter().map(|f| f.gts.iter().filter(|g| g.class_id == class_id).count()).sum();
    let mut taken: Vec<Vec<bool>> = frames.iter().map(|f| vec![false; f.gts.len()]).collect();
    let flags: Vec<bool> = dets
        .iter()
        .map(|(fi, d)| {
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in frames[*fi].gts.iter().enumerate() {
                if g.class_id != class_id || taken[*fi][gi] {
                    continue;
                }
                let dist = g.bev_distance(&d.bbox);
                if dist <= threshold && best.is_none_or(|(_, b)| dist < b) {
                    best = Some((gi, dist));
                }
            }
            match best {
                Some((gi, _)) => {
                    taken[*fi][gi] = true;
                    true
                }
                None => false,
            }
        })
        .collect();
    interpolated_ap(&flags, n_gt)
}

/// Classes of `classes` that have at least one gt in `frames`.
pub fn present_classes(frames: &[Frame], classes: &[usize]) -> Vec<usize> {
    classes
        .iter()
        .copied()
        .filter(|c| frames.iter().any(|f| f.gts.iter().any(|g| g.class_id == *c)))
        .collect()
}

/// Mean AP over present classes x thresholds. Classes without ground truth
/// are excluded; `None` when no class is present.
pub fn map_score(frames: &[Frame], classes: &[usize], thresholds: &[f64]) -> Option<f64> {
    let present = present_classes(frames, classes);
    if present.is_empty() || thresholds.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    for c in &present {
        for t in thresholds {
            sum += average_precision(frames, *c, *t);
        }
    }
    Some(sum / (present.len() * thresholds.len()) as f64)
}

/// Frames restricted to detections of one origin.
pub fn frames_for_origin(frames: &[Frame], origin: Origin) -> Vec<Frame> {
    frames
        .iter()
        .map(|f| Frame {
            detections: f.detections.iter().filter(|d| d.origin == origin).copied().collect(),
            gts: f.gts.clone(),
        })
        .collect()
}

/// One image's 2D detections and ground truth.
#[derive(Debug, Clone, Default)]
pub struct ImageFrame {
    pub detections: Vec<Box2D>,
    pub gts: Vec<Box2D>,
}

/// IoU AP of one class over images with greedy score-ordered matching.
pub fn average_precision_2d(images: &[ImageFrame], class_id: usize, iou_threshold: f64) -> f64 {
    let mut dets: Vec<(usize, Box2D)> = images
        .iter()
        .enumerate()
        .flat_map(|(ii, im)| im.detections.iter().filter(|d| d.class_id == class_id).map(move |d| (ii, *d)))
        .collect();
    dets.sort_by(|a, b| {
        b.1.score
            .total_cmp(&a.1.score)
            .then(a.0.cmp(&b.0))
            .then(a.1.x_min.total_cmp(&b.1.x_min))
            .then(a.1.y_min.total_cmp(&b.1.y_min))
    });
    let n_gt: usize = images.iter().map(|im| im.gts.iter().filter(|g| g.class_id == class_id).count()).sum();
    let mut taken: Vec<Vec<bool>> = images.iter().map(|im| vec![false; im.gts.len()]).collect();
    let flags: Vec<bool> = dets
        .iter()
        .map(|(ii, d)| {
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in images[*ii].gts.iter().enumerate() {
                if g.class_id != class_id || taken[*ii][gi] {
                    continue;
                }
                let iou = g.iou(d);
                if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((gi, iou));
                }
            }
            best.map(|(gi, _)| taken[*ii][gi] = true).is_some()
        })
        .collect();
    interpolated_ap(&flags, n_gt)
}

pub fn map_2d(images: &[ImageFrame], classes: &[usize], iou_threshold: f64) -> Option<f64> {
    let present: Vec<usize> = classes
        .iter()
        .copied()
        .filter(|c| images.iter().any(|im| im.gts.iter().any(|g| g.class_id == *c)))
        .collect();
    if present.is_empty() {
        return None;
    }
    Some(present.iter().map(|c| average_precision_2d(images, *c, iou_threshold)).sum::<f64>() / present.len() as f64)
}

/// Mean |predicted - true| over pairs whose true depth lies in `range`.
pub fn depth_mae(pairs: &[(f64, f64)], range: (f64, f64)) -> Option<f64> {
    let used: Vec<f64> = pairs
        .iter()
        .filter(|(_, gt)| *gt >= range.0 && *gt <= range.1)
        .map(|(p, gt)| (p - gt).abs())
        .collect();
    if used.is_empty() {
        None
    } else {
        Some(used.iter().sum::<f64>() / used.len() as f64)
    }
}

/// Hungarian matching of 2D boxes to projected gts on `1 - IoU`, keeping
/// pairs with IoU >= `min_iou`. Returns `(box index, gt index)` pairs.
pub fn match_boxes_2d(boxes: &[Box2D], gts: &[(usize, Box2D)], min_iou: f64) -> Vec<(usize, usize)> {
    if boxes.is_empty() || gts.is_empty() {
        return Vec::new();
    }
    let data = boxes.iter().flat_map(|b| gts.iter().map(move |(_, g)| 1.0 - b.iou(g))).collect();
    let m = CostMatrix::new(boxes.len(), gts.len(), data).expect("IoU costs are finite");
    hungarian(&m)
        .pairs
        .into_iter()
        .filter(|&(b, g)| boxes[b].iou(&gts[g].1) >= min_iou)
        .map(|(b, g)| (b, gts[g].0))
        .collect()
}

/// Projected gt boxes of one camera as `(gt index, box)`.
pub fn projected_gts(scene: &Scene, camera: usize) -> Vec<(usize, Box2D)> {
    scene
        .gt_boxes
        .iter()
        .enumerate()
        .filter_map(|(gi, g)| project_box3d(&scene.cameras[camera], g).map(|b| (gi, b)))
        .collect()
}

/// `(image-only, fused)` depth pairs `(predicted, true)` of the 2D queries
/// of a sample, matched to gts by IoU.
pub fn depth_pairs(scene: &Scene, sample: &Sample) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    let (mut img, mut fused) = (Vec::new(), Vec::new());
    for cam in 0..scene.cameras.len() {
        let idx: Vec<usize> = (0..sample.queries_2d.len()).filter(|i| sample.queries_2d[*i].camera_index == cam).collect();
        let boxes: Vec<Box2D> = idx.iter().map(|i| sample.queries_2d[*i].source_box).collect();
        for (b, g) in match_boxes_2d(&boxes, &projected_gts(scene, cam), 0.5) {
            let q = &sample.queries_2d[idx[b]];
            let d = gt_camera_depth(scene, cam, g);
            img.push((q.image_depth, d));
            fused.push((q.fused_depth, d));
        }
    }
    (img, fused)
}

/// Range over which depth errors are reported (m).
pub const DEPTH_RANGE: (f64, f64) = (0.0, 40.0);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub split: String,
    pub scenes: usize,
    /// `(class, threshold, AP)` for present classes.
    pub per_class_ap: Vec<(usize, f64, f64)>,
    pub map: Option<f64>,
    pub per_origin_map: Vec<(Origin, Option<f64>)>,
    pub depth_mae_image: Option<f64>,
    pub depth_mae_fused: Option<f64>,
    /// Mean BEV center error of true positives at the 2 m threshold.
    pub translation_error: Option<f64>,
    /// Fused-pass matched counts by query origin.
    pub supervision: SupervisionStats,
    /// Mean per-pass losses `[2d, 3d, fused]` on this split.
    pub losses: [f64; 3],
    pub absent_classes: Vec<usize>,
}

fn translation_error(frames: &[Frame], classes: &[usize]) -> Option<f64> {
    let mut errs = Vec::new();
    for &c in classes {
        for f in frames {
            let mut dets: Vec<&Detection> = f.detections.iter().filter(|d| d.class_id == c).collect();
            dets.sort_by(|a, b| by_score_then_position(a, b));
            let mut taken = vec![false; f.gts.len()];
            for d in dets {
                let best = f
                    .gts
                    .iter()
                    .enumerate()
                    .filter(|(gi, g)| g.class_id == c && !taken[*gi])
                    .map(|(gi, g)| (gi, g.bev_distance(&d.bbox)))
                    .filter(|(_, dist)| *dist <= 2.0)
                    .min_by(|a, b| a.1.total_cmp(&b.1));
                if let Some((gi, dist)) = best {
                    taken[gi] = true;
                    errs.push(dist);
                }
            }
        }
    }
    (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Assembles an [`EvalReport`] from per-scene frames and extras.
pub fn report_from_frames(
    split: &str,
    frames: &[Frame],
    supervision: SupervisionStats,
    depth: (&[(f64, f64)], &[(f64, f64)]),
    losses: [f64; 3],
) -> EvalReport {
    let classes: Vec<usize> = (0..NUM_CLASSES).collect();
    let present = present_classes(frames, &classes);
    let mut per_class_ap = Vec::new();
    for &c in &present {
        for t in DEFAULT_THRESHOLDS {
            per_class_ap.push((c, t, average_precision(frames, c, t)));
        }
    }
    EvalReport {
        split: split.to_string(),
        scenes: frames.len(),
        per_class_ap,
        map: map_score(frames, &classes, &DEFAULT_THRESHOLDS),
        per_origin_map: [Origin::From2D, Origin::From3D]
            .into_iter()
            .map(|o| (o, map_score(&frames_for_origin(frames, o), &classes, &DEFAULT_THRESHOLDS)))
            .collect(),
        depth_mae_image: depth_mae(depth.0, DEPTH_RANGE),
        depth_mae_fused: depth_mae(depth.1, DEPTH_RANGE),
        translation_error: translation_error(frames, &present),
        supervision,
        losses,
        absent_classes: classes.into_iter().filter(|c| !present.contains(c)).collect(),
    }
}

impl EvalReport {
    pub fn origin_map(&self, origin: Origin) -> Option<f64> {
        self.per_origin_map.iter().find(|(o, _)| *o == origin).and_then(|(_, m)| *m)
    }
}

/// Settings shared by every evaluation of a trained model.
#[derive(Debug, Clone)]
pub struct EvalSetup<'a> {
    pub pipeline: &'a PipelineConfig,
    pub confnet: &'a ConfidenceNet,
    pub lambda: LambdaMode,
    pub matching: &'a MatchWeights,
    pub seed: u64,
}

/// Per-scene output of the fused pass plus its matching against gt.
pub struct SceneEval {
    pub frame: Frame,
    pub fused_match: Option<(MatchResult, Vec<Origin>)>,
    pub depth_image: Vec<(f64, f64)>,
    pub depth_fused: Vec<(f64, f64)>,
    pub losses: [f64; 3],
}

/// Evaluates one scene: the fused pass for detections, and (without
/// gradients) all three passes for loss reporting.
pub fn evaluate_scene(weights: &DecoderWeights, scene: &Scene, index: usize, setup: &EvalSetup<'_>) -> Result<SceneEval> {
    let sample = build_sample(scene, setup.pipeline, setup.confnet, setup.lambda, None, derive_seed(setup.seed, &[index as u64]))?;
    let detections = crate::decoder::predict(weights, &sample, setup.pipeline.scene_radius)?;
    let (depth_image, depth_fused) = depth_pairs(scene, &sample);
    let loss = sample_losses(weights, &sample, setup.matching)?;
    let fused_match = loss
        .matches
        .iter()
        .find(|(p, _, _)| *p == PassKind::Fused)
        .map(|(_, m, o)| (m.clone(), o.clone()));
    Ok(SceneEval {
        frame: Frame {
            detections,
            gts: scene.gt_boxes.clone(),
        },
        fused_match,
        depth_image,
        depth_fused,
        losses: [
            loss.pass_total(PassKind::TwoDOnly),
            loss.pass_total(PassKind::ThreeDOnly),
            loss.pass_total(PassKind::Fused),
        ],
    })
}

/// Full evaluation of a model on one split. Scenes are processed in
/// parallel; results are reduced in scene order.
pub fn evaluate_model(weights: &DecoderWeights, split: &str, scenes: &[Scene], setup: &EvalSetup<'_>) -> Result<EvalReport> {
    use rayon::prelude::*;
    let per_scene: Vec<SceneEval> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, s)| evaluate_scene(weights, s, i, setup))
        .collect::<Result<Vec<_>>>()?;
    let frames: Vec<Frame> = per_scene.iter().map(|s| s.frame.clone()).collect();
    let sup = supervision_stats(per_scene.iter().filter_map(|s| s.fused_match.as_ref()).map(|(m, o)| (m, o.as_slice())));
    let img: Vec<(f64, f64)> = per_scene.iter().flat_map(|s| s.depth_image.iter().copied()).collect();
    let fused: Vec<(f64, f64)> = per_scene.iter().flat_map(|s| s.depth_fused.iter().copied()).collect();
    let n = per_scene.len().max(1) as f64;
    let mut losses = [0.0; 3];
    for s in &per_scene {
        for k in 0..3 {
            losses[k] += s.losses[k] / n;
        }
    }
    Ok(report_from_frames(split, &frames, sup, (&img, &fused), losses))
}

/// Pilot measurements of one split, taken on proposals alone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PilotRow {
    pub split: String,
    pub scenes: usize,
    /// 2D mAP@IoU0.5 of native image proposals.
    pub map2d_native: Option<f64>,
    /// 2D mAP@IoU0.5 of LiDAR proposals projected into the images.
    pub map2d_projected: Option<f64>,
    /// 3D mAP of queries taken as boxes, by origin.
    pub map3d_from_2d: Option<f64>,
    pub map3d_from_3d: Option<f64>,
    /// Fused-set matched counts when queries are scored as-is.
    pub supervision: SupervisionStats,
    pub depth_mae_image: Option<f64>,
    pub depth_mae_fused: Option<f64>,
}

/// A query taken as a prediction before any decoding: logit `ln(score)` on
/// its proposal class, `ln(1 - score)` on background.
fn raw_prediction(score: f64, class_id: usize, params: crate::matching::BoxParams) -> Prediction {
    let mut logits = [-30.0; NUM_LOGITS];
    logits[class_id] = score.max(1e-9).ln();
    logits[BACKGROUND] = (1.0 - score).max(1e-9).ln();
    Prediction { logits, params }
}

/// Proposal-level pilot study on one split.
pub fn pilot_split(split: &str, scenes: &[Scene], cfg: &PipelineConfig, lambda: LambdaMode, confnet: &ConfidenceNet, w: &MatchWeights, seed: u64) -> Result<PilotRow> {
    use rayon::prelude::*;
    struct Part {
        native: Vec<ImageFrame>,
        projected: Vec<ImageFrame>,
        frame: Frame,
        matched: MatchResult,
        origins: Vec<Origin>,
        img: Vec<(f64, f64)>,
        fused: Vec<(f64, f64)>,
    }
    let parts: Vec<Part> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, scene)| -> Result<Part> {
            let s = build_sample(scene, cfg, confnet, lambda, None, derive_seed(seed, &[i as u64]))?;
            let mut native = Vec::new();
            let mut projected = Vec::new();
            for cam in 0..scene.cameras.len() {
                let gts: Vec<Box2D> = projected_gts(scene, cam).into_iter().map(|(_, b)| b).collect();
                native.push(ImageFrame {
                    detections: s.proposals.proposals_2d.iter().filter(|p| p.camera == cam).map(|p| p.bbox).collect(),
                    gts: gts.clone(),
                });
                projected.push(ImageFrame {
                    detections: s
                        .proposals
                        .proposals_3d
                        .iter()
                        .filter_map(|p| {
                            let b = project_box3d(&scene.cameras[cam], &p.bbox)?;
                            Box2D::new(b.x_min, b.y_min, b.x_max, b.y_max, p.bbox.score, p.bbox.class_id).ok()
                        })
                        .collect(),
                    gts,
                });
            }
            let mut preds = Vec::new();
            let mut detections = Vec::new();
            let mut origins = Vec::new();
            for (q, p) in s.sets.queries_2d.iter().zip(&s.proposals.proposals_2d) {
                let pred = raw_prediction(p.bbox.score, p.bbox.class_id, q.anchor);
                detections.push(Detection {
                    bbox: denormalize_box(&q.anchor, cfg.scene_radius, p.bbox.score, p.bbox.class_id),
                    score: p.bbox.score,
                    class_id: p.bbox.class_id,
                    origin: Origin::From2D,
                });
                preds.push(pred);
                origins.push(Origin::From2D);
            }
            for p in &s.proposals.proposals_3d {
                preds.push(raw_prediction(p.bbox.score, p.bbox.class_id, crate::matching::normalize_box(&p.bbox, cfg.scene_radius)));
                detections.push(Detection {
                    bbox: p.bbox,
                    score: p.bbox.score,
                    class_id: p.bbox.class_id,
                    origin: Origin::From3D,
                });
                origins.push(Origin::From3D);
            }
            let matched = assign_queries(&preds, &scene.gt_boxes, w)?;
            let (img, fused) = depth_pairs(scene, &s);
            Ok(Part {
                native,
                projected,
                frame: Frame {
                    detections,
                    gts: scene.gt_boxes.clone(),
                },
                matched,
                origins,
                img,
                fused,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let classes: Vec<usize> = (0..NUM_CLASSES).collect();
    let native: Vec<ImageFrame> = parts.iter().flat_map(|p| p.native.iter().cloned()).collect();
    let projected: Vec<ImageFrame> = parts.iter().flat_map(|p| p.projected.iter().cloned()).collect();
    let frames: Vec<Frame> = parts.iter().map(|p| p.frame.clone()).collect();
    let img: Vec<(f64, f64)> = parts.iter().flat_map(|p| p.img.iter().copied()).collect();
    let fused: Vec<(f64, f64)> = parts.iter().flat_map(|p| p.fused.iter().copied()).collect();
    Ok(PilotRow {
        split: split.to_string(),
        scenes: scenes.len(),
        map2d_native: map_2d(&native, &classes, 0.5),
        map2d_projected: map_2d(&projected, &classes, 0.5),
        map3d_from_2d: map_score(&frames_for_origin(&frames, Origin::From2D), &classes, &DEFAULT_THRESHOLDS),
        map3d_from_3d: map_score(&frames_for_origin(&frames, Origin::From3D), &classes, &DEFAULT_THRESHOLDS),
        supervision: supervision_stats(parts.iter().map(|p| (&p.matched, p.origins.as_slice()))),
        depth_mae_image: depth_mae(&img, DEPTH_RANGE),
        depth_mae_fused: depth_mae(&fused, DEPTH_RANGE),
    })
}

/// Loss of all three passes without gradients, for reporting.
pub fn sample_losses(weights: &DecoderWeights, sample: &Sample, w: &MatchWeights) -> Result<crate::decoder::SampleLoss> {
    decoupled_loss(weights, &sample.sets, &sample.tokens, &sample.gts, &PassKind::ALL, w, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn gt(x: f64, y: f64, cls: usize) -> Box3D {
        Box3D::new(Vector3::new(x, y, 0.8), Vector3::new(4.0, 2.0, 1.6), 0.0, 1.0, cls).unwrap()
    }

    fn det(b: &Box3D, score: f64) -> Detection {
        Detection {
            bbox: *b,
            score,
            class_id: b.class_id,
            origin: Origin::From3D,
        }
    }

    #[test]
    fn perfect_and_empty() {
        let gts = vec![gt(10.0, 0.0, 0), gt(-10.0, 5.0, 0), gt(3.0, 20.0, 1)];
        let perfect = vec![Frame {
            detections: gts.iter().map(|g| det(g, 1.0)).collect(),
            gts: gts.clone(),
        }];
        assert_eq!(average_precision(&perfect, 0, 0.5), 1.0);
        assert_eq!(map_score(&perfect, &[0, 1, 2], &DEFAULT_THRESHOLDS), Some(1.0));
        let none = vec![Frame {
            detections: vec![],
            gts,
        }];
        assert_eq!(average_precision(&none, 0, 2.0), 0.0);
        assert_eq!(map_score(&none, &[0, 1, 2], &DEFAULT_THRESHOLDS), Some(0.0));
    }

    #[test]
    fn hand_pr_curve() {
        // PR points (r=0.5, p=1) then (r=0.5, p=0.5): 21 of 41 recall levels
        // see precision 1.
        let gts = vec![gt(10.0, 0.0, 0), gt(-10.0, 5.0, 0)];
        let frames = vec![Frame {
            detections: vec![det(&gts[0], 0.9), det(&gt(30.0, 30.0, 0), 0.4)],
            gts,
        }];
        assert!((average_precision(&frames, 0, 1.0) - 21.0 / 41.0).abs() < 1e-12);
        assert_eq!(map_score(&frames, &[0], &[1.0]), Some(average_precision(&frames, 0, 1.0)));
    }

    #[test]
    fn duplicates_count_once() {
        let gts = vec![gt(10.0, 0.0, 0)];
        let frames = vec![Frame {
            detections: vec![det(&gts[0], 0.9), det(&gts[0], 0.8)],
            gts,
        }];
        let ap = average_precision(&frames, 0, 1.0);
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn absent_classes_excluded() {
        let gts = vec![gt(10.0, 0.0, 0)];
        let frames = vec![Frame {
            detections: vec![det(&gts[0], 0.9)],
            gts,
        }];
        assert_eq!(map_score(&frames, &[0, 1, 2], &[1.0]), Some(1.0));
        let empty = vec![Frame::default()];
        assert_eq!(map_score(&empty, &[0, 1, 2], &[1.0]), None);
    }

    #[test]
    fn depth_mae_cases() {
        assert_eq!(depth_mae(&[(5.0, 5.0), (12.0, 12.0)], DEPTH_RANGE), Some(0.0));
        assert_eq!(depth_mae(&[(6.0, 5.0), (13.0, 12.0), (99.0, 45.0)], DEPTH_RANGE), Some(1.0));
        assert_eq!(depth_mae(&[(6.0, 50.0)], DEPTH_RANGE), None);
    }

    #[test]
    fn two_d_ap() {
        let g = Box2D::new(10.0, 10.0, 30.0, 30.0, 1.0, 0).unwrap();
        let images = vec![ImageFrame {
            detections: vec![g],
            gts: vec![g],
        }];
        assert_eq!(average_precision_2d(&images, 0, 0.5), 1.0);
        let shifted = Box2D::new(25.0, 25.0, 45.0, 45.0, 1.0, 0).unwrap();
        let images = vec![ImageFrame {
            detections: vec![shifted],
            gts: vec![g],
        }];
        assert_eq!(average_precision_2d(&images, 0, 0.5), 0.0);
    }
}
