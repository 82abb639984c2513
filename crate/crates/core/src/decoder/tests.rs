use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::matching::focal;
use crate::scenesim::{generate_scene, SimConfig};

fn random_box(rng: &mut ChaCha8Rng) -> Box3D {
    Box3D::new(
        Vector3::new(rng.random_range(-12.0..12.0), rng.random_range(-12.0..12.0), rng.random_range(0.5..1.5)),
        Vector3::new(rng.random_range(0.8..5.0), rng.random_range(0.7..2.5), rng.random_range(1.4..2.0)),
        rng.random_range(-3.0..3.0),
        1.0,
        rng.random_range(0..3),
    )
    .unwrap()
}

fn random_query(rng: &mut ChaCha8Rng, origin: Origin) -> QueryInput {
    let b = random_box(rng);
    QueryInput {
        content: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
        origin,
        ref_point: b.center,
        anchor: normalize_box(&b, 40.0),
    }
}

/// A small random problem: 1-3 queries per modality, a handful of tokens
/// near the origin, 1-3 gts.
fn toy(seed: u64) -> (QuerySets, SceneTokens, Vec<Box3D>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sets = QuerySets {
        queries_2d: (0..rng.random_range(1..4)).map(|_| random_query(&mut rng, Origin::From2D)).collect(),
        queries_3d: (0..rng.random_range(1..4)).map(|_| random_query(&mut rng, Origin::From3D)).collect(),
    };
    let nt = rng.random_range(3..8);
    let tokens = SceneTokens {
        features: (0..nt).map(|_| (0..TOKEN_FEATURES).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
        positions: (0..nt)
            .map(|_| Vector3::new(rng.random_range(-12.0..12.0), rng.random_range(-12.0..12.0), rng.random_range(0.0..2.0)))
            .collect(),
    };
    let gts = (0..rng.random_range(1..4)).map(|_| random_box(&mut rng)).collect();
    (sets, tokens, gts)
}

fn random_weights(seed: u64) -> DecoderWeights {
    let mut w = DecoderWeights::new(DecoderConfig::default(), seed);
    w.randomize(0.3, seed);
    w
}

#[test]
fn zero_box_head_returns_anchor() {
    let (sets, tokens, _) = toy(1);
    let w = DecoderWeights::new(DecoderConfig::default(), 0);
    let q = vec![sets.queries_3d[0]];
    let out = w.forward(&q, &tokens, PassKind::ThreeDOnly).unwrap();
    assert_eq!(out.predictions[0].params, q[0].anchor);
}

#[test]
fn empty_query_set_is_rejected() {
    let (_, tokens, _) = toy(1);
    let w = DecoderWeights::new(DecoderConfig::default(), 0);
    assert!(matches!(w.forward(&[], &tokens, PassKind::Fused), Err(Error::EmptyQuerySet(PassKind::Fused))));
}

#[test]
fn two_d_pass_ignores_lidar_queries() {
    let w = random_weights(2);
    for seed in 0..20 {
        let (sets, tokens, _) = toy(seed);
        let without = QuerySets {
            queries_2d: sets.queries_2d.clone(),
            queries_3d: Vec::new(),
        };
        let a = w.forward(&sets.for_pass(PassKind::TwoDOnly), &tokens, PassKind::TwoDOnly).unwrap();
        let b = w.forward(&without.for_pass(PassKind::TwoDOnly), &tokens, PassKind::TwoDOnly).unwrap();
        assert_eq!(a.predictions, b.predictions);
        assert_eq!(a.features, b.features);
    }
}

#[test]
fn fused_pass_couples_modalities() {
    let w = random_weights(3);
    let (sets, tokens, _) = toy(4);
    let base = w.forward(&sets.for_pass(PassKind::Fused), &tokens, PassKind::Fused).unwrap();
    let mut perturbed = sets.clone();
    perturbed.queries_2d[0].content[0] += 0.5;
    let out = w.forward(&perturbed.for_pass(PassKind::Fused), &tokens, PassKind::Fused).unwrap();
    let n2 = sets.queries_2d.len();
    let changed = (n2..base.features.len()).any(|i| base.features[i] != out.features[i]);
    assert!(changed);
}

#[test]
fn passes_share_one_storage() {
    let mut w = random_weights(5);
    let (sets, tokens, _) = toy(6);
    let before: Vec<_> = PassKind::ALL.iter().map(|p| w.forward(&sets.for_pass(*p), &tokens, *p).unwrap().features).collect();
    let lay = w.layout();
    w.params_mut()[lay.w1] += 0.3;
    for (i, p) in PassKind::ALL.iter().enumerate() {
        assert_ne!(w.forward(&sets.for_pass(*p), &tokens, *p).unwrap().features, before[i]);
    }
}

fn fixed_matches(w: &DecoderWeights, sets: &QuerySets, tokens: &SceneTokens, gts: &[Box3D], mw: &MatchWeights) -> Vec<MatchResult> {
    decoupled_loss(w, sets, tokens, gts, &PassKind::ALL, mw, None)
        .unwrap()
        .matches
        .into_iter()
        .map(|(_, m, _)| m)
        .collect()
}

#[test]
fn gradients_match_finite_differences() {
    let mw = MatchWeights::default();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for cfg in 0..50u64 {
        let w = random_weights(100 + cfg);
        let (sets, tokens, gts) = toy(200 + cfg);
        let fixed = fixed_matches(&w, &sets, &tokens, &gts, &mw);
        let mut g = vec![0.0; w.num_params()];
        decoupled_loss_with(&w, &sets, &tokens, &gts, &PassKind::ALL, &mw, Some(&fixed), Some(&mut g)).unwrap();
        let loss = |p: &DecoderWeights| {
            decoupled_loss_with(p, &sets, &tokens, &gts, &PassKind::ALL, &mw, Some(&fixed), None)
                .unwrap()
                .total()
        };
        let mut p = w.clone();
        for i in 0..w.num_params() {
            let x = p.params[i];
            p.params[i] = x + h;
            let lp = loss(&p);
            p.params[i] = x - h;
            let lm = loss(&p);
            p.params[i] = x;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-5);
            assert!(rel < 1e-4, "config {cfg} param {i}: analytic {} fd {fd}", g[i]);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-4);
}

#[test]
fn pass_gradients_add_up() {
    let mw = MatchWeights::default();
    for seed in 0..10 {
        let w = random_weights(seed);
        let (sets, tokens, gts) = toy(seed + 50);
        let grad = |passes: &[PassKind]| {
            let mut g = vec![0.0; w.num_params()];
            decoupled_loss(&w, &sets, &tokens, &gts, passes, &mw, Some(&mut g)).unwrap();
            g
        };
        let full = grad(&PassKind::ALL);
        let without = grad(&[PassKind::ThreeDOnly, PassKind::Fused]);
        let only = grad(&[PassKind::TwoDOnly]);
        for i in 0..full.len() {
            assert!((full[i] - without[i] - only[i]).abs() <= 1e-12, "param {i}");
        }
    }
}

/// Predictions that hit every gt exactly with probability one.
fn perfect(gts: &[Box3D]) -> (Vec<Prediction>, MatchResult) {
    let preds: Vec<Prediction> = gts
        .iter()
        .map(|g| {
            let mut logits = [0.0; NUM_LOGITS];
            logits[g.class_id] = 1000.0;
            Prediction {
                logits,
                params: normalize_box(g, 40.0),
            }
        })
        .collect();
    let m = assign_queries(&preds, gts, &MatchWeights::default()).unwrap();
    (preds, m)
}

#[test]
fn perfect_predictions_cost_nothing() {
    let (_, tokens, gts) = toy(9);
    let (preds, m) = perfect(&gts);
    assert_eq!(m.pairs.len(), gts.len());
    let l = pass_loss(PassKind::Fused, &preds, &m, &gts, &MatchWeights::default());
    assert_eq!(l.bbox, 0.0);
    assert_eq!(l.cls, 0.0);
    assert!(l.dboxes.iter().flatten().all(|d| *d == 0.0));

    // Backpropagating the zero loss leaves the box head untouched.
    let w = random_weights(9);
    let queries: Vec<QueryInput> = (0..gts.len()).map(|i| random_query(&mut ChaCha8Rng::seed_from_u64(i as u64), Origin::From3D)).collect();
    let out = w.forward(&queries, &tokens, PassKind::ThreeDOnly).unwrap();
    let mut g = vec![0.0; w.num_params()];
    w.backward(&out.cache, &tokens, &l.dlogits, &l.dboxes, &mut g);
    let lay = w.layout();
    assert!(g[lay.wb..lay.bb + NB].iter().all(|x| *x == 0.0));
}

#[test]
fn empty_gts_leave_background_terms() {
    let mw = MatchWeights::default();
    let preds = vec![
        Prediction {
            logits: [0.3, -0.2, 0.1, 0.5],
            params: [0.0; NB],
        },
        Prediction {
            logits: [1.0, 0.0, 0.0, -1.0],
            params: [0.1; NB],
        },
    ];
    let m = assign_queries(&preds, &[], &mw).unwrap();
    let l = pass_loss(PassKind::Fused, &preds, &m, &[], &mw);
    assert_eq!(l.bbox, 0.0);
    let expected: f64 = preds.iter().map(|p| focal(softmax(&p.logits)[BACKGROUND], 0.25, 2.0)).sum();
    assert!((l.cls - expected).abs() < 1e-12);
}

#[test]
fn hand_two_queries_one_gt() {
    let mw = MatchWeights::default();
    let gt = Box3D::new(Vector3::new(10.0, 4.0, 0.8), Vector3::new(4.0, 2.0, 1.6), 0.5, 1.0, 0).unwrap();
    let target = normalize_box(&gt, 40.0);
    // Query 0: right class, box off by 0.05 in x; query 1: wrong class.
    let mut near = target;
    near[0] += 0.05;
    let preds = vec![
        Prediction {
            logits: [2.0, 0.0, 0.0, 0.0],
            params: near,
        },
        Prediction {
            logits: [0.0, 2.0, 0.0, 0.0],
            params: target,
        },
    ];
    let m = assign_queries(&preds, std::slice::from_ref(&gt), &mw).unwrap();
    assert_eq!(m.pairs, vec![(0, 0)]);
    let l = pass_loss(PassKind::Fused, &preds, &m, std::slice::from_ref(&gt), &mw);
    // Hand values: softmax of (2,0,0,0) gives e^2/(e^2+3) on the first entry.
    let e2 = 2.0f64.exp();
    let p_cls = e2 / (e2 + 3.0);
    let p_bg = 1.0 / (e2 + 3.0);
    let fl = |p: f64| 0.25 * (1.0 - p).powi(2) * -p.ln();
    let hand = fl(p_cls) + fl(p_bg) + 0.25 * 0.05;
    assert!((l.total() - hand).abs() < 1e-12, "{} vs {hand}", l.total());
}

#[test]
fn decoupling_leaves_fused_pass_unchanged() {
    let mw = MatchWeights::default();
    let w = DecoderWeights::new(DecoderConfig::default(), 11);
    let (sets, tokens, gts) = toy(11);
    let on = decoupled_loss(&w, &sets, &tokens, &gts, active_passes(true), &mw, None).unwrap();
    let off = decoupled_loss(&w, &sets, &tokens, &gts, active_passes(false), &mw, None).unwrap();
    assert_eq!(on.pass_total(PassKind::Fused), off.pass_total(PassKind::Fused));
    assert_eq!(off.losses.len(), 1);
    let fused_on = on.matches.iter().find(|m| m.0 == PassKind::Fused).unwrap();
    assert_eq!(fused_on.1, off.matches[0].1);
}

#[test]
fn json_round_trip_and_checks() {
    let w = random_weights(12);
    let back = DecoderWeights::from_json(&w.to_json()).unwrap();
    assert_eq!(back, w);
    let wrong = w.to_json().replace(VERSION, "ccf-decoder-v0");
    assert!(matches!(DecoderWeights::from_json(&wrong), Err(Error::VersionMismatch { .. })));
    let mut v: serde_json::Value = serde_json::from_str(&w.to_json()).unwrap();
    v["params"].as_array_mut().unwrap().pop();
    assert!(DecoderWeights::from_json(&v.to_string()).is_err());
}

fn small_scenes(n: u64) -> Vec<crate::scenesim::Scene> {
    let cfg = SimConfig::default();
    (0..n).map(|s| generate_scene(&cfg, s).unwrap()).collect()
}

#[test]
fn zero_learning_rate_keeps_weights() {
    let scenes = small_scenes(3);
    let cfg = TrainConfig {
        epochs: 3,
        lr: 0.0,
        batch_size: 2,
        depth_prior: false,
        ..TrainConfig::default()
    };
    let out = train(&scenes, &[], &cfg, 5).unwrap();
    assert_eq!(out.weights, DecoderWeights::new(cfg.decoder, 5));
    let rows: Vec<&EpochMetrics> = out.log.iter().filter(|r| r.split == "train").collect();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert!((r.loss_total - rows[0].loss_total).abs() <= 1e-12 * rows[0].loss_total.abs().max(1.0));
    }
}

#[test]
fn short_training_reduces_loss() {
    let scenes = small_scenes(5);
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 1,
        ..TrainConfig::default()
    };
    let out = train(&scenes, &[], &cfg, 6).unwrap();
    let rows: Vec<&EpochMetrics> = out.log.iter().filter(|r| r.split == "train").collect();
    let (first, last) = (rows[0].loss_total, rows.last().unwrap().loss_total);
    assert!(last < first, "{first} -> {last}");
    let again = train(&scenes, &[], &cfg, 6).unwrap();
    assert_eq!(again.weights, out.weights);
}

#[test]
fn inference_runs_only_the_fused_pass() {
    let scenes = small_scenes(1);
    let pcfg = crate::pipeline::PipelineConfig::default();
    let net = crate::depthprior::ConfidenceNet::with_defaults(25, 0);
    let sample = crate::pipeline::build_sample(&scenes[0], &pcfg, &net, crate::depthprior::LambdaMode::Learned, None, 1).unwrap();
    let w = DecoderWeights::new(DecoderConfig::default(), 0);
    reset_pass_counts();
    let dets = predict(&w, &sample, 40.0).unwrap();
    assert_eq!(pass_counts(), [0, 0, 1]);
    assert_eq!(dets.len(), sample.sets.queries_2d.len() + sample.sets.queries_3d.len());
    assert!(dets.iter().all(|d| (0.0..=1.0).contains(&d.score)));
}
