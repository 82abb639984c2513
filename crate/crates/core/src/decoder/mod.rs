//! One-layer query decoder with hand-written backpropagation, run as three
//! weight-shared passes over different query sets.
//!
//! Layer: input embedding (content + origin embedding + Fourier features of
//! the reference point) -> self-attention with a distance bias -> cross-
//! attention to scene tokens with a distance bias, relative-offset values and
//! a fixed zero-valued sink -> tanh feed-forward -> class and box heads. All
//! sublayers are residual; there is no normalization.

mod tokens;
mod train;

pub use tokens::{SceneTokens, TokenConfig, TOKEN_FEATURES};
pub use train::{pass_counts, predict, reset_pass_counts, train, EpochMetrics, TrainConfig, TrainOutcome};

use std::cell::Cell;
use std::path::Path;

use nalgebra::Vector3;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::depthprior::QUERY_DIM;
use crate::error::{Error, Result};
use crate::evalkit::Origin;
use crate::matching::{assign_queries, box_residual, normalize_box, softmax, BoxParams, MatchResult, MatchWeights, Prediction, BACKGROUND, NUM_LOGITS};
use crate::geometry::Box3D;
use crate::rng::{rng_for, tag};

const VERSION: &str = "ccf-decoder-v1";
const C: usize = QUERY_DIM;
const NF: usize = 8;
const NB: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PassKind {
    TwoDOnly,
    ThreeDOnly,
    Fused,
}

impl PassKind {
    pub const ALL: [PassKind; 3] = [PassKind::TwoDOnly, PassKind::ThreeDOnly, PassKind::Fused];

    pub fn as_str(&self) -> &'static str {
        match self {
            PassKind::TwoDOnly => "2d",
            PassKind::ThreeDOnly => "3d",
            PassKind::Fused => "fused",
        }
    }

    fn index(&self) -> usize {
        *self as usize
    }
}

thread_local! {
    static PASS_CALLS: [Cell<usize>; 3] = const { [Cell::new(0), Cell::new(0), Cell::new(0)] };
}

/// Decoder input for one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryInput {
    pub content: [f64; C],
    pub origin: Origin,
    pub ref_point: Vector3<f64>,
    /// Box the residual head is added to, in normalized parameters.
    pub anchor: BoxParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub ffn_dim: usize,
    /// Self-attention distance bias `-|dr|^2 / tau_self` (m^2).
    pub tau_self: f64,
    pub tau_cross: f64,
    /// Constant logit of the zero-valued cross-attention sink.
    pub sink_logit: f64,
    /// Relative token offsets are divided by this (m).
    pub offset_scale: f64,
    pub scene_radius: f64,
    pub init_scale: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            ffn_dim: 32,
            tau_self: 16.0,
            tau_cross: 4.0,
            sink_logit: -2.25,
            offset_scale: 4.0,
            scene_radius: 40.0,
            init_scale: 0.2,
        }
    }
}

/// Offsets of every tensor in the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    e2d: usize,
    e3d: usize,
    pos: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    wq2: usize,
    wk2: usize,
    wv2: usize,
    wr: usize,
    wo2: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wc: usize,
    bc: usize,
    wb: usize,
    bb: usize,
    len: usize,
}

impl Layout {
    fn new(f: usize) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let s = at;
            at += n;
            s
        };
        let e2d = take(C);
        let e3d = take(C);
        let pos = take(C * NF);
        let wq = take(C * C);
        let wk = take(C * C);
        let wv = take(C * C);
        let wo = take(C * C);
        let wq2 = take(C * C);
        let wk2 = take(C * C);
        let wv2 = take(C * TOKEN_FEATURES);
        let wr = take(C * 3);
        let wo2 = take(C * C);
        let w1 = take(f * C);
        let b1 = take(f);
        let w2 = take(C * f);
        let b2 = take(C);
        let wc = take(NUM_LOGITS * C);
        let bc = take(NUM_LOGITS);
        let wb = take(NB * C);
        let bb = take(NB);
        Layout {
            e2d,
            e3d,
            pos,
            wq,
            wk,
            wv,
            wo,
            wq2,
            wk2,
            wv2,
            wr,
            wo2,
            w1,
            b1,
            w2,
            b2,
            wc,
            bc,
            wb,
            bb,
            len: at,
        }
    }
}

/// The single parameter storage shared by all three passes.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderWeights {
    pub config: DecoderConfig,
    params: Vec<f64>,
}

fn mv(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    (0..rows).map(|r| w[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn mtv(w: &[f64], rows: usize, cols: usize, y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        let yr = y[r];
        if yr == 0.0 {
            continue;
        }
        for c in 0..cols {
            out[c] += w[r * cols + c] * yr;
        }
    }
    out
}

fn outer_acc(g: &mut [f64], rows: usize, cols: usize, a: &[f64], b: &[f64]) {
    for r in 0..rows {
        let ar = a[r];
        if ar == 0.0 {
            continue;
        }
        for c in 0..cols {
            g[r * cols + c] += ar * b[c];
        }
    }
}

fn add_into(a: &mut [f64], b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax_vec(s: &[f64]) -> Vec<f64> {
    let m = s.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
    let t: f64 = e.iter().sum();
    e.into_iter().map(|x| x / t).collect()
}

/// Fourier features of the normalized horizontal reference position.
fn fourier(r: &Vector3<f64>, radius: f64) -> [f64; NF] {
    let (x, y) = (r.x / radius, r.y / radius);
    let pi = std::f64::consts::PI;
    [
        (pi * x).sin(),
        (pi * x).cos(),
        (2.0 * pi * x).sin(),
        (2.0 * pi * x).cos(),
        (pi * y).sin(),
        (pi * y).cos(),
        (2.0 * pi * y).sin(),
        (2.0 * pi * y).cos(),
    ]
}

/// Forward activations of one pass.
#[derive(Debug, Clone)]
pub struct PassCache {
    pass: PassKind,
    origins: Vec<Origin>,
    phi: Vec<[f64; NF]>,
    x0: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    attn: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
    x1: Vec<Vec<f64>>,
    q2: Vec<Vec<f64>>,
    k2: Vec<Vec<f64>>,
    /// Cross-attention weights; the last entry of each row is the sink.
    cross: Vec<Vec<f64>>,
    gbar: Vec<Vec<f64>>,
    dbar: Vec<[f64; 3]>,
    offsets: Vec<Vec<[f64; 3]>>,
    g: Vec<Vec<f64>>,
    x2: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
    x3: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct PassOutput {
    pub predictions: Vec<Prediction>,
    /// Refined query features.
    pub features: Vec<Vec<f64>>,
    pub cache: PassCache,
}

impl PassOutput {
    pub fn origins(&self) -> &[Origin] {
        &self.cache.origins
    }

    pub fn pass(&self) -> PassKind {
        self.cache.pass
    }
}

impl DecoderWeights {
    /// Small Gaussian init; the box head starts at zero so the initial boxes
    /// are exactly the anchors.
    pub fn new(config: DecoderConfig, seed: u64) -> Self {
        let lay = Layout::new(config.ffn_dim);
        let mut rng = rng_for(seed, &[tag::INIT, 3]);
        let mut params = vec![0.0; lay.len];
        let fill = |params: &mut [f64], start: usize, n: usize, fan_in: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            let nrm = Normal::new(0.0, config.init_scale / (fan_in as f64).sqrt().max(1.0) * 2.0).expect("finite");
            for p in &mut params[start..start + n] {
                *p = nrm.sample(rng);
            }
        };
        fill(&mut params, lay.e2d, 2 * C, 1, &mut rng);
        fill(&mut params, lay.pos, C * NF, NF, &mut rng);
        for start in [lay.wq, lay.wk, lay.wv, lay.wo, lay.wq2, lay.wk2, lay.wo2] {
            fill(&mut params, start, C * C, C, &mut rng);
        }
        fill(&mut params, lay.wv2, C * TOKEN_FEATURES, TOKEN_FEATURES, &mut rng);
        fill(&mut params, lay.wr, C * 3, 3, &mut rng);
        fill(&mut params, lay.w1, config.ffn_dim * C, C, &mut rng);
        fill(&mut params, lay.w2, C * config.ffn_dim, config.ffn_dim, &mut rng);
        fill(&mut params, lay.wc, NUM_LOGITS * C, C, &mut rng);
        Self { config, params }
    }

    /// Weights that pass LiDAR proposals through unchanged: every sublayer
    /// output is zero, the class head reads the class one-hot of the query
    /// content, and image queries are pushed to background.
    pub fn lidar_passthrough(config: DecoderConfig) -> Self {
        let lay = Layout::new(config.ffn_dim);
        let mut params = vec![0.0; lay.len];
        for k in 0..BACKGROUND {
            params[lay.wc + k * C + 1 + k] = 12.0;
        }
        params[lay.e2d + C - 1] = 1.0;
        params[lay.wc + BACKGROUND * C + C - 1] = 30.0;
        Self { config, params }
    }

    fn layout(&self) -> Layout {
        Layout::new(self.config.ffn_dim)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Replaces every parameter with N(0, scale^2), for randomized checks.
    pub fn randomize(&mut self, scale: f64, seed: u64) {
        let mut rng = rng_for(seed, &[tag::INIT, 4]);
        let n = Normal::new(0.0, scale).expect("finite");
        for p in &mut self.params {
            *p = n.sample(&mut rng);
        }
    }

    /// Runs one pass over `queries` (the caller selects the pass's query set).
    pub fn forward(&self, queries: &[QueryInput], tokens: &SceneTokens, pass: PassKind) -> Result<PassOutput> {
        if queries.is_empty() {
            return Err(Error::EmptyQuerySet(pass));
        }
        PASS_CALLS.with(|c| c[pass.index()].set(c[pass.index()].get() + 1));
        let lay = self.layout();
        let cfg = &self.config;
        let f = cfg.ffn_dim;
        let p = &self.params;
        let n = queries.len();
        let sc = 1.0 / (C as f64).sqrt();

        let phi: Vec<[f64; NF]> = queries.iter().map(|q| fourier(&q.ref_point, cfg.scene_radius)).collect();
        let x0: Vec<Vec<f64>> = queries
            .iter()
            .zip(&phi)
            .map(|(q, ph)| {
                let e = match q.origin {
                    Origin::From2D => &p[lay.e2d..lay.e2d + C],
                    _ => &p[lay.e3d..lay.e3d + C],
                };
                let pe = mv(&p[lay.pos..], C, NF, ph);
                (0..C).map(|i| q.content[i] + e[i] + pe[i]).collect()
            })
            .collect();

        // Self-attention.
        let q: Vec<Vec<f64>> = x0.iter().map(|x| mv(&p[lay.wq..], C, C, x)).collect();
        let k: Vec<Vec<f64>> = x0.iter().map(|x| mv(&p[lay.wk..], C, C, x)).collect();
        let v: Vec<Vec<f64>> = x0.iter().map(|x| mv(&p[lay.wv..], C, C, x)).collect();
        let mut attn = Vec::with_capacity(n);
        let mut h = Vec::with_capacity(n);
        let mut x1 = Vec::with_capacity(n);
        for i in 0..n {
            let s: Vec<f64> = (0..n)
                .map(|j| sc * dot(&q[i], &k[j]) - (queries[i].ref_point - queries[j].ref_point).norm_squared() / cfg.tau_self)
                .collect();
            let a = softmax_vec(&s);
            let mut hi = vec![0.0; C];
            for j in 0..n {
                for c in 0..C {
                    hi[c] += a[j] * v[j][c];
                }
            }
            let o = mv(&p[lay.wo..], C, C, &hi);
            x1.push((0..C).map(|c| x0[i][c] + o[c]).collect::<Vec<f64>>());
            attn.push(a);
            h.push(hi);
        }

        // Cross-attention to tokens plus sink.
        let k2: Vec<Vec<f64>> = tokens.features.iter().map(|t| mv(&p[lay.wk2..], C, TOKEN_FEATURES, t)).collect();
        let nt = tokens.len();
        let mut q2 = Vec::with_capacity(n);
        let mut cross = Vec::with_capacity(n);
        let mut gbar = Vec::with_capacity(n);
        let mut dbar = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(n);
        let mut g = Vec::with_capacity(n);
        let mut x2 = Vec::with_capacity(n);
        for i in 0..n {
            let qi = mv(&p[lay.wq2..], C, C, &x1[i]);
            let r = queries[i].ref_point;
            let off: Vec<[f64; 3]> = tokens
                .positions
                .iter()
                .map(|pm| {
                    let d = (pm - r) / cfg.offset_scale;
                    [d.x, d.y, d.z]
                })
                .collect();
            let mut u: Vec<f64> = (0..nt)
                .map(|m| sc * dot(&qi, &k2[m]) - (tokens.positions[m] - r).norm_squared() / cfg.tau_cross)
                .collect();
            u.push(cfg.sink_logit);
            let b = softmax_vec(&u);
            let mut gb = vec![0.0; TOKEN_FEATURES];
            let mut db = [0.0; 3];
            for m in 0..nt {
                for c in 0..TOKEN_FEATURES {
                    gb[c] += b[m] * tokens.features[m][c];
                }
                for c in 0..3 {
                    db[c] += b[m] * off[m][c];
                }
            }
            let mut gi = mv(&p[lay.wv2..], C, TOKEN_FEATURES, &gb);
            add_into(&mut gi, &mv(&p[lay.wr..], C, 3, &db));
            let o = mv(&p[lay.wo2..], C, C, &gi);
            x2.push((0..C).map(|c| x1[i][c] + o[c]).collect::<Vec<f64>>());
            q2.push(qi);
            cross.push(b);
            gbar.push(gb);
            dbar.push(db);
            offsets.push(off);
            g.push(gi);
        }

        // Feed-forward and heads.
        let mut a = Vec::with_capacity(n);
        let mut x3 = Vec::with_capacity(n);
        let mut predictions = Vec::with_capacity(n);
        for i in 0..n {
            let z = mv(&p[lay.w1..], f, C, &x2[i]);
            let ai: Vec<f64> = (0..f).map(|j| (z[j] + p[lay.b1 + j]).tanh()).collect();
            let o = mv(&p[lay.w2..], C, f, &ai);
            let xi: Vec<f64> = (0..C).map(|c| x2[i][c] + o[c] + p[lay.b2 + c]).collect();
            let lg = mv(&p[lay.wc..], NUM_LOGITS, C, &xi);
            let rs = mv(&p[lay.wb..], NB, C, &xi);
            predictions.push(Prediction {
                logits: std::array::from_fn(|kk| lg[kk] + p[lay.bc + kk]),
                params: std::array::from_fn(|kk| queries[i].anchor[kk] + rs[kk] + p[lay.bb + kk]),
            });
            a.push(ai);
            x3.push(xi);
        }

        Ok(PassOutput {
            predictions,
            features: x3.clone(),
            cache: PassCache {
                pass,
                origins: queries.iter().map(|q| q.origin).collect(),
                phi,
                x0,
                q,
                k,
                v,
                attn,
                h,
                x1,
                q2,
                k2,
                cross,
                gbar,
                dbar,
                offsets,
                g,
                x2,
                a,
                x3,
            },
        })
    }

    /// Accumulates parameter gradients of one pass into `grads` given the
    /// loss gradients w.r.t. its logits and box parameters.
    pub fn backward(&self, cache: &PassCache, tokens: &SceneTokens, dlogits: &[[f64; NUM_LOGITS]], dboxes: &[BoxParams], grads: &mut [f64]) {
        let lay = self.layout();
        let f = self.config.ffn_dim;
        let p = &self.params;
        let n = cache.x0.len();
        let nt = tokens.len();
        let sc = 1.0 / (C as f64).sqrt();

        let mut dx1_all = vec![vec![0.0; C]; n];
        // Heads, feed-forward and cross-attention are per query.
        let mut dk2 = vec![vec![0.0; C]; nt];
        for i in 0..n {
            let x3 = &cache.x3[i];
            outer_acc(&mut grads[lay.wc..], NUM_LOGITS, C, &dlogits[i], x3);
            add_into(&mut grads[lay.bc..lay.bc + NUM_LOGITS], &dlogits[i]);
            outer_acc(&mut grads[lay.wb..], NB, C, &dboxes[i], x3);
            add_into(&mut grads[lay.bb..lay.bb + NB], &dboxes[i]);
            let mut dx3 = mtv(&p[lay.wc..], NUM_LOGITS, C, &dlogits[i]);
            add_into(&mut dx3, &mtv(&p[lay.wb..], NB, C, &dboxes[i]));

            let ai = &cache.a[i];
            outer_acc(&mut grads[lay.w2..], C, f, &dx3, ai);
            add_into(&mut grads[lay.b2..lay.b2 + C], &dx3);
            let da = mtv(&p[lay.w2..], C, f, &dx3);
            let dz: Vec<f64> = (0..f).map(|j| da[j] * (1.0 - ai[j] * ai[j])).collect();
            outer_acc(&mut grads[lay.w1..], f, C, &dz, &cache.x2[i]);
            add_into(&mut grads[lay.b1..lay.b1 + f], &dz);
            let mut dx2 = dx3;
            add_into(&mut dx2, &mtv(&p[lay.w1..], f, C, &dz));

            outer_acc(&mut grads[lay.wo2..], C, C, &dx2, &cache.g[i]);
            let dg = mtv(&p[lay.wo2..], C, C, &dx2);
            outer_acc(&mut grads[lay.wv2..], C, TOKEN_FEATURES, &dg, &cache.gbar[i]);
            outer_acc(&mut grads[lay.wr..], C, 3, &dg, &cache.dbar[i]);
            let dgbar = mtv(&p[lay.wv2..], C, TOKEN_FEATURES, &dg);
            let ddbar = mtv(&p[lay.wr..], C, 3, &dg);
            let b = &cache.cross[i];
            let db: Vec<f64> = (0..nt)
                .map(|m| dot(&dgbar, &tokens.features[m]) + dot(&ddbar, &cache.offsets[i][m]))
                .collect();
            // The sink has zero value, so its upstream gradient is zero.
            let mean: f64 = (0..nt).map(|m| b[m] * db[m]).sum();
            let mut dq2 = vec![0.0; C];
            for m in 0..nt {
                let du = b[m] * (db[m] - mean) * sc;
                if du == 0.0 {
                    continue;
                }
                for c in 0..C {
                    dq2[c] += du * cache.k2[m][c];
                    dk2[m][c] += du * cache.q2[i][c];
                }
            }
            outer_acc(&mut grads[lay.wq2..], C, C, &dq2, &cache.x1[i]);
            let mut dx1 = dx2;
            add_into(&mut dx1, &mtv(&p[lay.wq2..], C, C, &dq2));
            dx1_all[i] = dx1;
        }
        for m in 0..nt {
            outer_acc(&mut grads[lay.wk2..], C, TOKEN_FEATURES, &dk2[m], &tokens.features[m]);
        }

        // Self-attention couples the queries.
        let mut dx0 = dx1_all.clone();
        let mut dq = vec![vec![0.0; C]; n];
        let mut dk = vec![vec![0.0; C]; n];
        let mut dv = vec![vec![0.0; C]; n];
        for i in 0..n {
            outer_acc(&mut grads[lay.wo..], C, C, &dx1_all[i], &cache.h[i]);
            let dh = mtv(&p[lay.wo..], C, C, &dx1_all[i]);
            let a = &cache.attn[i];
            let da: Vec<f64> = (0..n).map(|j| dot(&dh, &cache.v[j])).collect();
            let mean: f64 = (0..n).map(|j| a[j] * da[j]).sum();
            for j in 0..n {
                for c in 0..C {
                    dv[j][c] += a[j] * dh[c];
                }
                let ds = a[j] * (da[j] - mean) * sc;
                for c in 0..C {
                    dq[i][c] += ds * cache.k[j][c];
                    dk[j][c] += ds * cache.q[i][c];
                }
            }
        }
        for i in 0..n {
            let x0 = &cache.x0[i];
            outer_acc(&mut grads[lay.wq..], C, C, &dq[i], x0);
            outer_acc(&mut grads[lay.wk..], C, C, &dk[i], x0);
            outer_acc(&mut grads[lay.wv..], C, C, &dv[i], x0);
            add_into(&mut dx0[i], &mtv(&p[lay.wq..], C, C, &dq[i]));
            add_into(&mut dx0[i], &mtv(&p[lay.wk..], C, C, &dk[i]));
            add_into(&mut dx0[i], &mtv(&p[lay.wv..], C, C, &dv[i]));
            let e = match cache.origins[i] {
                Origin::From2D => lay.e2d,
                _ => lay.e3d,
            };
            add_into(&mut grads[e..e + C], &dx0[i]);
            outer_acc(&mut grads[lay.pos..], C, NF, &dx0[i], &cache.phi[i]);
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&WireDecoder {
            version: VERSION.into(),
            config: self.config,
            params: self.params.clone(),
        })
        .expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            version: String,
        }
        let v: Version = serde_json::from_str(text)?;
        if v.version != VERSION {
            return Err(Error::VersionMismatch {
                expected: VERSION.into(),
                found: v.version,
            });
        }
        let wire: WireDecoder = serde_json::from_str(text)?;
        let expected = Layout::new(wire.config.ffn_dim).len;
        if wire.params.len() != expected {
            return Err(Error::InvalidConfig(format!(
                "decoder weights hold {} parameters, expected {expected}",
                wire.params.len()
            )));
        }
        if wire.params.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("non-finite decoder weight".into()));
        }
        Ok(Self {
            config: wire.config,
            params: wire.params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireDecoder {
    version: String,
    config: DecoderConfig,
    params: Vec<f64>,
}

/// Loss of one pass and its gradients w.r.t. the pass outputs.
#[derive(Debug, Clone)]
pub struct PassLoss {
    pub pass: PassKind,
    pub cls: f64,
    pub bbox: f64,
    pub dlogits: Vec<[f64; NUM_LOGITS]>,
    pub dboxes: Vec<BoxParams>,
}

impl PassLoss {
    pub fn total(&self) -> f64 {
        self.cls + self.bbox
    }
}

/// Focal classification over every query (background target when
/// unmatched) plus L1 box regression on matched pairs, normalized by the
/// number of ground truths.
pub fn pass_loss(pass: PassKind, preds: &[Prediction], matching: &MatchResult, gts: &[Box3D], w: &MatchWeights) -> PassLoss {
    let norm = gts.len().max(1) as f64;
    let mut targets = vec![BACKGROUND; preds.len()];
    for &(q, g) in &matching.pairs {
        targets[q] = gts[g].class_id;
    }
    let mut out = PassLoss {
        pass,
        cls: 0.0,
        bbox: 0.0,
        dlogits: vec![[0.0; NUM_LOGITS]; preds.len()],
        dboxes: vec![[0.0; NB]; preds.len()],
    };
    for (i, pred) in preds.iter().enumerate() {
        let probs = softmax(&pred.logits);
        let t = targets[i];
        let pt = probs[t].max(1e-300);
        let (a, gm) = (w.focal_alpha, w.focal_gamma);
        let one_m = 1.0 - pt;
        out.cls += w.w_cls * a * one_m.powf(gm) * -pt.ln() / norm;
        // dFL/dp_t, then through the softmax.
        let dfl_dp = a * (gm * one_m.powf(gm - 1.0) * pt.ln() - one_m.powf(gm) / pt);
        for kk in 0..NUM_LOGITS {
            let dp = pt * (if kk == t { 1.0 } else { 0.0 } - probs[kk]);
            out.dlogits[i][kk] = w.w_cls * dfl_dp * dp / norm;
        }
    }
    for &(q, g) in &matching.pairs {
        let d = box_residual(&preds[q].params, &normalize_box(&gts[g], w.scene_radius));
        for kk in 0..NB {
            out.bbox += w.w_box * d[kk].abs() / norm;
            out.dboxes[q][kk] = w.w_box * d[kk].signum() * if d[kk] == 0.0 { 0.0 } else { 1.0 } / norm;
        }
    }
    out
}

/// Per-pass query sets of one sample.
#[derive(Debug, Clone, Default)]
pub struct QuerySets {
    pub queries_2d: Vec<QueryInput>,
    pub queries_3d: Vec<QueryInput>,
}

impl QuerySets {
    /// The fused pass sees the image queries first, then the LiDAR queries.
    pub fn for_pass(&self, pass: PassKind) -> Vec<QueryInput> {
        match pass {
            PassKind::TwoDOnly => self.queries_2d.clone(),
            PassKind::ThreeDOnly => self.queries_3d.clone(),
            PassKind::Fused => self.queries_2d.iter().chain(&self.queries_3d).copied().collect(),
        }
    }
}

/// Which passes contribute to the training loss.
pub fn active_passes(decoupled: bool) -> &'static [PassKind] {
    if decoupled {
        &PassKind::ALL
    } else {
        &[PassKind::Fused]
    }
}

/// Result of running and matching every active pass on one sample.
#[derive(Debug, Clone)]
pub struct SampleLoss {
    pub losses: Vec<PassLoss>,
    pub matches: Vec<(PassKind, MatchResult, Vec<Origin>)>,
}

impl SampleLoss {
    pub fn total(&self) -> f64 {
        self.losses.iter().map(PassLoss::total).sum()
    }

    pub fn pass_total(&self, pass: PassKind) -> f64 {
        self.losses.iter().filter(|l| l.pass == pass).map(PassLoss::total).sum()
    }
}

/// The decoupled objective on one sample: each active pass is run, matched
/// independently and scored; the total is the unweighted sum. Passes with no
/// queries are skipped. Gradients are accumulated into `grads` when given.
pub fn decoupled_loss(
    weights: &DecoderWeights,
    sets: &QuerySets,
    tokens: &SceneTokens,
    gts: &[Box3D],
    passes: &[PassKind],
    w: &MatchWeights,
    grads: Option<&mut [f64]>,
) -> Result<SampleLoss> {
    decoupled_loss_with(weights, sets, tokens, gts, passes, w, None, grads)
}

/// As [`decoupled_loss`], optionally with fixed per-pass assignments (used
/// by gradient checks so that perturbations do not change the matching).
#[allow(clippy::too_many_arguments)]
pub fn decoupled_loss_with(
    weights: &DecoderWeights,
    sets: &QuerySets,
    tokens: &SceneTokens,
    gts: &[Box3D],
    passes: &[PassKind],
    w: &MatchWeights,
    fixed: Option<&[MatchResult]>,
    mut grads: Option<&mut [f64]>,
) -> Result<SampleLoss> {
    let mut out = SampleLoss {
        losses: Vec::new(),
        matches: Vec::new(),
    };
    for (pi, &pass) in passes.iter().enumerate() {
        let queries = sets.for_pass(pass);
        if queries.is_empty() {
            continue;
        }
        let fwd = weights.forward(&queries, tokens, pass)?;
        let m = match fixed {
            Some(f) => f[pi].clone(),
            None => assign_queries(&fwd.predictions, gts, w)?,
        };
        let loss = pass_loss(pass, &fwd.predictions, &m, gts, w);
        if !loss.total().is_finite() {
            return Err(Error::NonFiniteLoss(format!("{} pass", pass.as_str())));
        }
        if let Some(g) = grads.as_deref_mut() {
            weights.backward(&fwd.cache, tokens, &loss.dlogits, &loss.dboxes, g);
        }
        out.matches.push((pass, m, fwd.cache.origins.clone()));
        out.losses.push(loss);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
