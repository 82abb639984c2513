//! Minimum-cost bipartite assignment between queries and ground truths, the
//! set-prediction matching cost, and matched-count statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::Origin;
use crate::geometry::{wrap_angle, Box3D};
use crate::scenesim::NUM_CLASSES;

/// Cost of a padding cell when a rectangular matrix is squared up.
pub const PAD_COST: f64 = 1e6;

/// Class logits: one per foreground class plus a trailing background logit.
pub const NUM_LOGITS: usize = NUM_CLASSES + 1;
pub const BACKGROUND: usize = NUM_CLASSES;

/// Row-major matrix, rows = queries, columns = ground truths.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidConfig(format!(
                "cost matrix of {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFiniteCost {
                row: i / cols.max(1),
                col: i % cols.max(1),
                value: data[i],
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidConfig("ragged cost matrix".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }
}

/// Classification and box parts of one matched pair's cost.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostTerms {
    pub cls: f64,
    pub bbox: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    /// `(query, gt)` pairs sorted by query index.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_queries: Vec<usize>,
    /// Cost of each pair, parallel to `pairs`.
    pub costs: Vec<f64>,
    /// Per-pair breakdown; empty when the matrix came without one.
    pub terms: Vec<CostTerms>,
}

impl MatchResult {
    pub fn total_cost(&self) -> f64 {
        self.costs.iter().sum()
    }

    /// Ground truth matched to `query`, if any.
    pub fn gt_for(&self, query: usize) -> Option<usize> {
        self.pairs.iter().find(|(q, _)| *q == query).map(|(_, g)| *g)
    }
}

/// Square shortest-augmenting-path solver. Returns the row->column assignment
/// and the dual potentials.
fn solve_square(n: usize, cost: impl Fn(usize, usize) -> f64) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    (row_to_col, u[1..].to_vec(), v[1..].to_vec())
}

/// Minimum-cost assignment of size `min(rows, cols)`. Among optimal
/// assignments the lexicographically smallest pair list is returned.
pub fn hungarian(costs: &CostMatrix) -> MatchResult {
    let (nr, nc) = (costs.rows, costs.cols);
    if nr == 0 || nc == 0 {
        return MatchResult {
            unmatched_queries: (0..nr).collect(),
            ..MatchResult::default()
        };
    }
    let n = nr.max(nc);
    let cost = |i: usize, j: usize| if i < nr && j < nc { costs.get(i, j) } else { PAD_COST };
    let (mut row_to_col, u, v) = solve_square(n, cost);

    // Tie-breaking: every optimal assignment lives on the tight edges of an
    // optimal dual, so fix rows in order to their smallest tight column that
    // still admits a perfect tight matching of the remaining rows.
    let scale = costs.data.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let tol = 1e-9 * (1.0 + scale) + 64.0 * f64::EPSILON * PAD_COST;
    let tight = |i: usize, j: usize| cost(i, j) - u[i] - v[j] <= tol;
    let mut col_to_row = vec![0; n];
    for (i, &j) in row_to_col.iter().enumerate() {
        col_to_row[j] = i;
    }
    for i in 0..n {
        for j in 0..n {
            if row_to_col[i] == j {
                break;
            }
            if !tight(i, j) {
                continue;
            }
            // Give j to i; its current owner must reach i's old column
            // through an alternating path over unfixed rows.
            let freed = row_to_col[i];
            let owner = col_to_row[j];
            if owner < i {
                continue;
            }
            let mut visited = vec![false; n];
            visited[j] = true;
            let mut path = Vec::new();
            if reroute(owner, freed, i, &tight, &col_to_row, &mut visited, &mut path, n) {
                for (r, c) in path {
                    row_to_col[r] = c;
                    col_to_row[c] = r;
                }
                row_to_col[i] = j;
                col_to_row[j] = i;
                break;
            }
        }
    }

    let mut out = MatchResult::default();
    for i in 0..nr {
        let j = row_to_col[i];
        if j < nc {
            out.pairs.push((i, j));
            out.costs.push(costs.get(i, j));
        } else {
            out.unmatched_queries.push(i);
        }
    }
    out
}

/// Depth-first search for an alternating path from `row` to the free column
/// `target`, touching only rows after `fixed`.
#[allow(clippy::too_many_arguments)]
fn reroute(
    row: usize,
    target: usize,
    fixed: usize,
    tight: &impl Fn(usize, usize) -> bool,
    col_to_row: &[usize],
    visited: &mut [bool],
    path: &mut Vec<(usize, usize)>,
    n: usize,
) -> bool {
    for c in 0..n {
        if visited[c] || !tight(row, c) {
            continue;
        }
        if c == target {
            path.push((row, c));
            return true;
        }
        let next = col_to_row[c];
        if next <= fixed {
            continue;
        }
        visited[c] = true;
        if reroute(next, target, fixed, tight, col_to_row, visited, path, n) {
            path.push((row, c));
            return true;
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchWeights {
    pub w_cls: f64,
    pub w_box: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    /// Positions and sizes are divided by this before the L1 term.
    pub scene_radius: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        Self {
            w_cls: 1.0,
            w_box: 0.25,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            scene_radius: 40.0,
        }
    }
}

/// Box in normalized parameter space: center/R, size/R, yaw/pi.
pub type BoxParams = [f64; 7];

pub fn normalize_box(b: &Box3D, radius: f64) -> BoxParams {
    [
        b.center.x / radius,
        b.center.y / radius,
        b.center.z / radius,
        b.size.x / radius,
        b.size.y / radius,
        b.size.z / radius,
        b.yaw / std::f64::consts::PI,
    ]
}

/// Inverse of [`normalize_box`]; sizes are floored to stay valid.
pub fn denormalize_box(p: &BoxParams, radius: f64, score: f64, class_id: usize) -> Box3D {
    let center = nalgebra::Vector3::new(p[0], p[1], p[2]) * radius;
    let size = nalgebra::Vector3::new(p[3], p[4], p[5]).map(|s| (s * radius).max(1e-3));
    Box3D::new(center, size, p[6] * std::f64::consts::PI, score.clamp(0.0, 1.0), class_id)
        .expect("floored sizes and clamped score are valid")
}

/// Signed per-dimension difference `a - b`, with the yaw entry wrapped.
pub fn box_residual(a: &BoxParams, b: &BoxParams) -> BoxParams {
    let mut d: BoxParams = std::array::from_fn(|k| a[k] - b[k]);
    d[6] = wrap_angle(d[6] * std::f64::consts::PI) / std::f64::consts::PI;
    d
}

pub fn box_l1(a: &BoxParams, b: &BoxParams) -> f64 {
    box_residual(a, b).iter().map(|x| x.abs()).sum()
}

pub fn softmax(logits: &[f64; NUM_LOGITS]) -> [f64; NUM_LOGITS] {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let e: [f64; NUM_LOGITS] = std::array::from_fn(|k| (logits[k] - m).exp());
    let s: f64 = e.iter().sum();
    std::array::from_fn(|k| e[k] / s)
}

/// Focal term `alpha (1-p)^gamma (-log p)` for target probability `p`.
pub fn focal(p: f64, alpha: f64, gamma: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0);
    alpha * (1.0 - p).powf(gamma) * -p.ln()
}

/// One decoded query: class logits and a normalized box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub logits: [f64; NUM_LOGITS],
    pub params: BoxParams,
}

pub fn match_cost_terms(pred: &Prediction, gt: &Box3D, w: &MatchWeights) -> CostTerms {
    let p = softmax(&pred.logits)[gt.class_id];
    CostTerms {
        cls: w.w_cls * focal(p, w.focal_alpha, w.focal_gamma),
        bbox: w.w_box * box_l1(&pred.params, &normalize_box(gt, w.scene_radius)),
    }
}

pub fn match_cost(pred: &Prediction, gt: &Box3D, w: &MatchWeights) -> f64 {
    let t = match_cost_terms(pred, gt, w);
    t.cls + t.bbox
}

/// Builds the cost matrix for one pass and solves it.
pub fn assign_queries(preds: &[Prediction], gts: &[Box3D], w: &MatchWeights) -> Result<MatchResult> {
    let terms: Vec<CostTerms> = preds
        .iter()
        .flat_map(|p| gts.iter().map(move |g| match_cost_terms(p, g, w)))
        .collect();
    let m = CostMatrix::new(preds.len(), gts.len(), terms.iter().map(|t| t.cls + t.bbox).collect())?;
    let mut r = hungarian(&m);
    r.terms = r.pairs.iter().map(|&(q, g)| terms[q * gts.len() + g]).collect();
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupervisionStats {
    pub samples: usize,
    pub mean_matched_2d: f64,
    pub mean_matched_3d: f64,
    /// 3D:2D ratio; infinite when no 2D query was ever matched.
    pub ratio: f64,
}

/// Matched-count statistics over fused-pass results, each paired with the
/// origin of every query in that pass.
pub fn supervision_stats<'a>(results: impl IntoIterator<Item = (&'a MatchResult, &'a [Origin])>) -> SupervisionStats {
    let (mut n, mut m2, mut m3) = (0usize, 0usize, 0usize);
    for (r, origins) in results {
        n += 1;
        for (q, _) in &r.pairs {
            match origins[*q] {
                Origin::From2D => m2 += 1,
                Origin::From3D => m3 += 1,
                Origin::Fused => {}
            }
        }
    }
    let denom = n.max(1) as f64;
    let (a2, a3) = (m2 as f64 / denom, m3 as f64 / denom);
    SupervisionStats {
        samples: n,
        mean_matched_2d: a2,
        mean_matched_3d: a3,
        ratio: if m2 == 0 { f64::INFINITY } else { a3 / a2 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn brute_force(m: &CostMatrix) -> f64 {
        fn go(m: &CostMatrix, row: usize, used: &mut Vec<bool>, left: usize) -> f64 {
            if left == 0 || row == m.rows() {
                return if left == 0 { 0.0 } else { f64::INFINITY };
            }
            // skip this row if enough rows remain
            let mut best = if m.rows() - row > left { go(m, row + 1, used, left) } else { f64::INFINITY };
            for c in 0..m.cols() {
                if !used[c] {
                    used[c] = true;
                    best = best.min(m.get(row, c) + go(m, row + 1, used, left - 1));
                    used[c] = false;
                }
            }
            best
        }
        let k = m.rows().min(m.cols());
        go(m, 0, &mut vec![false; m.cols()], k)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, max: usize, ints: bool) -> CostMatrix {
        let r = rng.random_range(1..=max);
        let c = rng.random_range(1..=max);
        let data = (0..r * c)
            .map(|_| if ints { rng.random_range(0..4) as f64 } else { rng.random_range(-2.0..5.0) })
            .collect();
        CostMatrix::new(r, c, data).unwrap()
    }

    #[test]
    fn identity_matrix() {
        let m = CostMatrix::from_rows(&[vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]]).unwrap();
        let r = hungarian(&m);
        assert_eq!(r.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(r.total_cost(), 0.0);
    }

    #[test]
    fn single_entry() {
        let r = hungarian(&CostMatrix::new(1, 1, vec![3.5]).unwrap());
        assert_eq!(r.pairs, vec![(0, 0)]);
        assert_eq!(r.total_cost(), 3.5);
    }

    #[test]
    fn empty_sides() {
        let r = hungarian(&CostMatrix::new(3, 0, vec![]).unwrap());
        assert!(r.pairs.is_empty());
        assert_eq!(r.unmatched_queries, vec![0, 1, 2]);
        assert!(hungarian(&CostMatrix::new(0, 4, vec![]).unwrap()).pairs.is_empty());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            CostMatrix::new(2, 2, vec![0.0, 1.0, f64::NAN, 2.0]),
            Err(Error::NonFiniteCost { row: 1, col: 0, .. })
        ));
        assert!(CostMatrix::new(1, 2, vec![0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 0..600 {
            let m = random_matrix(&mut rng, 6, k % 2 == 0);
            let r = hungarian(&m);
            assert_eq!(r.pairs.len(), m.rows().min(m.cols()));
            let bf = brute_force(&m);
            assert!((r.total_cost() - bf).abs() <= 1e-9 * (1.0 + bf.abs()), "{} vs {bf}", r.total_cost());
        }
    }

    #[test]
    fn ties_resolve_to_lexicographically_smallest() {
        // All-equal matrix: identity ordering.
        let m = CostMatrix::new(3, 3, vec![1.0; 9]).unwrap();
        assert_eq!(hungarian(&m).pairs, vec![(0, 0), (1, 1), (2, 2)]);
        // Two queries at equal cost to one gt: lower index wins.
        let m = CostMatrix::new(2, 1, vec![0.5, 0.5]).unwrap();
        let r = hungarian(&m);
        assert_eq!(r.pairs, vec![(0, 0)]);
        assert_eq!(r.unmatched_queries, vec![1]);
        // Against a brute-force lexicographic oracle on small integer matrices.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let m = random_matrix(&mut rng, 4, true);
            assert_eq!(hungarian(&m).pairs, lexicographic_oracle(&m));
        }
    }

    fn lexicographic_oracle(m: &CostMatrix) -> Vec<(usize, usize)> {
        let k = m.rows().min(m.cols());
        let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
        let mut cur = Vec::new();
        fn go(
            m: &CostMatrix,
            row: usize,
            k: usize,
            used: &mut Vec<bool>,
            cur: &mut Vec<(usize, usize)>,
            best: &mut Option<(f64, Vec<(usize, usize)>)>,
        ) {
            if cur.len() == k {
                let c: f64 = cur.iter().map(|&(r, g)| m.get(r, g)).sum();
                let better = match best {
                    None => true,
                    Some((bc, bp)) => c < *bc - 1e-12 || ((c - *bc).abs() <= 1e-12 && *cur < *bp),
                };
                if better {
                    *best = Some((c, cur.clone()));
                }
                return;
            }
            if row == m.rows() {
                return;
            }
            for c in 0..m.cols() {
                if !used[c] {
                    used[c] = true;
                    cur.push((row, c));
                    go(m, row + 1, k, used, cur, best);
                    cur.pop();
                    used[c] = false;
                }
            }
            go(m, row + 1, k, used, cur, best);
        }
        go(m, 0, k, &mut vec![false; m.cols()], &mut cur, &mut best);
        best.unwrap().1
    }

    #[test]
    fn no_improving_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let m = random_matrix(&mut rng, 7, false);
            let r = hungarian(&m);
            for a in 0..r.pairs.len() {
                for b in a + 1..r.pairs.len() {
                    let ((q1, g1), (q2, g2)) = (r.pairs[a], r.pairs[b]);
                    let now = m.get(q1, g1) + m.get(q2, g2);
                    let swapped = m.get(q1, g2) + m.get(q2, g1);
                    assert!(swapped >= now - 1e-9);
                }
            }
        }
    }

    fn gt(x: f64, y: f64, cls: usize) -> Box3D {
        Box3D::new(Vector3::new(x, y, 0.8), Vector3::new(4.5, 1.9, 1.6), 0.3, 1.0, cls).unwrap()
    }

    fn confident(cls: usize, b: &Box3D, w: &MatchWeights) -> Prediction {
        let mut logits = [-30.0; NUM_LOGITS];
        logits[cls] = 30.0;
        Prediction {
            logits,
            params: normalize_box(b, w.scene_radius),
        }
    }

    #[test]
    fn perfect_prediction_costs_nothing() {
        let w = MatchWeights::default();
        let g = gt(10.0, 2.0, 0);
        assert!(match_cost(&confident(0, &g, &w), &g, &w) < 1e-20);
    }

    #[test]
    fn box_term_is_linear() {
        let w = MatchWeights::default();
        let g = gt(10.0, 2.0, 1);
        let a = confident(1, &gt(11.0, 2.0, 1), &w);
        let b = confident(1, &gt(13.0, 2.0, 1), &w);
        let gap = box_l1(&b.params, &normalize_box(&g, 40.0)) - box_l1(&a.params, &normalize_box(&g, 40.0));
        let diff = match_cost(&b, &g, &w) - match_cost(&a, &g, &w);
        assert!((diff - w.w_box * gap).abs() < 1e-12);
        assert!((gap - 2.0 / 40.0).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_costs() {
        let w = MatchWeights::default();
        // Uniform logits -> p = 1/4 for every class.
        let g0 = gt(8.0, 0.0, 0);
        let g1 = gt(0.0, 8.0, 2);
        let mut p = Prediction {
            logits: [0.0; NUM_LOGITS],
            params: normalize_box(&g0, 40.0),
        };
        let focal_quarter = 0.25 * 0.75f64.powi(2) * 4f64.ln();
        assert!((match_cost(&p, &g0, &w) - focal_quarter).abs() < 1e-12);
        // L1 to g1: |dx| + |dy| = 16 m -> 0.4 normalized.
        assert!((match_cost(&p, &g1, &w) - (focal_quarter + 0.25 * 0.4)).abs() < 1e-12);
        // ln 3 on the gt logit: p = 3/6 = 0.5.
        p.logits[2] = 3f64.ln();
        let focal_half = 0.25 * 0.25 * 2f64.ln();
        assert!((match_cost(&p, &g1, &w) - (focal_half + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn yaw_difference_wraps() {
        let a = [0.0, 0.0, 0.0, 0.1, 0.1, 0.1, 0.99];
        let b = [0.0, 0.0, 0.0, 0.1, 0.1, 0.1, -0.99];
        assert!((box_l1(&a, &b) - 0.02).abs() < 1e-12);
    }

    #[test]
    fn fused_pass_prefers_exact_3d() {
        let w = MatchWeights::default();
        let gts = vec![gt(10.0, 0.0, 0), gt(-5.0, 12.0, 0)];
        let mut preds: Vec<Prediction> = gts.iter().map(|g| confident(0, &gt(g.center.x + 15.0, g.center.y, 0), &w)).collect();
        preds.extend(gts.iter().map(|g| confident(0, g, &w)));
        let origins = [Origin::From2D, Origin::From2D, Origin::From3D, Origin::From3D];
        let r = assign_queries(&preds, &gts, &w).unwrap();
        assert!(r.pairs.iter().all(|(q, _)| origins[*q] == Origin::From3D));
        let s = supervision_stats([(&r, &origins[..])]);
        assert_eq!(s.mean_matched_2d, 0.0);
        assert!(s.ratio.is_infinite());
    }

    #[test]
    fn two_d_pass_covers_every_gt() {
        let w = MatchWeights::default();
        let gts = vec![gt(10.0, 0.0, 0), gt(-5.0, 12.0, 1), gt(3.0, -20.0, 2)];
        let preds: Vec<Prediction> = (0..5).map(|i| confident(i % 3, &gt(i as f64, 1.0, 0), &w)).collect();
        let r = assign_queries(&preds, &gts, &w).unwrap();
        let mut matched: Vec<usize> = r.pairs.iter().map(|p| p.1).collect();
        matched.sort();
        assert_eq!(matched, vec![0, 1, 2]);
        assert_eq!(r.terms.len(), 3);
    }

    #[test]
    fn equal_cost_tie_goes_to_lower_index() {
        let w = MatchWeights::default();
        let g = gt(10.0, 0.0, 0);
        let q = confident(0, &gt(11.0, 0.0, 0), &w);
        let r = assign_queries(&[q, q], &[g], &w).unwrap();
        assert_eq!(r.pairs, vec![(0, 0)]);
    }

    /// Synthetic fused pass: one query per origin per gt, with the given
    /// isotropic center noise per origin.
    fn origin_ratio(sigma_2d: f64, sigma_3d: f64, depth_only_2d: bool, seed: u64) -> SupervisionStats {
        let w = MatchWeights::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = Vec::new();
        for _ in 0..1000 {
            let n = rng.random_range(1..6);
            let gts: Vec<Box3D> = (0..n)
                .map(|_| {
                    let r = rng.random_range(5.0..35.0);
                    let a = rng.random_range(-3.1..3.1);
                    gt(r * f64::cos(a), r * f64::sin(a), rng.random_range(0..3))
                })
                .collect();
            let mut preds = Vec::new();
            let mut origins = Vec::new();
            for (origin, sigma) in [(Origin::From2D, sigma_2d), (Origin::From3D, sigma_3d)] {
                let nrm = Normal::new(0.0, sigma).unwrap();
                for g in &gts {
                    let mut b = *g;
                    if origin == Origin::From2D && depth_only_2d {
                        // Image queries are accurate in bearing but not range.
                        let dir = b.center.xy().normalize();
                        let dr = nrm.sample(&mut rng);
                        b.center.x += dir.x * dr;
                        b.center.y += dir.y * dr;
                    } else {
                        b.center.x += nrm.sample(&mut rng);
                        b.center.y += nrm.sample(&mut rng);
                    }
                    let mut logits = [0.0; NUM_LOGITS];
                    logits[g.class_id] = 2.0;
                    preds.push(Prediction {
                        logits,
                        params: normalize_box(&b, 40.0),
                    });
                    origins.push(origin);
                }
            }
            store.push((assign_queries(&preds, &gts, &w).unwrap(), origins));
        }
        supervision_stats(store.iter().map(|(r, o)| (r, o.as_slice())))
    }

    #[test]
    fn balanced_dataset_has_balanced_ratio() {
        let s = origin_ratio(0.5, 0.5, false, 3);
        assert!((0.8..=1.25).contains(&s.ratio), "{s:?}");
    }

    #[test]
    fn lidar_favoring_dataset_is_imbalanced() {
        let s = origin_ratio(2.0, 0.1, true, 3);
        assert!(s.ratio > 5.0, "{s:?}");
    }
}
