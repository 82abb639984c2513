//! Optimal assignment on a rectangular cost matrix, and set-prediction
//! matching of decoded queries to ground truth.
//!
//! cargo run --example hungarian_matching

use ccf::geometry::Box3D;
use ccf::matching::{assign_queries, hungarian, normalize_box, CostMatrix, MatchWeights, Prediction, NUM_LOGITS};
use nalgebra::Vector3;

fn main() -> ccf::Result<()> {
    let costs = CostMatrix::from_rows(&[vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0], vec![9.0, 9.0, 0.5]])?;
    let r = hungarian(&costs);
    println!("pairs {:?}, unmatched rows {:?}, total {:.1}", r.pairs, r.unmatched_queries, r.total_cost());

    let gts = vec![
        Box3D::new(Vector3::new(10.0, 2.0, 0.8), Vector3::new(4.5, 1.9, 1.6), 0.0, 1.0, 0)?,
        Box3D::new(Vector3::new(6.0, -3.0, 0.9), Vector3::new(0.8, 0.7, 1.75), 0.0, 1.0, 1)?,
    ];
    // Three queries: a good car, a pedestrian slightly off, and a stray one.
    let query = |b: &Box3D, class: usize, conf: f64| {
        let mut logits = [-4.0; NUM_LOGITS];
        logits[class] = conf;
        Prediction {
            logits,
            params: normalize_box(b, 40.0),
        }
    };
    let mut off = gts[1];
    off.center.x += 0.6;
    let stray = Box3D::new(Vector3::new(-20.0, 15.0, 1.0), Vector3::new(4.0, 2.0, 1.5), 1.0, 1.0, 0)?;
    let preds = vec![query(&stray, 0, 1.0), query(&gts[0], 0, 3.0), query(&off, 1, 2.0)];
    let m = assign_queries(&preds, &gts, &MatchWeights::default())?;
    for ((q, g), t) in m.pairs.iter().zip(&m.terms) {
        println!("query {q} -> gt {g}: cls {:.3} box {:.3}", t.cls, t.bbox);
    }
    println!("unmatched queries: {:?}", m.unmatched_queries);
    Ok(())
}
