//! Center-distance AP and mAP on hand-made frames, including duplicate
//! detections and a class without ground truth.
//!
//! cargo run --example detection_metrics

use ccf::evalkit::{average_precision, depth_mae, map_score, Detection, Frame, Origin, DEFAULT_THRESHOLDS};
use ccf::geometry::Box3D;
use nalgebra::Vector3;

fn car(x: f64, y: f64, score: f64) -> Box3D {
    Box3D::new(Vector3::new(x, y, 0.8), Vector3::new(4.5, 1.9, 1.6), 0.0, score, 0).expect("valid box")
}

fn det(b: Box3D) -> Detection {
    Detection {
        bbox: b,
        score: b.score,
        class_id: b.class_id,
        origin: Origin::From3D,
    }
}

fn main() {
    let gts = vec![car(10.0, 0.0, 1.0), car(20.0, 5.0, 1.0), car(-8.0, -3.0, 1.0)];
    let detections = vec![
        det(car(10.3, 0.2, 0.9)),
        // Duplicate of the first object: a false positive once it is taken.
        det(car(10.1, -0.1, 0.8)),
        det(car(21.5, 5.0, 0.7)),
        det(car(30.0, 30.0, 0.6)),
    ];
    let frames = vec![Frame { detections, gts }];
    for t in DEFAULT_THRESHOLDS {
        println!("car AP @ {t} m: {:.3}", average_precision(&frames, 0, t));
    }
    // Pedestrians and large vehicles have no ground truth here and are left
    // out of the mean.
    println!("mAP over present classes: {:?}", map_score(&frames, &[0, 1, 2], &DEFAULT_THRESHOLDS));
    println!("depth MAE: {:?}", depth_mae(&[(10.5, 10.0), (19.0, 20.0), (55.0, 50.0)], (0.0, 40.0)));
}
