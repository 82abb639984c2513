//! Pinhole projection, back-projection, box projection and frustum tests.
//!
//! cargo run --example camera_geometry

use ccf::geometry::{backproject, frustum_contains, project_box3d, project_point, Box3D, CameraModel};
use nalgebra::Vector3;

fn main() -> ccf::Result<()> {
    // Forward-looking camera 1.6 m above the ground, 160x96 image.
    let cam = CameraModel::looking_along(0.0, Vector3::new(0.0, 0.0, 1.6), 120.0, 96, 160)?;

    let p = Vector3::new(15.0, 2.0, 1.0);
    let proj = project_point(&cam, &p).expect("in view");
    println!("point {p:?} -> pixel ({:.1}, {:.1}) at depth {:.2} m", proj.pixel.x, proj.pixel.y, proj.depth);

    let back = backproject(&cam, &proj.pixel, proj.depth)?;
    println!("back-projected error: {:.2e} m", (back - p).norm());

    let car = Box3D::new(Vector3::new(15.0, 2.0, 0.8), Vector3::new(4.5, 1.9, 1.6), 0.3, 1.0, 0)?;
    let b2 = project_box3d(&cam, &car).expect("visible");
    println!("car box in image: x [{:.1}, {:.1}] y [{:.1}, {:.1}]", b2.x_min, b2.x_max, b2.y_min, b2.y_max);

    // Points inside the 3D box fall in the frustum of its 2D box.
    for depth in [5.0, 15.0, 30.0] {
        let q = backproject(&cam, &b2.center(), depth)?;
        println!("ray point at {depth:>4} m in frustum [1, 60]: {}", frustum_contains(&cam, &b2, (1.0, 60.0), &q));
    }
    let behind = cam.center() - Vector3::new(5.0, 0.0, 0.0);
    println!("point behind the camera projects: {}", project_point(&cam, &behind).is_some());
    Ok(())
}
