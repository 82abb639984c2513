//! Pinhole camera math: projection, back-projection, frustum membership and
//! 3D-to-2D box projection.
//!
//! Frames: the world is right-handed and z-up; a camera frame is z-forward,
//! x-right, y-down. `R` and `t` map world to camera, `p_c = R p + t`.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Points with camera-frame depth at or below this value are treated as behind
/// the camera.
pub const EPS_DEPTH: f64 = 1e-3;

const ORTHO_TOL: f64 = 1e-9;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    k: Matrix3<f64>,
    r: Matrix3<f64>,
    t: Vector3<f64>,
    height: u32,
    width: u32,
}

impl CameraModel {
    pub fn new(
        k: Matrix3<f64>,
        r: Matrix3<f64>,
        t: Vector3<f64>,
        height: u32,
        width: u32,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidCamera(format!(
                "image size must be positive, got {height}x{width}"
            )));
        }
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(Error::InvalidCamera("focal lengths must be positive".into()));
        }
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return Err(Error::InvalidCamera(
                "intrinsics must be upper-triangular with K[2,2] = 1".into(),
            ));
        }
        if k.iter().chain(r.iter()).chain(t.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidCamera("non-finite parameter".into()));
        }
        let ortho_err = (r * r.transpose() - Matrix3::identity()).abs().max();
        if ortho_err > ORTHO_TOL || (r.determinant() - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidCamera(format!(
                "rotation is not a proper orthonormal matrix (|RR^T - I| = {ortho_err:e})"
            )));
        }
        Ok(Self {
            k,
            r,
            t,
            height,
            width,
        })
    }

    /// Square-pixel camera at world position `center`, looking horizontally
    /// along heading `yaw` (radians, counter-clockwise from +x).
    pub fn looking_along(yaw: f64, center: Vector3<f64>, focal: f64, height: u32, width: u32) -> Result<Self> {
        let (s, c) = yaw.sin_cos();
        let forward = Vector3::new(c, s, 0.0);
        let right = Vector3::new(s, -c, 0.0);
        let down = Vector3::new(0.0, 0.0, -1.0);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let k = Matrix3::new(
            focal,
            0.0,
            width as f64 / 2.0,
            0.0,
            focal,
            height as f64 / 2.0,
            0.0,
            0.0,
            1.0,
        );
        Self::new(k, r, -(r * center), height, width)
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.k
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.r
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.t
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.r.transpose() * self.t)
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.r * p + self.t
    }

    /// Pinhole projection of a camera-frame point, without any bounds check.
    fn pixel_of(&self, pc: &Vector3<f64>) -> Vector2<f64> {
        let uvw = self.k * pc;
        Vector2::new(uvw.x / uvw.z, uvw.y / uvw.z)
    }

    /// Half-open `[0, W) x [0, H)` test.
    pub fn in_image(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0 && pixel.x < self.width as f64 && pixel.y >= 0.0 && pixel.y < self.height as f64
    }

    /// Integer pixel cell containing `pixel`, if in the image.
    pub fn pixel_cell(&self, pixel: &Vector2<f64>) -> Option<(usize, usize)> {
        if !self.in_image(pixel) {
            return None;
        }
        let col = (pixel.x.floor() as usize).min(self.width as usize - 1);
        let row = (pixel.y.floor() as usize).min(self.height as usize - 1);
        Some((row, col))
    }
}

/// Result of projecting a world point into a camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    /// Camera-frame depth `z_c` in meters.
    pub depth: f64,
}

/// Projects `p` into the image. Absent when the point is behind the camera or
/// lands outside `[0, W) x [0, H)`.
pub fn project_point(cam: &CameraModel, p: &Vector3<f64>) -> Option<Projection> {
    let pc = cam.to_camera(p);
    if pc.z <= EPS_DEPTH {
        return None;
    }
    let pixel = cam.pixel_of(&pc);
    cam.in_image(&pixel).then_some(Projection { pixel, depth: pc.z })
}

/// Inverse of [`project_point`] for a pixel and camera-frame depth.
pub fn backproject(cam: &CameraModel, pixel: &Vector2<f64>, depth: f64) -> Result<Vector3<f64>> {
    if !(depth > 0.0) {
        return Err(Error::NonPositiveDepth(depth));
    }
    let k = &cam.k;
    // K is upper-triangular, so solve directly instead of inverting.
    let y = (pixel.y - k[(1, 2)]) / k[(1, 1)];
    let x = (pixel.x - k[(0, 2)] - k[(0, 1)] * y) / k[(0, 0)];
    let pc = Vector3::new(x * depth, y * depth, depth);
    Ok(cam.r.transpose() * (pc - cam.t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2D {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub score: f64,
    pub class_id: usize,
}

impl Box2D {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64, score: f64, class_id: usize) -> Result<Self> {
        if !(x_min < x_max && y_min < y_max) {
            return Err(Error::InvalidBox(format!(
                "degenerate 2D box [{x_min}, {y_min}, {x_max}, {y_max}]"
            )));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidBox(format!("score {score} outside [0, 1]")));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
            score,
            class_id,
        })
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    /// Strict interior test.
    pub fn contains_strict(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x > self.x_min && pixel.x < self.x_max && pixel.y > self.y_min && pixel.y < self.y_max
    }

    pub fn iou(&self, other: &Box2D) -> f64 {
        let iw = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let ih = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

/// Oriented 3D box. `size` is (length along heading, width, height); `yaw` is
/// the heading about world z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub center: Vector3<f64>,
    pub size: Vector3<f64>,
    pub yaw: f64,
    pub score: f64,
    pub class_id: usize,
}

impl Box3D {
    pub fn new(center: Vector3<f64>, size: Vector3<f64>, yaw: f64, score: f64, class_id: usize) -> Result<Self> {
        if !size.iter().all(|s| *s > 0.0) {
            return Err(Error::InvalidBox(format!("box sizes must be positive, got {size:?}")));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidBox(format!("score {score} outside [0, 1]")));
        }
        if !center.iter().all(|c| c.is_finite()) || !yaw.is_finite() {
            return Err(Error::InvalidBox("non-finite box parameter".into()));
        }
        Ok(Self {
            center,
            size,
            yaw: wrap_angle(yaw),
            score,
            class_id,
        })
    }

    /// Maps a world point into the box frame (x along heading).
    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let (s, c) = self.yaw.sin_cos();
        let d = p - self.center;
        Vector3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    pub fn to_world(&self, local: &Vector3<f64>) -> Vector3<f64> {
        let (s, c) = self.yaw.sin_cos();
        self.center + Vector3::new(c * local.x - s * local.y, s * local.x + c * local.y, local.z)
    }

    pub fn contains(&self, p: &Vector3<f64>, margin: f64) -> bool {
        let l = self.to_local(p);
        (0..3).all(|i| l[i].abs() <= 0.5 * self.size[i] + margin)
    }

    /// Distance from `p` to the box surface (zero on the surface).
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        let l = self.to_local(p);
        let h = 0.5 * self.size;
        let q = Vector3::new(l.x.abs() - h.x, l.y.abs() - h.y, l.z.abs() - h.z);
        let outside = Vector3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
        let inside = q.x.max(q.y).max(q.z).min(0.0);
        outside + inside.abs()
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let h = 0.5 * self.size;
        let mut out = [Vector3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            *c = self.to_world(&Vector3::new(sx * h.x, sy * h.y, sz * h.z));
        }
        out
    }

    /// Bird's-eye-view center distance.
    pub fn bev_distance(&self, other: &Box3D) -> f64 {
        (self.center.xy() - other.center.xy()).norm()
    }
}

/// True iff `p` projects strictly inside `bbox` with camera depth inside
/// `depth_range` (inclusive).
pub fn frustum_contains(cam: &CameraModel, bbox: &Box2D, depth_range: (f64, f64), p: &Vector3<f64>) -> bool {
    match project_point(cam, p) {
        Some(proj) => {
            bbox.contains_strict(&proj.pixel) && proj.depth >= depth_range.0 && proj.depth <= depth_range.1
        }
        None => false,
    }
}

// Corner indices differ in exactly one bit along an edge.
const BOX_EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Axis-aligned image hull of a projected 3D box, clipped to the image.
///
/// Corners behind the camera are replaced by the points where their edges
/// cross the `z = EPS_DEPTH` plane. Score and class are copied from `b`.
pub fn project_box3d(cam: &CameraModel, b: &Box3D) -> Option<Box2D> {
    let corners: Vec<Vector3<f64>> = b.corners().iter().map(|c| cam.to_camera(c)).collect();
    let front = |c: &Vector3<f64>| c.z > EPS_DEPTH;
    if !corners.iter().any(front) {
        return None;
    }
    let mut visible: Vec<Vector3<f64>> = corners.iter().copied().filter(front).collect();
    for &(a, bi) in BOX_EDGES.iter() {
        let (pa, pb) = (corners[a], corners[bi]);
        if front(&pa) != front(&pb) {
            let s = (EPS_DEPTH - pa.z) / (pb.z - pa.z);
            let mut q = pa + s * (pb - pa);
            q.z = EPS_DEPTH;
            visible.push(q);
        }
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for pc in &visible {
        let px = cam.pixel_of(pc);
        x0 = x0.min(px.x);
        y0 = y0.min(px.y);
        x1 = x1.max(px.x);
        y1 = y1.max(px.y);
    }
    let (w, h) = (cam.width as f64, cam.height as f64);
    let (x0, x1) = (x0.clamp(0.0, w), x1.clamp(0.0, w));
    let (y0, y1) = (y0.clamp(0.0, h), y1.clamp(0.0, h));
    Box2D::new(x0, y0, x1, y1, b.score, b.class_id).ok()
}
