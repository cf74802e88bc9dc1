//! Pinhole cameras, ray casting, projection and bilinear feature lookup.
//!
//! Conventions: camera frame is x right, y down, z forward. Pixel `(u, v)`
//! covers the continuous square `[u, u+1) × [v, v+1)`, so its center is
//! `(u+0.5, v+0.5)`. Depth is z-depth along the forward axis.

use core::fmt;

use crate::math;

pub type Vec3 = [f64; 3];

/// Rays produced by [`ray_for_pixel`] before any scene-specific clipping.
pub const DEFAULT_NEAR: f64 = 1e-3;
pub const DEFAULT_FAR: f64 = 1e3;
/// Points at or below this z-depth are behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum GeometryError {
    InvalidIntrinsics,
    NonOrthonormalPose,
    PixelOutOfBounds { px: f64, py: f64 },
    InvalidRay,
    DegenerateLookAt,
}

impl fmt::Display for GeometryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometryError::InvalidIntrinsics => write!(f, "camera intrinsics out of range"),
            GeometryError::NonOrthonormalPose => write!(f, "camera rotation is not orthonormal with det +1"),
            GeometryError::PixelOutOfBounds { px, py } => write!(f, "pixel ({px}, {py}) outside the image"),
            GeometryError::InvalidRay => write!(f, "ray needs a unit direction and 0 < t_near < t_far"),
            GeometryError::DegenerateLookAt => write!(f, "look_at: eye equals target or up is parallel to the view"),
        }
    }
}

impl core::error::Error for GeometryError {}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    math::sqrt(dot(a, a))
}

pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    if n > 0.0 {
        scale(a, 1.0 / n)
    } else {
        a
    }
}

/// Rigid camera-to-world transform: `x_world = R · x_cam + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    /// Row-major; column `k` is camera axis `k` expressed in world coordinates.
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], translation: [0.0; 3] }
    }

    pub fn axis(&self, k: usize) -> Vec3 {
        [self.rotation[0][k], self.rotation[1][k], self.rotation[2][k]]
    }

    pub fn forward(&self) -> Vec3 {
        self.axis(2)
    }

    pub fn center(&self) -> Vec3 {
        self.translation
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let d = sub(p, self.translation);
        [dot(self.axis(0), d), dot(self.axis(1), d), dot(self.axis(2), d)]
    }

    pub fn to_world_dir(&self, d: Vec3) -> Vec3 {
        let r = &self.rotation;
        [
            r[0][0] * d[0] + r[0][1] * d[1] + r[0][2] * d[2],
            r[1][0] * d[0] + r[1][1] * d[1] + r[1][2] * d[2],
            r[2][0] * d[0] + r[2][1] * d[1] + r[2][2] * d[2],
        ]
    }

    /// Max deviation of `R·Rᵀ` from identity, or `None` if `det R < 0`.
    pub fn orthonormality_error(&self) -> Option<f64> {
        let r = &self.rotation;
        let mut err: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let v = dot(r[i], r[j]);
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((v - target).abs());
            }
        }
        let det = dot(self.axis(0), cross(self.axis(1), self.axis(2)));
        (det > 0.0).then_some(err)
    }

    /// `[R | t]` as 12 reals, row-major.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1], r[2][2], t[2]]
    }

    pub fn from_row_major(m: &[f64; 12]) -> Self {
        Self {
            rotation: [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]],
            translation: [m[3], m[7], m[11]],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub pose: Pose,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize, pose: Pose) -> Result<Self, GeometryError> {
        let cam = Self { fx, fy, cx, cy, width, height, pose };
        cam.validate()?;
        Ok(cam)
    }

    /// Square image with the principal point at the image center.
    pub fn with_fov(fov_y_radians: f64, width: usize, height: usize, pose: Pose) -> Result<Self, GeometryError> {
        let f = 0.5 * height as f64 / libm::tan(0.5 * fov_y_radians);
        Self::new(f, f, 0.5 * width as f64, 0.5 * height as f64, width, height, pose)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.width > 0
            && self.height > 0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if !ok {
            return Err(GeometryError::InvalidIntrinsics);
        }
        match self.pose.orthonormality_error() {
            Some(e) if e <= 1e-9 => Ok(()),
            _ => Err(GeometryError::NonOrthonormalPose),
        }
    }

    pub fn center(&self) -> Vec3 {
        self.pose.center()
    }
}

/// Half-line `origin + t·direction` restricted to `t ∈ [t_near, t_far]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3, t_near: f64, t_far: f64) -> Result<Self, GeometryError> {
        let ok = (norm(direction) - 1.0).abs() <= 1e-9 && t_near > 0.0 && t_near < t_far;
        if !ok {
            return Err(GeometryError::InvalidRay);
        }
        Ok(Self { origin, direction, t_near, t_far })
    }

    pub fn with_range(self, t_near: f64, t_far: f64) -> Result<Self, GeometryError> {
        Ray::new(self.origin, self.direction, t_near, t_far)
    }

    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        add(self.origin, scale(self.direction, t))
    }
}

/// Ray from the camera center through pixel coordinate `(px + 0.5, py + 0.5)`.
pub fn ray_for_pixel(camera: &Camera, px: f64, py: f64) -> Result<Ray, GeometryError> {
    if !(px >= 0.0 && py >= 0.0 && px < camera.width as f64 && py < camera.height as f64) {
        return Err(GeometryError::PixelOutOfBounds { px, py });
    }
    let d_cam = [(px + 0.5 - camera.cx) / camera.fx, (py + 0.5 - camera.cy) / camera.fy, 1.0];
    let dir = normalize(camera.pose.to_world_dir(d_cam));
    Ok(Ray { origin: camera.center(), direction: dir, t_near: DEFAULT_NEAR, t_far: DEFAULT_FAR })
}

/// Continuous pixel coordinates and z-depth of a projected point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImagePoint {
    pub px: f64,
    pub py: f64,
    pub depth: f64,
}

/// `None` when the point is at or behind the camera plane.
pub fn project_point(camera: &Camera, p: Vec3) -> Option<ImagePoint> {
    let q = camera.pose.to_camera(p);
    if q[2] <= MIN_DEPTH {
        return None;
    }
    Some(ImagePoint { px: camera.fx * q[0] / q[2] + camera.cx, py: camera.fy * q[1] / q[2] + camera.cy, depth: q[2] })
}

/// Four `(row index, weight)` taps for bilinear lookup at continuous pixel
/// coordinates in an `height × width` grid stored row-major. Coordinates are
/// clamped to the outermost pixel centers.
pub fn bilinear_taps(height: usize, width: usize, px: f64, py: f64) -> [(usize, f64); 4] {
    let gx = (px - 0.5).clamp(0.0, (width - 1) as f64);
    let gy = (py - 0.5).clamp(0.0, (height - 1) as f64);
    let x0 = math::floor(gx) as usize;
    let y0 = math::floor(gy) as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let wx = gx - x0 as f64;
    let wy = gy - y0 as f64;
    [
        (y0 * width + x0, (1.0 - wx) * (1.0 - wy)),
        (y0 * width + x1, wx * (1.0 - wy)),
        (y1 * width + x0, (1.0 - wx) * wy),
        (y1 * width + x1, wx * wy),
    ]
}

/// Bilinear interpolation of an `H·W × D` grid at continuous pixel coordinates.
pub fn bilinear_sample(grid: &crate::diff::Tensor, height: usize, width: usize, px: f64, py: f64) -> alloc::vec::Vec<f64> {
    assert!(height * width == grid.rows() && grid.rows() > 0, "grid shape does not match height·width");
    let mut out = alloc::vec![0.0; grid.cols()];
    for (r, w) in bilinear_taps(height, width, px, py) {
        for (o, x) in out.iter_mut().zip(grid.row_slice(r)) {
            *o += w * x;
        }
    }
    out
}

/// Camera-to-world pose at `eye` whose forward axis points at `target`.
/// `up` maps to the image's negative y direction.
pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Pose, GeometryError> {
    let f = sub(target, eye);
    if norm(f) <= 1e-12 {
        return Err(GeometryError::DegenerateLookAt);
    }
    let z = normalize(f);
    let xr = cross(z, up);
    if norm(xr) <= 1e-9 * norm(up).max(1.0) {
        return Err(GeometryError::DegenerateLookAt);
    }
    let x = normalize(xr);
    let y = cross(z, x);
    Ok(Pose { rotation: [[x[0], y[0], z[0]], [x[1], y[1], z[1]], [x[2], y[2], z[2]]], translation: eye })
}

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn empty() -> Self {
        Self { min: [f64::INFINITY; 3], max: [f64::NEG_INFINITY; 3] }
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        let mut out = *self;
        for k in 0..3 {
            out.min[k] = out.min[k].min(other.min[k]);
            out.max[k] = out.max[k].max(other.max[k]);
        }
        out
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|k| other.min[k] >= self.min[k] - 1e-12 && other.max[k] <= self.max[k] + 1e-12)
    }

    pub fn extent(&self) -> Vec3 {
        sub(self.max, self.min)
    }

    pub fn center(&self) -> Vec3 {
        scale(add(self.min, self.max), 0.5)
    }

    /// Radius of the sphere about [`Aabb::center`] enclosing the box.
    pub fn bounding_radius(&self) -> f64 {
        0.5 * norm(self.extent())
    }

    /// Parametric entry/exit `(t0, t1)` of the infinite line, if it hits.
    pub fn intersect(&self, origin: Vec3, direction: Vec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for k in 0..3 {
            if direction[k].abs() < 1e-300 {
                if origin[k] < self.min[k] || origin[k] > self.max[k] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / direction[k];
            let (mut a, mut b) = ((self.min[k] - origin[k]) * inv, (self.max[k] - origin[k]) * inv);
            if a > b {
                core::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
        }
        (t0 <= t1).then_some((t0, t1))
    }
}

/// Depth range `[near, far]` covering `bbox` from `camera`, based on the
/// box's bounding sphere.
pub fn depth_range(camera: &Camera, bbox: &Aabb) -> (f64, f64) {
    let dist = norm(sub(camera.center(), bbox.center()));
    let r = bbox.bounding_radius();
    let near = (dist - r).max(DEFAULT_NEAR);
    let far = (dist + r).max(near + DEFAULT_NEAR);
    (near, far)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tensor;
    use proptest::prelude::*;

    fn test_camera(pose: Pose) -> Camera {
        Camera::new(40.0, 42.0, 16.0, 15.0, 32, 30, pose).unwrap()
    }

    #[test]
    fn principal_point_ray_follows_forward_axis() {
        let pose = look_at([1.0, 2.0, -3.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0]).unwrap();
        let cam = test_camera(pose);
        let ray = ray_for_pixel(&cam, cam.cx - 0.5, cam.cy - 0.5).unwrap();
        let f = pose.forward();
        for k in 0..3 {
            assert!((ray.direction[k] - f[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn canonical_camera_single_pixel() {
        let cam = Camera::new(1.0, 1.0, 0.5, 0.5, 1, 1, Pose::identity()).unwrap();
        let ray = ray_for_pixel(&cam, 0.0, 0.0).unwrap();
        assert_eq!(ray.direction, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn adjacent_pixels_differ_by_one_over_focal_length() {
        let cam = Camera::new(500.0, 500.0, 100.0, 100.0, 200, 200, Pose::identity()).unwrap();
        let a = ray_for_pixel(&cam, 99.5, 99.5).unwrap();
        let b = ray_for_pixel(&cam, 100.5, 99.5).unwrap();
        let angle = libm::acos(dot(a.direction, b.direction).min(1.0));
        assert!((angle - 1.0 / 500.0).abs() < 1e-6, "angle {angle}");
    }

    #[test]
    fn pixel_outside_image_rejected() {
        let cam = test_camera(Pose::identity());
        assert!(matches!(ray_for_pixel(&cam, 32.0, 0.0), Err(GeometryError::PixelOutOfBounds { .. })));
        assert!(ray_for_pixel(&cam, -0.1, 0.0).is_err());
    }

    #[test]
    fn camera_center_is_behind_camera() {
        let pose = look_at([0.0, 0.0, -2.0], [0.0; 3], [0.0, 1.0, 0.0]).unwrap();
        let cam = test_camera(pose);
        assert!(project_point(&cam, cam.center()).is_none());
        let behind = sub(cam.center(), pose.forward());
        assert!(project_point(&cam, behind).is_none());
    }

    #[test]
    fn forward_axis_projects_to_principal_point() {
        let pose = look_at([0.3, -1.0, 2.0], [0.0; 3], [0.0, 0.0, 1.0]).unwrap();
        let cam = test_camera(pose);
        let p = add(cam.center(), scale(pose.forward(), 3.7));
        let ip = project_point(&cam, p).unwrap();
        assert!((ip.px - cam.cx).abs() < 1e-9 && (ip.py - cam.cy).abs() < 1e-9);
        assert!((ip.depth - 3.7).abs() < 1e-12);
    }

    #[test]
    fn look_at_canonical_and_degenerate() {
        let pose = look_at([0.0, 0.0, -1.0], [0.0; 3], [0.0, 1.0, 0.0]).unwrap();
        let f = pose.forward();
        assert!((f[0]).abs() < 1e-15 && (f[1]).abs() < 1e-15 && (f[2] - 1.0).abs() < 1e-15);
        assert_eq!(look_at([0.0, 0.0, -1.0], [0.0; 3], [0.0, 0.0, 1.0]), Err(GeometryError::DegenerateLookAt));
        assert_eq!(look_at([1.0; 3], [1.0; 3], [0.0, 1.0, 0.0]), Err(GeometryError::DegenerateLookAt));
    }

    #[test]
    fn bilinear_exact_at_centers_and_midpoints() {
        let grid = Tensor::from_vec(6, 2, (0..12).map(|i| i as f64 * 1.5 - 3.0).collect());
        // 2 rows × 3 columns
        for y in 0..2 {
            for x in 0..3 {
                let s = bilinear_sample(&grid, 2, 3, x as f64 + 0.5, y as f64 + 0.5);
                assert_eq!(s.as_slice(), grid.row_slice(y * 3 + x));
            }
        }
        let mid = bilinear_sample(&grid, 2, 3, 1.0, 0.5);
        for c in 0..2 {
            let expect = 0.5 * (grid.get(0, c) + grid.get(1, c));
            assert!((mid[c] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn bilinear_constant_grid_and_clamping() {
        let grid = Tensor::filled(12, 3, 0.25);
        for &(x, y) in &[(0.0, 0.0), (3.9, 2.7), (-5.0, 9.0), (100.0, -3.0)] {
            let s = bilinear_sample(&grid, 3, 4, x, y);
            assert!(s.iter().all(|v| (v - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn aabb_slab_test() {
        let b = Aabb::new([-1.0; 3], [1.0; 3]);
        let (t0, t1) = b.intersect([0.0, 0.0, -5.0], [0.0, 0.0, 1.0]).unwrap();
        assert!((t0 - 4.0).abs() < 1e-12 && (t1 - 6.0).abs() < 1e-12);
        assert!(b.intersect([0.0, 3.0, -5.0], [0.0, 0.0, 1.0]).is_none());
    }

    fn unit_vec() -> impl Strategy<Value = Vec3> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
            .prop_filter("non-degenerate", |(a, b, c)| a * a + b * b + c * c > 0.05)
            .prop_map(|(a, b, c)| normalize([a, b, c]))
    }

    proptest! {
        #[test]
        fn look_at_is_orthonormal(eye in unit_vec(), up in unit_vec(), dist in 0.5f64..5.0) {
            let eye = scale(eye, dist);
            prop_assume!(norm(cross(normalize(sub([0.0;3], eye)), up)) > 1e-3);
            let pose = look_at(eye, [0.0; 3], up).unwrap();
            prop_assert!(pose.orthonormality_error().unwrap() < 1e-12);
        }

        #[test]
        fn project_inverts_ray_for_pixel(
            eye in unit_vec(), dist in 1.0f64..6.0,
            u in 0.0f64..31.999, v in 0.0f64..29.999, t in 0.1f64..10.0,
        ) {
            let up = if eye[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
            let pose = look_at(scale(eye, dist), [0.0; 3], up).unwrap();
            let cam = test_camera(pose);
            let ray = ray_for_pixel(&cam, u, v).unwrap();
            let ip = project_point(&cam, ray.at(t)).unwrap();
            prop_assert!((ip.px - (u + 0.5)).abs() < 1e-9);
            prop_assert!((ip.py - (v + 0.5)).abs() < 1e-9);
            let cos_theta = dot(ray.direction, pose.forward());
            prop_assert!((ip.depth - t * cos_theta).abs() < 1e-9);
        }

        #[test]
        fn bilinear_is_linear_along_axes(x0 in 0usize..3, y in 0usize..3, frac in 0.0f64..1.0) {
            let grid = Tensor::from_vec(16, 1, (0..16).map(|i| ((i * 7) % 5) as f64).collect());
            let s = bilinear_sample(&grid, 4, 4, x0 as f64 + 0.5 + frac, y as f64 + 0.5)[0];
            let a = grid.get(y * 4 + x0, 0);
            let b = grid.get(y * 4 + x0 + 1, 0);
            prop_assert!((s - (a + frac * (b - a))).abs() < 1e-12);
        }
    }
}
