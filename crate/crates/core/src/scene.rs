//! Procedural analytic scenes: unions of constant-density, constant-albedo
//! spheres and boxes. Density is piecewise constant along any ray, so the
//! emission–absorption integral has a closed form; [`oracle_render`] evaluates
//! it exactly and serves as ground truth for everything downstream.

use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::geometry::{self, Aabb, Camera, GeometryError, Ray, Vec3};
use crate::math;

pub const WHITE: [f64; 3] = [1.0, 1.0, 1.0];

#[derive(Clone, Debug, PartialEq)]
pub enum SceneError {
    Unsatisfiable(&'static str),
    EmptyProjection,
    Geometry(GeometryError),
}

impl fmt::Display for SceneError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SceneError::Unsatisfiable(why) => write!(f, "scene generator config unsatisfiable: {why}"),
            SceneError::EmptyProjection => write!(f, "scene bounding box does not project into the image"),
            SceneError::Geometry(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for SceneError {}

impl From<GeometryError> for SceneError {
    fn from(e: GeometryError) -> Self {
        SceneError::Geometry(e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    Box { min: Vec3, max: Vec3 },
}

impl Shape {
    pub fn contains(&self, p: Vec3) -> bool {
        match *self {
            Shape::Sphere { center, radius } => {
                let d = geometry::sub(p, center);
                geometry::dot(d, d) <= radius * radius
            }
            Shape::Box { min, max } => (0..3).all(|k| p[k] >= min[k] && p[k] <= max[k]),
        }
    }

    pub fn bounds(&self) -> Aabb {
        match *self {
            Shape::Sphere { center, radius } => Aabb::new(
                [center[0] - radius, center[1] - radius, center[2] - radius],
                [center[0] + radius, center[1] + radius, center[2] + radius],
            ),
            Shape::Box { min, max } => Aabb::new(min, max),
        }
    }

    /// Entry/exit parameters of the infinite line through the shape.
    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<(f64, f64)> {
        match *self {
            Shape::Sphere { center, radius } => {
                let oc = geometry::sub(origin, center);
                let a = geometry::dot(dir, dir);
                let b = geometry::dot(dir, oc);
                let c = geometry::dot(oc, oc) - radius * radius;
                let disc = b * b - a * c;
                if disc <= 0.0 {
                    return None;
                }
                let s = math::sqrt(disc);
                Some(((-b - s) / a, (-b + s) / a))
            }
            Shape::Box { min, max } => Aabb::new(min, max).intersect(origin, dir),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    /// Extinction coefficient, inverse world units.
    pub density: f64,
    pub albedo: [f64; 3],
}

/// Primitives later in the list win where they overlap.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    pub background: [f64; 3],
    pub bbox: Aabb,
}

impl SceneSpec {
    pub fn new(primitives: Vec<Primitive>, background: [f64; 3]) -> Self {
        let bbox = primitives.iter().fold(Aabb::empty(), |acc, p| acc.union(&p.shape.bounds()));
        Self { primitives, background, bbox }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    /// Inclusive primitive count range.
    pub count: (usize, usize),
    pub density: (f64, f64),
    pub placement: Aabb,
    pub radius: (f64, f64),
    /// Box half-extent range, per axis.
    pub half_extent: (f64, f64),
    pub sphere_only: bool,
    pub background: [f64; 3],
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            count: (2, 4),
            density: (5.0, 25.0),
            placement: Aabb::new([-0.8; 3], [0.8; 3]),
            radius: (0.2, 0.45),
            half_extent: (0.15, 0.4),
            sphere_only: false,
            background: WHITE,
        }
    }
}

fn range<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws a scene whose primitives all lie inside `config.placement`.
pub fn sample_scene<R: Rng>(rng: &mut R, config: &GenConfig) -> Result<SceneSpec, SceneError> {
    let ext = config.placement.extent();
    if !(ext.iter().all(|&e| e > 0.0)) {
        return Err(SceneError::Unsatisfiable("placement volume has zero extent"));
    }
    let (cmin, cmax) = config.count;
    if cmin > cmax || cmax == 0 {
        return Err(SceneError::Unsatisfiable("empty primitive count range"));
    }
    let (dmin, dmax) = config.density;
    if !(dmin >= 0.0 && dmax >= dmin && dmax.is_finite()) {
        return Err(SceneError::Unsatisfiable("density range"));
    }
    let (rmin, rmax) = config.radius;
    let (hmin, hmax) = config.half_extent;
    if !(rmin > 0.0 && rmax >= rmin && hmin > 0.0 && hmax >= hmin) {
        return Err(SceneError::Unsatisfiable("size range"));
    }
    let max_fit = ext.iter().cloned().fold(f64::INFINITY, f64::min) * 0.5;

    let count = rng.random_range(cmin..=cmax);
    let mut primitives = Vec::with_capacity(count);
    for _ in 0..count {
        let sphere = config.sphere_only || rng.random_bool(0.5);
        let shape = if sphere {
            let r = range(rng, config.radius).min(max_fit);
            let mut c = [0.0; 3];
            for k in 0..3 {
                c[k] = range(rng, (config.placement.min[k] + r, config.placement.max[k] - r));
            }
            Shape::Sphere { center: c, radius: r }
        } else {
            let mut min = [0.0; 3];
            let mut max = [0.0; 3];
            for k in 0..3 {
                let h = range(rng, config.half_extent).min(max_fit);
                let c = range(rng, (config.placement.min[k] + h, config.placement.max[k] - h));
                min[k] = c - h;
                max[k] = c + h;
            }
            Shape::Box { min, max }
        };
        let density = range(rng, config.density);
        let albedo = [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)];
        primitives.push(Primitive { shape, density, albedo });
    }
    Ok(SceneSpec::new(primitives, config.background))
}

/// Density and albedo at `p`; `(0, black)` outside every primitive.
pub fn field_query(scene: &SceneSpec, p: Vec3) -> (f64, [f64; 3]) {
    scene
        .primitives
        .iter()
        .rev()
        .find(|prim| prim.shape.contains(p))
        .map_or((0.0, [0.0; 3]), |prim| (prim.density, prim.albedo))
}

/// Exact render result: color and the transmittance left at `t_far`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleSample {
    pub rgb: [f64; 3],
    pub residual: f64,
}

/// Exact emission–absorption integral along `ray` over `[t_near, t_far]`,
/// with the residual transmittance composited over the background.
pub fn oracle_render(scene: &SceneSpec, ray: &Ray) -> [f64; 3] {
    oracle_render_detailed(scene, ray).rgb
}

pub fn oracle_render_detailed(scene: &SceneSpec, ray: &Ray) -> OracleSample {
    let mut cuts = Vec::with_capacity(2 + 2 * scene.primitives.len());
    cuts.push(ray.t_near);
    cuts.push(ray.t_far);
    for prim in &scene.primitives {
        if let Some((a, b)) = prim.shape.intersect(ray.origin, ray.direction) {
            for t in [a, b] {
                if t > ray.t_near && t < ray.t_far {
                    cuts.push(t);
                }
            }
        }
    }
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();

    let mut rgb = [0.0; 3];
    let mut transmittance = 1.0;
    for w in cuts.windows(2) {
        let len = w[1] - w[0];
        if len <= 0.0 {
            continue;
        }
        let (sigma, albedo) = field_query(scene, ray.at(0.5 * (w[0] + w[1])));
        if sigma == 0.0 {
            continue;
        }
        let attenuation = math::exp(-sigma * len);
        let alpha = 1.0 - attenuation;
        for k in 0..3 {
            rgb[k] += transmittance * alpha * albedo[k];
        }
        transmittance *= attenuation;
    }
    for k in 0..3 {
        rgb[k] += transmittance * scene.background[k];
    }
    OracleSample { rgb, residual: transmittance }
}

/// `n_rays` pixels drawn uniformly (with replacement) among those whose
/// center ray hits the scene's bounding box.
pub fn bbox_ray_filter<R: Rng>(
    scene: &SceneSpec,
    camera: &Camera,
    rng: &mut R,
    n_rays: usize,
) -> Result<Vec<(usize, usize)>, SceneError> {
    let candidates = bbox_pixels(&scene.bbox, camera)?;
    if candidates.is_empty() {
        return Err(SceneError::EmptyProjection);
    }
    Ok((0..n_rays).map(|_| candidates[rng.random_range(0..candidates.len())]).collect())
}

/// Every pixel whose center ray intersects `bbox` in front of the camera.
pub fn bbox_pixels(bbox: &Aabb, camera: &Camera) -> Result<Vec<(usize, usize)>, SceneError> {
    let mut out = Vec::new();
    for y in 0..camera.height {
        for x in 0..camera.width {
            let ray = geometry::ray_for_pixel(camera, x as f64, y as f64)?;
            if let Some((_, t1)) = bbox.intersect(ray.origin, ray.direction) {
                if t1 > 0.0 {
                    out.push((x, y));
                }
            }
        }
    }
    Ok(out)
}

/// `count` cameras on a sphere of radius `distance` around `target`, placed
/// on a Fibonacci spiral and looking at the target (world up is +z).
pub fn orbit_cameras(
    count: usize,
    distance: f64,
    target: Vec3,
    fov_y_radians: f64,
    width: usize,
    height: usize,
) -> Result<Vec<Camera>, GeometryError> {
    let golden = core::f64::consts::PI * (3.0 - math::sqrt(5.0));
    (0..count)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / count as f64;
            let r = math::sqrt((1.0 - z * z).max(0.0));
            let phi = golden * i as f64;
            let dir = [r * math::cos(phi), r * math::sin(phi), z];
            let eye = geometry::add(target, geometry::scale(dir, distance));
            let up = if z.abs() > 0.999 { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] };
            let pose = geometry::look_at(eye, target, up)?;
            Camera::with_fov(fov_y_radians, width, height, pose)
        })
        .collect()
}
