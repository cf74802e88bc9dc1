//! Views, reference selection and ray construction over loaded scenes.

use mrvm_core::diff::Tensor;
use mrvm_core::geometry::{self, Aabb, Camera, Ray};
use mrvm_core::model::{RayInput, References};

use crate::error::{Error, Result};
use crate::io::SceneData;

/// Training views of `scene`, optionally thinned to `cap` evenly spaced ones.
pub fn train_views(scene: &SceneData, cap: Option<usize>) -> Vec<usize> {
    let all = &scene.manifest.splits.train;
    match cap {
        Some(n) if n < all.len() => (0..n).map(|i| all[i * all.len() / n]).collect(),
        _ => all.clone(),
    }
}

/// The `s` views in `pool` whose camera centers are closest to that of
/// `camera`, skipping `exclude`; ties go to the lower index.
pub fn nearest_views(scene: &SceneData, camera: &Camera, pool: &[usize], s: usize, exclude: Option<usize>) -> Result<Vec<usize>> {
    let c = camera.center();
    let mut cands: Vec<(f64, usize)> = pool
        .iter()
        .filter(|&&i| Some(i) != exclude)
        .map(|&i| (geometry::norm(geometry::sub(scene.cameras[i].center(), c)), i))
        .collect();
    if cands.len() < s {
        return Err(Error::Invalid(format!("{} reference views requested, {} available", s, cands.len())));
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(cands[..s].iter().map(|&(_, i)| i).collect())
}

pub fn references(scene: &SceneData, views: &[usize]) -> References {
    let (w, h) = (scene.manifest.width, scene.manifest.height);
    let mut data = Vec::with_capacity(views.len() * w * h * 3);
    for &v in views {
        data.extend_from_slice(scene.images[v].data());
    }
    References {
        cameras: views.iter().map(|&v| scene.cameras[v]).collect(),
        height: h,
        width: w,
        images: Tensor::from_vec(views.len() * w * h, 3, data),
    }
}

/// Ray through pixel `(x, y)` with its depth range: the chord through
/// `bbox` when `clip_to_bbox` (`None` if the ray misses it), otherwise the
/// camera-level range covering the box.
pub fn pixel_ray(camera: &Camera, bbox: &Aabb, x: usize, y: usize, clip_to_bbox: bool) -> Result<Option<Ray>> {
    let ray = geometry::ray_for_pixel(camera, x as f64, y as f64).map_err(|e| Error::Invalid(e.to_string()))?;
    let (near, far) = if clip_to_bbox {
        match bbox.intersect(ray.origin, ray.direction) {
            Some((t0, t1)) if t1 > t0.max(geometry::DEFAULT_NEAR) => (t0.max(geometry::DEFAULT_NEAR), t1),
            _ => return Ok(None),
        }
    } else {
        geometry::depth_range(camera, bbox)
    };
    ray.with_range(near, far).map(Some).map_err(|e| Error::Invalid(e.to_string()))
}

/// Pixels whose rays get a non-empty depth range, row-major.
pub fn candidate_pixels(camera: &Camera, bbox: &Aabb, clip_to_bbox: bool) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for y in 0..camera.height {
        for x in 0..camera.width {
            if pixel_ray(camera, bbox, x, y, clip_to_bbox)?.is_some() {
                out.push((x, y));
            }
        }
    }
    Ok(out)
}

pub fn ray_input(scene: &SceneData, view: usize, x: usize, y: usize, clip_to_bbox: bool) -> Result<Option<RayInput>> {
    Ok(pixel_ray(&scene.cameras[view], &scene.bbox, x, y, clip_to_bbox)?.map(|ray| RayInput { ray, target: scene.images[view].pixel(x, y) }))
}
