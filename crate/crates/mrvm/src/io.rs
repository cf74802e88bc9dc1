//! PPM images, scene manifests and corpus generation on disk.

use std::fs;
use std::path::{Path, PathBuf};

use mrvm_core::geometry::{self, Aabb, Camera, Pose};
use mrvm_core::image::Image;
use mrvm_core::rng::{purpose, substream};
use mrvm_core::scene::{self, GenConfig, Primitive, SceneSpec, Shape};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const SCENE_FILE: &str = "scene.json";

/// Binary PPM (P6, maxval 255). Values are clamped to `[0,1]` and rounded.
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    out
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<Image, String> {
    // header: magic, width, height, maxval, separated by whitespace, comments allowed
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| "non-ascii header")?.to_string());
    }
    if fields[0] != "P6" {
        return Err(format!("unsupported magic {:?}", fields[0]));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| format!("bad header field {s:?}"));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(format!("maxval {maxval} not supported"));
    }
    pos += 1;
    let n = w * h * 3;
    if bytes.len() < pos + n {
        return Err(format!("expected {n} pixel bytes, found {}", bytes.len().saturating_sub(pos)));
    }
    Ok(Image::from_vec(w, h, bytes[pos..pos + n].iter().map(|&b| b as f64 / 255.0).collect()))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|m| Error::data(path, m))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera-to-world `[R | t]`, row-major.
    pub pose: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scene_id: String,
    pub width: usize,
    pub height: usize,
    pub cameras: Vec<CameraRecord>,
    pub images: Vec<String>,
    pub bbox: BoxRecord,
    pub splits: Splits,
}

impl Manifest {
    pub fn camera(&self, i: usize) -> std::result::Result<Camera, String> {
        let c = &self.cameras[i];
        let pose: [f64; 12] = c.pose.as_slice().try_into().map_err(|_| format!("camera {i}: pose needs 12 values"))?;
        Camera::new(c.fx, c.fy, c.cx, c.cy, self.width, self.height, Pose::from_row_major(&pose)).map_err(|e| format!("camera {i}: {e}"))
    }
}

impl From<&Camera> for CameraRecord {
    fn from(c: &Camera) -> Self {
        CameraRecord { fx: c.fx, fy: c.fy, cx: c.cx, cy: c.cy, pose: c.pose.to_row_major().to_vec() }
    }
}

/// Serializable mirror of an analytic scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub background: [f64; 3],
    pub primitives: Vec<PrimitiveRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum PrimitiveRecord {
    Sphere { center: [f64; 3], radius: f64, density: f64, albedo: [f64; 3] },
    Box { min: [f64; 3], max: [f64; 3], density: f64, albedo: [f64; 3] },
}

impl From<&SceneSpec> for SceneRecord {
    fn from(s: &SceneSpec) -> Self {
        let primitives = s
            .primitives
            .iter()
            .map(|p| match p.shape {
                Shape::Sphere { center, radius } => PrimitiveRecord::Sphere { center, radius, density: p.density, albedo: p.albedo },
                Shape::Box { min, max } => PrimitiveRecord::Box { min, max, density: p.density, albedo: p.albedo },
            })
            .collect();
        SceneRecord { background: s.background, primitives }
    }
}

impl From<&SceneRecord> for SceneSpec {
    fn from(r: &SceneRecord) -> Self {
        let prims = r
            .primitives
            .iter()
            .map(|p| match *p {
                PrimitiveRecord::Sphere { center, radius, density, albedo } => Primitive { shape: Shape::Sphere { center, radius }, density, albedo },
                PrimitiveRecord::Box { min, max, density, albedo } => Primitive { shape: Shape::Box { min, max }, density, albedo },
            })
            .collect();
        SceneSpec::new(prims, r.background)
    }
}

/// Oracle render of every pixel of `camera`.
pub fn render_oracle(scene: &SceneSpec, camera: &Camera) -> Result<Image> {
    let (w, h) = (camera.width, camera.height);
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(3 * w);
            for x in 0..w {
                let ray = geometry::ray_for_pixel(camera, x as f64, y as f64).map_err(|e| Error::Invalid(e.to_string()))?;
                let ray = ray.with_range(geometry::DEFAULT_NEAR, geometry::DEFAULT_FAR).map_err(|e| Error::Invalid(e.to_string()))?;
                row.extend(scene::oracle_render(scene, &ray));
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(Image::from_vec(w, h, rows.concat()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Invalid(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))
}

/// An empty scene's box (infinite bounds) is stored as a point at the origin.
fn box_record(b: &Aabb) -> BoxRecord {
    if b.min.iter().chain(&b.max).all(|v| v.is_finite()) {
        BoxRecord { min: b.min, max: b.max }
    } else {
        BoxRecord { min: [0.0; 3], max: [0.0; 3] }
    }
}

/// Renders every camera with the oracle, writes `view_NNN.ppm` files, the
/// manifest and the scene description into `out_dir`.
pub fn emit_dataset(scene: &SceneSpec, cameras: &[Camera], splits: Splits, scene_id: &str, out_dir: &Path) -> Result<Manifest> {
    let first = cameras.first().ok_or_else(|| Error::Invalid("no cameras".into()))?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut images = Vec::with_capacity(cameras.len());
    for (i, cam) in cameras.iter().enumerate() {
        if (cam.width, cam.height) != (first.width, first.height) {
            return Err(Error::Invalid("cameras must share one resolution".into()));
        }
        let name = format!("view_{i:03}.ppm");
        write_ppm(&out_dir.join(&name), &render_oracle(scene, cam)?)?;
        images.push(name);
    }
    let manifest = Manifest {
        scene_id: scene_id.to_string(),
        width: first.width,
        height: first.height,
        cameras: cameras.iter().map(CameraRecord::from).collect(),
        images,
        bbox: box_record(&scene.bbox),
        splits,
    };
    write_json(&out_dir.join(MANIFEST), &manifest)?;
    write_json(&out_dir.join(SCENE_FILE), &SceneRecord::from(scene))?;
    Ok(manifest)
}

/// One scene loaded for training or evaluation, images in `[0,1]`.
#[derive(Clone, Debug)]
pub struct SceneData {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    pub bbox: Aabb,
}

pub fn load_dataset(dir: &Path) -> Result<SceneData> {
    let mpath = dir.join(MANIFEST);
    let manifest: Manifest = read_json(&mpath)?;
    if manifest.cameras.len() != manifest.images.len() {
        return Err(Error::data(&mpath, format!("{} cameras but {} images", manifest.cameras.len(), manifest.images.len())));
    }
    let n = manifest.cameras.len();
    if let Some(&bad) = manifest.splits.train.iter().chain(&manifest.splits.test).find(|&&i| i >= n) {
        return Err(Error::data(&mpath, format!("split index {bad} out of range")));
    }
    if manifest.splits.train.is_empty() {
        return Err(Error::data(&mpath, "no training views"));
    }
    let cameras = (0..n).map(|i| manifest.camera(i)).collect::<std::result::Result<Vec<_>, _>>().map_err(|m| Error::data(&mpath, m))?;
    let mut images = Vec::with_capacity(n);
    for name in &manifest.images {
        let p = dir.join(name);
        let img = read_ppm(&p)?;
        if (img.width(), img.height()) != (manifest.width, manifest.height) {
            return Err(Error::data(&p, "image size differs from manifest"));
        }
        images.push(img);
    }
    let bbox = Aabb::new(manifest.bbox.min, manifest.bbox.max);
    Ok(SceneData { dir: dir.to_path_buf(), manifest, cameras, images, bbox })
}

/// A single scene directory, or every subdirectory holding a manifest, in name order.
pub fn load_corpus(dir: &Path) -> Result<Vec<SceneData>> {
    if dir.join(MANIFEST).is_file() {
        return Ok(vec![load_dataset(dir)?]);
    }
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut dirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join(MANIFEST).is_file()).collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::data(dir, "no scene manifests found"));
    }
    dirs.iter().map(|d| load_dataset(d)).collect()
}

/// Corpus generation settings (the `gen-scenes` config file).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSettings {
    pub width: usize,
    pub height: usize,
    pub views: usize,
    pub test_views: usize,
    pub distance: f64,
    pub fov_deg: f64,
    pub primitives: (usize, usize),
    pub density: (f64, f64),
    /// Primitives stay inside `[-placement, placement]³`.
    pub placement: f64,
    pub radius: (f64, f64),
    pub half_extent: (f64, f64),
    pub sphere_only: bool,
    pub background: [f64; 3],
}

impl Default for GenSettings {
    fn default() -> Self {
        let g = GenConfig::default();
        GenSettings {
            width: 64,
            height: 64,
            views: 54,
            test_views: 4,
            distance: 4.0,
            fov_deg: 40.0,
            primitives: g.count,
            density: g.density,
            placement: g.placement.max[0],
            radius: g.radius,
            half_extent: g.half_extent,
            sphere_only: g.sphere_only,
            background: g.background,
        }
    }
}

impl GenSettings {
    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            count: self.primitives,
            density: self.density,
            placement: Aabb::new([-self.placement; 3], [self.placement; 3]),
            radius: self.radius,
            half_extent: self.half_extent,
            sphere_only: self.sphere_only,
            background: self.background,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.views == 0 {
            return Err(Error::Invalid("width, height and views must be positive".into()));
        }
        if self.test_views >= self.views {
            return Err(Error::Invalid("test_views must leave at least one training view".into()));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0 && self.distance > 0.0) {
            return Err(Error::Invalid("fov_deg must lie in (0,180) and distance be positive".into()));
        }
        Ok(())
    }

    /// Evenly spread test indices; the rest train.
    pub fn splits(&self) -> Splits {
        let (n, k) = (self.views, self.test_views);
        let test: Vec<usize> = (0..k).map(|i| (2 * i + 1) * n / (2 * k)).collect();
        let train = (0..n).filter(|i| !test.contains(i)).collect();
        Splits { train, test }
    }

    pub fn cameras(&self) -> Result<Vec<Camera>> {
        scene::orbit_cameras(self.views, self.distance, [0.0; 3], self.fov_deg.to_radians(), self.width, self.height)
            .map_err(|e| Error::Invalid(e.to_string()))
    }
}

/// Writes `count` scenes named `scene_NNN` under `out`. Scene `i` depends
/// only on `seed` and `i`.
pub fn gen_corpus(settings: &GenSettings, out: &Path, count: usize, seed: u64, force: bool) -> Result<Vec<Manifest>> {
    settings.validate()?;
    if out.exists() {
        let non_empty = fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_some();
        if non_empty && !force {
            return Err(Error::Usage(format!("{} exists and is not empty (use --force)", out.display())));
        }
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cameras = settings.cameras()?;
    let cfg = settings.gen_config();
    let mut manifests = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = substream(seed, &[purpose::SCENE, i as u64]);
        let spec = scene::sample_scene(&mut rng, &cfg).map_err(|e| Error::Invalid(e.to_string()))?;
        let id = format!("s{seed}_{i:03}");
        manifests.push(emit_dataset(&spec, &cameras, settings.splits(), &id, &out.join(format!("scene_{i:03}")))?);
    }
    Ok(manifests)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mrvm_core::scene::WHITE;

    #[test]
    fn ppm_round_trip() {
        let mut img = Image::new(3, 2);
        img.set_pixel(0, 0, [1.0, 0.0, 0.5]);
        img.set_pixel(2, 1, [0.2, 0.4, 0.6]);
        let bytes = encode_ppm(&img);
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        let back = decode_ppm(&bytes).unwrap();
        assert_eq!(back.pixel(0, 0), [1.0, 0.0, 128.0 / 255.0]);
        assert_eq!(encode_ppm(&back), bytes);
        assert!(decode_ppm(b"P3\n1 1\n255\n").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n\0\0").is_err());
        assert_eq!(decode_ppm(b"P6 # c\n1 1\n255\n\x01\x02\x03").unwrap().pixel(0, 0)[2], 3.0 / 255.0);
    }

    #[test]
    fn empty_scene_single_white_pixel() {
        let dir = tempfile::tempdir().unwrap();
        let pose = geometry::look_at([0.0, 0.0, -3.0], [0.0; 3], [0.0, 1.0, 0.0]).unwrap();
        let cam = Camera::new(1.0, 1.0, 0.5, 0.5, 1, 1, pose).unwrap();
        let scene = SceneSpec::new(vec![], WHITE);
        let m = emit_dataset(&scene, &[cam], Splits { train: vec![0], test: vec![] }, "empty", dir.path()).unwrap();
        assert_eq!(m.cameras.len(), m.images.len());
        let bytes = fs::read(dir.path().join(&m.images[0])).unwrap();
        assert_eq!(&bytes[bytes.len() - 3..], &[255, 255, 255]);
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.manifest, m);
        assert_eq!(loaded.cameras[0].pose.to_row_major(), cam.pose.to_row_major());
    }

    #[test]
    fn scene_record_round_trip() {
        let mut rng = substream(4, &[]);
        let s = scene::sample_scene(&mut rng, &GenConfig::default()).unwrap();
        let r = SceneRecord::from(&s);
        let text = serde_json::to_string(&r).unwrap();
        let back: SceneRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(SceneSpec::from(&back), s);
    }

    #[test]
    fn splits_are_disjoint_and_cover() {
        let s = GenSettings { views: 10, test_views: 3, ..GenSettings::default() };
        let sp = s.splits();
        assert_eq!(sp.test, vec![1, 5, 8]);
        assert_eq!(sp.train.len() + sp.test.len(), 10);
        assert!(sp.train.iter().all(|i| !sp.test.contains(i)));
    }
}
