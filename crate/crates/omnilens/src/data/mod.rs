//! Deterministic synthetic scenes standing in for heterogeneous clinical
//! datasets: colored, textured shapes on a noisy background, with exact
//! class/box/mask ground truth. Each class is bound to one shape family so
//! every task is learnable from geometry alone; per-dataset kind policies
//! simulate partially labeled sources, and an unlabeled stream feeds the
//! contrastive objective.
//!
//! ```
//! use omnilens::data::{generate_scene, SceneSpec};
//!
//! let spec = SceneSpec { image_size: 32, min_radius: 4, max_radius: 8, ..SceneSpec::default() };
//! let a = generate_scene(&spec, 42).unwrap();
//! let b = generate_scene(&spec, 42).unwrap();
//! assert_eq!(a.image, b.image); // same seed, same scene
//! assert_eq!(a.record.classes, b.record.classes);
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{
    manifest_lines, parse_manifest_lines, AnnotationRecord, BoxPx, Kind, ManifestEntry,
    MANIFEST_HEADER,
};
use crate::error::{Error, Result};

/// Full label palette; `normal` is the label of a scene with no findings and
/// never appears as a drawn object.
pub const CLASS_NAMES: [&str; 5] = ["normal", "polyp", "adenoma", "cancer", "ulcerative-colitis"];

/// Classes that appear as objects.
pub const LESION_CLASSES: [&str; 4] = ["polyp", "adenoma", "cancer", "ulcerative-colitis"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeFamily {
    Ellipse,
    Rect,
    Blob,
    Ring,
}

/// Fixed class-shape binding.
pub fn shape_of(class: &str) -> Option<ShapeFamily> {
    match class {
        "polyp" => Some(ShapeFamily::Ellipse),
        "adenoma" => Some(ShapeFamily::Rect),
        "cancer" => Some(ShapeFamily::Blob),
        "ulcerative-colitis" => Some(ShapeFamily::Ring),
        _ => None,
    }
}

fn class_color(class: &str) -> [f64; 3] {
    match class {
        "polyp" => [0.85, 0.45, 0.40],
        "adenoma" => [0.50, 0.75, 0.35],
        "cancer" => [0.45, 0.35, 0.80],
        "ulcerative-colitis" => [0.90, 0.80, 0.30],
        _ => [0.5, 0.5, 0.5],
    }
}

/// Scene recipe. The same `(spec, seed)` pair always regenerates the same
/// image and record, bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub image_size: usize,
    pub classes: Vec<String>,
    pub min_objects: usize,
    pub max_objects: usize,
    pub noise: f64,
    pub min_radius: usize,
    pub max_radius: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            image_size: 64,
            classes: LESION_CLASSES.iter().map(|s| s.to_string()).collect(),
            min_objects: 0,
            max_objects: 3,
            noise: 0.04,
            min_radius: 7,
            max_radius: 14,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::Config("image_size must be >= 16".into()));
        }
        if self.classes.is_empty() {
            return Err(Error::Config("scene needs at least one drawable class".into()));
        }
        for c in &self.classes {
            if shape_of(c).is_none() {
                return Err(Error::Config(format!("class {c:?} has no shape binding")));
            }
        }
        if self.min_objects > self.max_objects {
            return Err(Error::Config("min_objects > max_objects".into()));
        }
        if self.min_radius < 3 || self.max_radius < self.min_radius {
            return Err(Error::Config("bad radius range".into()));
        }
        if 2 * (self.max_radius + 2) >= self.image_size {
            return Err(Error::Config("max_radius too large for image_size".into()));
        }
        if !(0.0..=0.5).contains(&self.noise) {
            return Err(Error::Config("noise must be in [0, 0.5]".into()));
        }
        Ok(())
    }
}

/// One generated scene: the image in `[0,1]` and its full annotation record
/// carrying all three kinds.
pub struct Scene {
    pub image: Array3<f64>,
    pub record: AnnotationRecord,
}

struct PlacedShape {
    class: String,
    mask: Array2<u8>,
}

fn draw_shape(
    family: ShapeFamily,
    size: usize,
    cy: f64,
    cx: f64,
    r: f64,
    rng: &mut ChaCha8Rng,
) -> Array2<u8> {
    let aspect: f64 = rng.gen_range(0.6..1.0);
    let (p1, p2): (f64, f64) = (rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.0..std::f64::consts::TAU));
    Array2::from_shape_fn((size, size), |(y, x)| {
        let dy = y as f64 - cy;
        let dx = x as f64 - cx;
        let inside = match family {
            ShapeFamily::Ellipse => {
                let (ry, rx) = (r, r * aspect);
                (dy / ry).powi(2) + (dx / rx).powi(2) <= 1.0
            }
            ShapeFamily::Rect => dy.abs() <= r && dx.abs() <= r * aspect,
            ShapeFamily::Blob => {
                let theta = dy.atan2(dx);
                let r0 = r / 1.6;
                let rt = r0 * (1.0 + 0.35 * (3.0 * theta + p1).sin() + 0.2 * (5.0 * theta + p2).sin());
                (dy * dy + dx * dx).sqrt() <= rt
            }
            ShapeFamily::Ring => {
                let d = (dy * dy + dx * dx).sqrt();
                d <= r && d >= 0.45 * r
            }
        };
        inside as u8
    })
}

/// Tight bounding box of a nonempty binary mask; max edges are exclusive.
pub fn tight_box(mask: &Array2<u8>) -> Option<BoxPx> {
    let (h, w) = mask.dim();
    let (mut y0, mut x0, mut y1, mut x1) = (h, w, 0usize, 0usize);
    let mut any = false;
    for y in 0..h {
        for x in 0..w {
            if mask[[y, x]] != 0 {
                any = true;
                y0 = y0.min(y);
                x0 = x0.min(x);
                y1 = y1.max(y);
                x1 = x1.max(x);
            }
        }
    }
    any.then(|| BoxPx {
        x_min: x0 as f64,
        y_min: y0 as f64,
        x_max: (x1 + 1) as f64,
        y_max: (y1 + 1) as f64,
    })
}

/// Generates one scene. Objects never touch the border and never overlap.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = spec.image_size;
    // background: warm gradient plus per-pixel noise
    let mut image = Array3::from_shape_fn((size, size, 3), |(y, x, c)| {
        let g = (y + x) as f64 / (2 * size) as f64;
        let base = [0.32 + 0.12 * g, 0.22 + 0.08 * g, 0.20 + 0.05 * g];
        base[c]
    });
    for v in image.iter_mut() {
        *v += spec.noise * (rng.gen_range(0.0f64..1.0) - 0.5);
    }

    let n_objects = rng.gen_range(spec.min_objects..=spec.max_objects);
    let mut placed: Vec<PlacedShape> = Vec::new();
    let mut occupied = Array2::<u8>::zeros((size, size));
    for _ in 0..n_objects {
        for _attempt in 0..80 {
            let class = spec.classes[rng.gen_range(0..spec.classes.len())].clone();
            let r = rng.gen_range(spec.min_radius as f64..=spec.max_radius as f64);
            let lo = r + 1.5;
            let hi = size as f64 - r - 1.5;
            let cy = rng.gen_range(lo..hi);
            let cx = rng.gen_range(lo..hi);
            let mask = draw_shape(shape_of(&class).unwrap(), size, cy, cx, r, &mut rng);
            if mask.iter().all(|&v| v == 0) {
                continue;
            }
            let overlaps = mask
                .iter()
                .zip(occupied.iter())
                .any(|(&m, &o)| m != 0 && o != 0);
            if overlaps {
                continue;
            }
            // paint with a shaded class color and a mild texture
            let color = class_color(&class);
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            for y in 0..size {
                for x in 0..size {
                    if mask[[y, x]] != 0 {
                        occupied[[y, x]] = 1;
                        let tex = 0.06 * ((0.7 * x as f64 + 0.9 * y as f64 + phase).sin());
                        for c in 0..3 {
                            image[[y, x, c]] = (color[c] + tex).clamp(0.0, 1.0);
                        }
                    }
                }
            }
            placed.push(PlacedShape { class, mask });
            break;
        }
    }
    for v in image.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }

    let mut record = AnnotationRecord {
        image_id: String::new(),
        present_kinds: [Kind::Classification, Kind::Detection, Kind::Segmentation]
            .into_iter()
            .collect(),
        ..Default::default()
    };
    for p in placed {
        let b = tight_box(&p.mask).expect("placed mask is nonempty");
        record.classes.push(p.class);
        record.boxes.push(b);
        record.masks.push(p.mask);
    }
    record.validate(size as f64, size as f64)?;
    Ok(Scene { image, record })
}

/// What one synthetic "source" looks like: its annotation-kind policy and
/// split sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetPolicy {
    pub name: String,
    pub kinds: BTreeSet<Kind>,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// A written dataset: one manifest per nonempty split.
#[derive(Debug, Clone)]
pub struct BuiltDataset {
    pub name: String,
    pub manifests: Vec<(String, PathBuf)>,
}

const SPLITS: [&str; 3] = ["train", "val", "test"];

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Deterministic per-image seed; datasets and splits never share seeds.
pub fn scene_seed(master: u64, dataset: &str, split: &str, index: usize) -> u64 {
    let mut h = master;
    for b in dataset.bytes().chain(split.bytes()) {
        h = splitmix64(h ^ b as u64);
    }
    splitmix64(h ^ index as u64)
}

fn strip_to_policy(mut rec: AnnotationRecord, kinds: &BTreeSet<Kind>) -> AnnotationRecord {
    if !kinds.contains(&Kind::Detection) {
        rec.boxes.clear();
    }
    if !kinds.contains(&Kind::Segmentation) {
        rec.masks.clear();
    }
    rec.present_kinds = kinds.clone();
    rec
}

fn save_png_rgb(path: &Path, image: &Array3<f64>) -> Result<()> {
    let (h, w, _) = image.dim();
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                (image[[y, x, 0]].clamp(0.0, 1.0) * 255.0).round() as u8,
                (image[[y, x, 1]].clamp(0.0, 1.0) * 255.0).round() as u8,
                (image[[y, x, 2]].clamp(0.0, 1.0) * 255.0).round() as u8,
            ];
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path).map_err(|e| Error::Io(std::io::Error::other(e)))
}

fn save_png_labels(path: &Path, masks: &[Array2<u8>], size: usize) -> Result<()> {
    let mut buf = image::GrayImage::new(size as u32, size as u32);
    for (i, m) in masks.iter().enumerate() {
        for y in 0..size {
            for x in 0..size {
                if m[[y, x]] != 0 {
                    buf.put_pixel(x as u32, y as u32, image::Luma([(i + 1) as u8]));
                }
            }
        }
    }
    buf.save(path).map_err(|e| Error::Io(std::io::Error::other(e)))
}

/// Loads an RGB raster back into `[0,1]` floats.
pub fn load_png_rgb(path: &Path) -> Result<Array3<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
        img.get_pixel(x as u32, y as u32).0[c] as f64 / 255.0
    }))
}

fn load_png_labels(path: &Path, n_objects: usize) -> Result<Vec<Array2<u8>>> {
    let img = image::open(path)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut masks = vec![Array2::<u8>::zeros((h, w)); n_objects];
    for y in 0..h {
        for x in 0..w {
            let v = img.get_pixel(x as u32, y as u32).0[0] as usize;
            if v > 0 {
                if v > n_objects {
                    return Err(Error::Format(format!(
                        "label {v} in {path:?} exceeds object count {n_objects}"
                    )));
                }
                masks[v - 1][[y, x]] = 1;
            }
        }
    }
    Ok(masks)
}

/// Generates datasets under `dir`: one subdirectory per policy with a
/// manifest per nonempty split, plus an `unlabeled` dataset of bare images.
/// Everything is a pure function of `(scene, policies, unlabeled, master_seed)`.
pub fn make_datasets(
    dir: &Path,
    scene: &SceneSpec,
    policies: &[DatasetPolicy],
    unlabeled: usize,
    master_seed: u64,
) -> Result<Vec<BuiltDataset>> {
    if policies.is_empty() {
        return Err(Error::Config("at least one dataset policy required".into()));
    }
    for p in policies {
        if p.kinds.is_empty() {
            return Err(Error::Config(format!("dataset {:?} has an empty kind policy", p.name)));
        }
        if p.train + p.val + p.test == 0 {
            return Err(Error::Config(format!("dataset {:?} has size 0", p.name)));
        }
    }
    let mut built = Vec::new();
    for p in policies {
        let droot = dir.join(&p.name);
        fs::create_dir_all(droot.join("images"))?;
        fs::create_dir_all(droot.join("masks"))?;
        let mut manifests = Vec::new();
        for (split, count) in SPLITS.iter().zip([p.train, p.val, p.test]) {
            if count == 0 {
                continue;
            }
            let mut entries = Vec::new();
            for i in 0..count {
                let seed = scene_seed(master_seed, &p.name, split, i);
                let sc = generate_scene(scene, seed)?;
                let image_id = format!("{}-{}-{:04}", p.name, split, i);
                let image_rel = format!("images/{image_id}.png");
                save_png_rgb(&droot.join(&image_rel), &sc.image)?;
                let full = AnnotationRecord { image_id: image_id.clone(), ..sc.record };
                let mut rec = strip_to_policy(full, &p.kinds);
                let mask_path = if p.kinds.contains(&Kind::Segmentation) {
                    let rel = format!("masks/{image_id}.png");
                    save_png_labels(&droot.join(&rel), &rec.masks, scene.image_size)?;
                    Some(rel)
                } else {
                    None
                };
                rec.masks.clear(); // manifests reference the raster, not inline data
                let present = rec.present_kinds.clone();
                rec.present_kinds = present;
                entries.push(ManifestEntry { image_path: image_rel, record: rec, mask_path });
            }
            let mpath = droot.join(format!("{split}.manifest"));
            fs::write(&mpath, manifest_lines(&entries))?;
            manifests.push((split.to_string(), mpath));
        }
        built.push(BuiltDataset { name: p.name.clone(), manifests });
    }
    if unlabeled > 0 {
        let droot = dir.join("unlabeled");
        fs::create_dir_all(droot.join("images"))?;
        let mut entries = Vec::new();
        for i in 0..unlabeled {
            let seed = scene_seed(master_seed, "unlabeled", "train", i);
            let sc = generate_scene(scene, seed)?;
            let image_id = format!("unlabeled-train-{i:04}");
            let image_rel = format!("images/{image_id}.png");
            save_png_rgb(&droot.join(&image_rel), &sc.image)?;
            entries.push(ManifestEntry {
                image_path: image_rel,
                record: AnnotationRecord { image_id, ..Default::default() },
                mask_path: None,
            });
        }
        let mpath = droot.join("train.manifest");
        fs::write(&mpath, manifest_lines(&entries))?;
        built.push(BuiltDataset {
            name: "unlabeled".into(),
            manifests: vec![("train".into(), mpath)],
        });
    }
    Ok(built)
}

/// One fully loaded example.
pub struct Example {
    pub image: Array3<f64>,
    pub record: AnnotationRecord,
}

/// Reads a manifest and loads every referenced raster. Paths in the manifest
/// are relative to the manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<Example>> {
    let text = fs::read_to_string(manifest_path)?;
    let entries = parse_manifest_lines(&text)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for e in entries {
        let image = load_png_rgb(&base.join(&e.image_path))?;
        let mut record = e.record;
        if let Some(mp) = &e.mask_path {
            record.masks = load_png_labels(&base.join(mp), record.classes.len())?;
        }
        out.push(Example { image, record });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// two-view augmentation with tracked geometry
// ---------------------------------------------------------------------------

/// One view's augmentation parameters. Geometry is crop-resize then optional
/// horizontal flip; photometrics are a brightness shift and contrast scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewAug {
    pub crop_y: usize,
    pub crop_x: usize,
    pub crop_h: usize,
    pub crop_w: usize,
    pub hflip: bool,
    pub brightness: f64,
    pub contrast: f64,
}

impl ViewAug {
    pub fn identity(size: usize) -> Self {
        Self { crop_y: 0, crop_x: 0, crop_h: size, crop_w: size, hflip: false, brightness: 0.0, contrast: 1.0 }
    }

    /// Source-image coordinates sampled by view pixel `(vy, vx)` (continuous,
    /// cell-center aligned, before clamping).
    pub fn source_of(&self, vy: f64, vx: f64, out_size: usize) -> (f64, f64) {
        let vx = if self.hflip { (out_size as f64 - 1.0) - vx } else { vx };
        let sy = self.crop_y as f64 + (vy + 0.5) * self.crop_h as f64 / out_size as f64 - 0.5;
        let sx = self.crop_x as f64 + (vx + 0.5) * self.crop_w as f64 / out_size as f64 - 0.5;
        (sy, sx)
    }

    /// Inverse of [`Self::source_of`]: where a source coordinate lands in this
    /// view. `None` when it falls outside the crop.
    pub fn view_of(&self, sy: f64, sx: f64, out_size: usize) -> Option<(f64, f64)> {
        let vy = (sy + 0.5 - self.crop_y as f64) * out_size as f64 / self.crop_h as f64 - 0.5;
        let vx = (sx + 0.5 - self.crop_x as f64) * out_size as f64 / self.crop_w as f64 - 0.5;
        let vx = if self.hflip { (out_size as f64 - 1.0) - vx } else { vx };
        let lim = out_size as f64 - 0.5;
        ((-0.5..lim).contains(&vy) && (-0.5..lim).contains(&vx)).then_some((vy, vx))
    }
}

/// Applies an augmentation, producing a view of the input's size.
pub fn apply_view(image: &Array3<f64>, aug: &ViewAug) -> Array3<f64> {
    let (h, w, _) = image.dim();
    debug_assert_eq!(h, w);
    let size = h;
    Array3::from_shape_fn((size, size, 3), |(y, x, c)| {
        let (sy, sx) = aug.source_of(y as f64, x as f64, size);
        let v = bilinear(image, sy, sx, c);
        ((v - 0.5) * aug.contrast + 0.5 + aug.brightness).clamp(0.0, 1.0)
    })
}

fn bilinear(image: &Array3<f64>, sy: f64, sx: f64, c: usize) -> f64 {
    let (h, w, _) = image.dim();
    let fy = sy.clamp(0.0, (h - 1) as f64);
    let fx = sx.clamp(0.0, (w - 1) as f64);
    let y0 = fy.floor() as usize;
    let x0 = fx.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let wy = fy - y0 as f64;
    let wx = fx - x0 as f64;
    image[[y0, x0, c]] * (1.0 - wy) * (1.0 - wx)
        + image[[y0, x1, c]] * (1.0 - wy) * wx
        + image[[y1, x0, c]] * wy * (1.0 - wx)
        + image[[y1, x1, c]] * wy * wx
}

/// Two augmented views of one image plus the parameters that produced them.
pub struct TwoViews {
    pub view1: Array3<f64>,
    pub view2: Array3<f64>,
    pub aug1: ViewAug,
    pub aug2: ViewAug,
}

fn sample_aug(rng: &mut ChaCha8Rng, size: usize) -> ViewAug {
    let scale: f64 = rng.gen_range(0.6..0.95);
    let ch = ((size as f64 * scale).round() as usize).clamp(8, size);
    let cw = ((size as f64 * scale).round() as usize).clamp(8, size);
    ViewAug {
        crop_y: rng.gen_range(0..=size - ch),
        crop_x: rng.gen_range(0..=size - cw),
        crop_h: ch,
        crop_w: cw,
        hflip: rng.gen_bool(0.5),
        brightness: rng.gen_range(-0.1..0.1),
        contrast: rng.gen_range(0.8..1.25),
    }
}

fn crops_overlap(a: &ViewAug, b: &ViewAug) -> (usize, usize) {
    let oy = (a.crop_y + a.crop_h).min(b.crop_y + b.crop_h).saturating_sub(a.crop_y.max(b.crop_y));
    let ox = (a.crop_x + a.crop_w).min(b.crop_x + b.crop_w).saturating_sub(a.crop_x.max(b.crop_x));
    (oy, ox)
}

/// Draws two random views; augmentation pairs whose crops share less than an
/// 8x8 source region are resampled.
pub fn two_views(image: &Array3<f64>, seed: u64) -> Result<TwoViews> {
    let (h, w, c) = image.dim();
    if h != w || c != 3 || h < 16 {
        return Err(Error::Validation(format!("expected square RGB image >= 16px, got {h}x{w}x{c}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (aug1, aug2) = loop {
        let a = sample_aug(&mut rng, h);
        let b = sample_aug(&mut rng, h);
        let (oy, ox) = crops_overlap(&a, &b);
        if oy >= 8 && ox >= 8 {
            break (a, b);
        }
    };
    Ok(TwoViews { view1: apply_view(image, &aug1), view2: apply_view(image, &aug2), aug1, aug2 })
}

/// Geometric correspondence: for each cell of view1's `grid x grid` lattice,
/// the index of the view2 cell sampling (nearest to) the same source point,
/// or `None` outside the overlap.
pub fn correspondence_grid(
    aug1: &ViewAug,
    aug2: &ViewAug,
    size: usize,
    grid: usize,
) -> Vec<Option<usize>> {
    let cell = size as f64 / grid as f64;
    (0..grid * grid)
        .map(|i| {
            let (gy, gx) = (i / grid, i % grid);
            let vy = (gy as f64 + 0.5) * cell - 0.5;
            let vx = (gx as f64 + 0.5) * cell - 0.5;
            let (sy, sx) = aug1.source_of(vy, vx, size);
            if sy < -0.5 || sx < -0.5 || sy >= size as f64 - 0.5 || sx >= size as f64 - 0.5 {
                return None;
            }
            let (v2y, v2x) = aug2.view_of(sy, sx, size)?;
            let g2y = ((v2y + 0.5) / cell - 0.5).round();
            let g2x = ((v2x + 0.5) / cell - 0.5).round();
            if g2y < 0.0 || g2x < 0.0 || g2y >= grid as f64 || g2x >= grid as f64 {
                return None;
            }
            Some(g2y as usize * grid + g2x as usize)
        })
        .collect()
}

/// The manifest grammar this module writes (re-exported for CLI help text).
pub fn manifest_header() -> &'static str {
    MANIFEST_HEADER
}
