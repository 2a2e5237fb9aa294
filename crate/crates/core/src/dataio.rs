//! Synthetic co-saliency dataset generation and on-disk image-group i/o.
//!
//! Every image of a group contains one instance of the group's target shape
//! category in a shared color family; distractor shapes from other
//! categories appear in a strict subset of the images. The co-saliency mask
//! covers only the target, the saliency mask covers target and distractors.

use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{CoadError, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Disc,
    Square,
    Triangle,
    Ring,
    Cross,
}

pub const ALL_SHAPES: [ShapeKind; 5] = [
    ShapeKind::Disc,
    ShapeKind::Square,
    ShapeKind::Triangle,
    ShapeKind::Ring,
    ShapeKind::Cross,
];

impl ShapeKind {
    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Disc => "disc",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Ring => "ring",
            ShapeKind::Cross => "cross",
        }
    }

    /// Size parameter (bounding half-extent) whose analytic coverage is
    /// `a` px^2.
    fn size_for_area(&self, a: f64) -> f64 {
        match self {
            ShapeKind::Disc => (a / std::f64::consts::PI).sqrt(),
            ShapeKind::Square => (a / 4.0).sqrt(),
            ShapeKind::Triangle => (a / 2.0).sqrt(),
            ShapeKind::Ring => (a / (std::f64::consts::PI * (1.0 - 0.55 * 0.55))).sqrt(),
            ShapeKind::Cross => (a / 2.31).sqrt(),
        }
    }

    fn contains(&self, dx: f64, dy: f64, s: f64) -> bool {
        match self {
            ShapeKind::Disc => dx * dx + dy * dy <= s * s,
            ShapeKind::Square => dx.abs() <= s && dy.abs() <= s,
            ShapeKind::Triangle => {
                // vertices (0,-s), (-s,s), (s,s)
                if dy < -s || dy > s {
                    return false;
                }
                // width grows linearly from apex to base
                let half_width = s * (dy + s) / (2.0 * s);
                dx.abs() <= half_width
            }
            ShapeKind::Ring => {
                let d2 = dx * dx + dy * dy;
                d2 <= s * s && d2 >= (0.55 * s) * (0.55 * s)
            }
            ShapeKind::Cross => {
                (dx.abs() <= 0.35 * s && dy.abs() <= s) || (dx.abs() <= s && dy.abs() <= 0.35 * s)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    /// Square canvas size; must be divisible by 8.
    pub canvas: usize,
    pub n_groups: usize,
    /// Images per group; >= 2.
    pub group_size: usize,
    /// Maximum distractor shapes per image.
    pub max_distractors: usize,
    /// Standard deviation of per-pixel background noise.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Target mask area band, as fractions of the canvas area.
    pub min_area_frac: f64,
    pub max_area_frac: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            canvas: 64,
            n_groups: 8,
            group_size: 5,
            max_distractors: 2,
            noise_sigma: 0.02,
            seed: 7,
            min_area_frac: 0.02,
            max_area_frac: 0.30,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.canvas == 0 || self.canvas % 8 != 0 {
            return Err(CoadError::Config(format!(
                "synth.canvas must be a positive multiple of 8, got {}",
                self.canvas
            )));
        }
        if self.group_size < 2 {
            return Err(CoadError::Config(format!(
                "synth.group_size must be >= 2, got {}",
                self.group_size
            )));
        }
        if self.n_groups == 0 {
            return Err(CoadError::Config("synth.n_groups must be >= 1".into()));
        }
        if !(0.0 < self.min_area_frac && self.min_area_frac < self.max_area_frac
            && self.max_area_frac < 0.5)
        {
            return Err(CoadError::Config(format!(
                "invalid mask area band [{}, {}]",
                self.min_area_frac, self.max_area_frac
            )));
        }
        Ok(())
    }
}

/// One generated query group: RGB images plus co-saliency and saliency masks.
pub struct ImageGroup {
    pub group_id: String,
    pub size: usize,
    /// Interleaved RGB, row-major, one buffer per image.
    pub images: Vec<Vec<u8>>,
    pub cosal_masks: Vec<Vec<bool>>,
    pub sal_masks: Vec<Vec<bool>>,
    pub category: ShapeKind,
    pub seed: u64,
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = (h.fract() + 1.0).fract() * 6.0;
    let i = h.floor() as usize % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

struct Placement {
    kind: ShapeKind,
    cx: f64,
    cy: f64,
    size: f64,
}

fn rasterize(p: &Placement, canvas: usize, out: &mut [bool]) {
    for y in 0..canvas {
        for x in 0..canvas {
            if p.kind.contains(x as f64 - p.cx, y as f64 - p.cy, p.size) {
                out[y * canvas + x] = true;
            }
        }
    }
}

fn count(mask: &[bool]) -> usize {
    mask.iter().filter(|&&b| b).count()
}

/// Samples a placement whose rasterized area lands in `[lo_frac, hi_frac]`
/// of the canvas. Falls back to a centered mid-size shape if rejection
/// sampling runs out of tries.
fn place_shape(
    rng: &mut ChaCha8Rng,
    kind: ShapeKind,
    canvas: usize,
    lo_frac: f64,
    hi_frac: f64,
) -> (Placement, Vec<bool>) {
    let total = (canvas * canvas) as f64;
    let s_lo = kind.size_for_area(lo_frac * total) * 1.07;
    let s_hi = kind.size_for_area(hi_frac * total) * 0.93;
    for _ in 0..16 {
        let size = rng.gen_range(s_lo..=s_hi.max(s_lo + 1e-9));
        let margin = size + 1.0;
        if 2.0 * margin >= canvas as f64 {
            continue;
        }
        let cx = rng.gen_range(margin..canvas as f64 - margin);
        let cy = rng.gen_range(margin..canvas as f64 - margin);
        let p = Placement { kind, cx, cy, size };
        let mut mask = vec![false; canvas * canvas];
        rasterize(&p, canvas, &mut mask);
        let frac = count(&mask) as f64 / total;
        if frac >= lo_frac && frac <= hi_frac {
            return (p, mask);
        }
    }
    let size = kind.size_for_area(0.5 * (lo_frac + hi_frac) * total);
    let p = Placement {
        kind,
        cx: canvas as f64 / 2.0,
        cy: canvas as f64 / 2.0,
        size,
    };
    let mut mask = vec![false; canvas * canvas];
    rasterize(&p, canvas, &mut mask);
    (p, mask)
}

/// Low-frequency background: a coarse random grid bilinearly upsampled.
fn background(rng: &mut ChaCha8Rng, canvas: usize, noise_sigma: f64) -> Vec<[f64; 3]> {
    const GRID: usize = 5;
    let mut coarse = [[0.0f64; 3]; GRID * GRID];
    for cell in coarse.iter_mut() {
        for c in cell.iter_mut() {
            *c = rng.gen_range(0.05..0.35);
        }
    }
    let mut out = vec![[0.0f64; 3]; canvas * canvas];
    let scale = (GRID - 1) as f64 / (canvas - 1) as f64;
    for y in 0..canvas {
        let fy = y as f64 * scale;
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(GRID - 1);
        let wy = fy - y0 as f64;
        for x in 0..canvas {
            let fx = x as f64 * scale;
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(GRID - 1);
            let wx = fx - x0 as f64;
            for c in 0..3 {
                let v = coarse[y0 * GRID + x0][c] * (1.0 - wy) * (1.0 - wx)
                    + coarse[y0 * GRID + x1][c] * (1.0 - wy) * wx
                    + coarse[y1 * GRID + x0][c] * wy * (1.0 - wx)
                    + coarse[y1 * GRID + x1][c] * wy * wx;
                out[y * canvas + x][c] = v;
            }
        }
    }
    if noise_sigma > 0.0 {
        for px in out.iter_mut() {
            for c in px.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *c = (*c + z * noise_sigma).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Deterministic dataset generation: the same spec yields byte-identical
/// groups.
pub fn generate(spec: &SynthSpec) -> Result<Vec<ImageGroup>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let canvas = spec.canvas;
    let mut groups = Vec::with_capacity(spec.n_groups);

    for gi in 0..spec.n_groups {
        let category = ALL_SHAPES[rng.gen_range(0..ALL_SHAPES.len())];
        let target_hue = rng.gen_range(0.0..1.0);

        // distractor counts, fixed up so at least one image has none
        let mut counts: Vec<usize> = (0..spec.group_size)
            .map(|_| rng.gen_range(0..=spec.max_distractors))
            .collect();
        if spec.max_distractors > 0 && counts.iter().all(|&c| c > 0) {
            counts[0] = 0;
        }

        let mut images = Vec::with_capacity(spec.group_size);
        let mut cosal_masks = Vec::with_capacity(spec.group_size);
        let mut sal_masks = Vec::with_capacity(spec.group_size);

        for &n_distract in &counts {
            let mut canvas_rgb = background(&mut rng, canvas, spec.noise_sigma);

            let mut sal = vec![false; canvas * canvas];
            for _ in 0..n_distract {
                let kind = loop {
                    let k = ALL_SHAPES[rng.gen_range(0..ALL_SHAPES.len())];
                    if k != category {
                        break k;
                    }
                };
                let (_, mask) = place_shape(&mut rng, kind, canvas, 0.015, 0.12);
                let hue = target_hue + rng.gen_range(0.25..0.75);
                let color = hsv_to_rgb(hue, 0.75, rng.gen_range(0.7..0.95));
                for (i, &inside) in mask.iter().enumerate() {
                    if inside {
                        canvas_rgb[i] = color;
                        sal[i] = true;
                    }
                }
            }

            // target drawn last so it is never occluded
            let (_, target_mask) =
                place_shape(&mut rng, category, canvas, spec.min_area_frac, spec.max_area_frac);
            let color = hsv_to_rgb(
                target_hue + rng.gen_range(-0.03..0.03),
                0.85,
                rng.gen_range(0.8..0.98),
            );
            for (i, &inside) in target_mask.iter().enumerate() {
                if inside {
                    canvas_rgb[i] = color;
                    sal[i] = true;
                }
            }

            let rgb: Vec<u8> = canvas_rgb
                .iter()
                .flat_map(|px| px.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8))
                .collect();
            images.push(rgb);
            cosal_masks.push(target_mask);
            sal_masks.push(sal);
        }

        groups.push(ImageGroup {
            group_id: format!("group_{gi:03}"),
            size: canvas,
            images,
            cosal_masks,
            sal_masks,
            category,
            seed: spec.seed,
        });
    }
    Ok(groups)
}

// --- on-disk layout -------------------------------------------------------

fn png_err(path: &Path, e: impl std::fmt::Display) -> CoadError {
    CoadError::Image {
        path: path.display().to_string(),
        detail: e.to_string(),
    }
}

fn mask_to_gray(mask: &[bool], size: usize) -> GrayImage {
    GrayImage::from_raw(
        size as u32,
        size as u32,
        mask.iter().map(|&b| if b { 255 } else { 0 }).collect(),
    )
    .expect("mask buffer size")
}

/// Writes groups as `<out>/<group_id>/img_XX.png` with `_gt` (co-saliency)
/// and `_sal` (all-salient) masks plus a manifest listing the group dirs.
pub fn write_dataset(groups: &[ImageGroup], out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| CoadError::io(out_dir.display().to_string(), e))?;
    let mut manifest = String::new();
    for g in groups {
        let gdir = out_dir.join(&g.group_id);
        std::fs::create_dir_all(&gdir).map_err(|e| CoadError::io(gdir.display().to_string(), e))?;
        for (i, rgb) in g.images.iter().enumerate() {
            let img = RgbImage::from_raw(g.size as u32, g.size as u32, rgb.clone())
                .expect("rgb buffer size");
            let ipath = gdir.join(format!("img_{i:02}.png"));
            img.save(&ipath).map_err(|e| png_err(&ipath, e))?;
            let gpath = gdir.join(format!("img_{i:02}_gt.png"));
            mask_to_gray(&g.cosal_masks[i], g.size)
                .save(&gpath)
                .map_err(|e| png_err(&gpath, e))?;
            let spath = gdir.join(format!("img_{i:02}_sal.png"));
            mask_to_gray(&g.sal_masks[i], g.size)
                .save(&spath)
                .map_err(|e| png_err(&spath, e))?;
        }
        let meta = format!("category={}\nseed={}\n", g.category.name(), g.seed);
        std::fs::write(gdir.join("meta.txt"), meta)
            .map_err(|e| CoadError::io(gdir.join("meta.txt").display().to_string(), e))?;
        manifest.push_str(&g.group_id);
        manifest.push('\n');
    }
    std::fs::write(out_dir.join("groups.txt"), manifest)
        .map_err(|e| CoadError::io(out_dir.join("groups.txt").display().to_string(), e))
}

pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB.
    pub rgb: Vec<u8>,
}

pub struct RasterMask {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
}

/// A group loaded from disk; masks stay at native resolution.
pub struct LoadedGroup {
    pub group_id: String,
    pub names: Vec<String>,
    pub images: Vec<RasterImage>,
    pub cosal: Vec<Option<RasterMask>>,
    pub sal: Vec<Option<RasterMask>>,
}

fn load_rgb(path: &Path) -> Result<RasterImage> {
    let img = image::open(path).map_err(|e| png_err(path, e))?.to_rgb8();
    Ok(RasterImage {
        width: img.width() as usize,
        height: img.height() as usize,
        rgb: img.into_raw(),
    })
}

fn load_mask(path: &Path) -> Result<RasterMask> {
    let img = image::open(path).map_err(|e| png_err(path, e))?.to_luma8();
    Ok(RasterMask {
        width: img.width() as usize,
        height: img.height() as usize,
        mask: img.into_raw().iter().map(|&v| v > 127).collect(),
    })
}

/// Loads `<dir>/<image>.{png,pgm}` with sibling `<image>_gt` / `<image>_sal`
/// masks. With `require_gt`, a missing ground-truth mask is an error naming
/// the image.
pub fn load_group(dir: &Path, require_gt: bool) -> Result<LoadedGroup> {
    let mut stems: Vec<String> = Vec::new();
    let entries =
        std::fs::read_dir(dir).map_err(|e| CoadError::io(dir.display().to_string(), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| CoadError::io(dir.display().to_string(), e))?;
        let path = entry.path();
        let Some(ext) = path.extension().and_then(|e| e.to_str()) else {
            continue;
        };
        if !matches!(ext.to_ascii_lowercase().as_str(), "png" | "pgm" | "ppm") {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        if stem.ends_with("_gt") || stem.ends_with("_sal") {
            continue;
        }
        stems.push(format!(
            "{stem}.{}",
            path.extension().unwrap().to_str().unwrap()
        ));
    }
    stems.sort();
    if stems.is_empty() {
        return Err(CoadError::Data(format!(
            "no images found in {}",
            dir.display()
        )));
    }

    let mut group = LoadedGroup {
        group_id: dir
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or("group")
            .to_string(),
        names: Vec::new(),
        images: Vec::new(),
        cosal: Vec::new(),
        sal: Vec::new(),
    };
    for file in stems {
        let path = dir.join(&file);
        let stem = path.file_stem().unwrap().to_str().unwrap().to_string();
        group.images.push(load_rgb(&path)?);
        let mut found = None;
        for ext in ["png", "pgm"] {
            let cand = dir.join(format!("{stem}_gt.{ext}"));
            if cand.exists() {
                found = Some(load_mask(&cand)?);
                break;
            }
        }
        if found.is_none() && require_gt {
            return Err(CoadError::Data(format!(
                "missing ground truth for {}",
                path.display()
            )));
        }
        group.cosal.push(found);
        let mut sal = None;
        for ext in ["png", "pgm"] {
            let cand = dir.join(format!("{stem}_sal.{ext}"));
            if cand.exists() {
                sal = Some(load_mask(&cand)?);
                break;
            }
        }
        group.sal.push(sal);
        group.names.push(stem);
    }
    Ok(group)
}

/// Reads the dataset manifest and returns group directories in listed order.
pub fn read_manifest(data_dir: &Path) -> Result<Vec<PathBuf>> {
    let manifest = data_dir.join("groups.txt");
    let text = std::fs::read_to_string(&manifest)
        .map_err(|e| CoadError::io(manifest.display().to_string(), e))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| data_dir.join(l.trim()))
        .collect())
}

// --- tensor conversions ----------------------------------------------------

/// `v/255` planar conversion to a `3 x H x W` constant tensor.
pub fn image_to_tensor<T: Scalar>(img: &RasterImage) -> Tensor<T> {
    let (w, h) = (img.width, img.height);
    let mut data = vec![T::zero(); 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data[c * h * w + y * w + x] =
                    T::of_f64(img.rgb[(y * w + x) * 3 + c] as f64 / 255.0);
            }
        }
    }
    Tensor::new(&[3, h, w], data).expect("image tensor shape")
}

pub fn group_image_to_tensor<T: Scalar>(g: &ImageGroup, idx: usize) -> Tensor<T> {
    image_to_tensor(&RasterImage {
        width: g.size,
        height: g.size,
        rgb: g.images[idx].clone(),
    })
}

pub fn mask_to_tensor<T: Scalar>(mask: &[bool], h: usize, w: usize) -> Tensor<T> {
    let data = mask
        .iter()
        .map(|&b| if b { T::one() } else { T::zero() })
        .collect();
    Tensor::new(&[1, h, w], data).expect("mask tensor shape")
}

/// Map values in [0,1] to 8-bit grayscale (`round(255 * v)`).
pub fn map_to_gray_u8<T: Scalar>(map: &Tensor<T>) -> (usize, usize, Vec<u8>) {
    let (c, h, w) = (map.shape()[0], map.shape()[1], map.shape()[2]);
    assert_eq!(c, 1, "saliency map must have a single channel");
    let data = map
        .data()
        .iter()
        .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    (h, w, data)
}

pub fn write_gray_png(path: &Path, h: usize, w: usize, data: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CoadError::io(parent.display().to_string(), e))?;
    }
    GrayImage::from_raw(w as u32, h as u32, data.to_vec())
        .expect("gray buffer size")
        .save(path)
        .map_err(|e| png_err(path, e))
}

/// Min-max normalized channel-mean heatmap of a feature tensor, as 8-bit
/// grayscale rows.
pub fn channel_mean_heatmap<T: Scalar>(t: &Tensor<T>) -> Result<(usize, usize, Vec<u8>)> {
    let mean = t.channel_mean()?;
    let (h, w) = (mean.shape()[1], mean.shape()[2]);
    let vals: Vec<f64> = mean.data().iter().map(|v| v.as_f64()).collect();
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    let bytes = vals
        .iter()
        .map(|v| (((v - lo) / span) * 255.0).round() as u8)
        .collect();
    Ok((h, w, bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SynthSpec {
        SynthSpec {
            canvas: 32,
            n_groups: 3,
            group_size: 4,
            seed: 7,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small_spec()).unwrap();
        let b = generate(&small_spec()).unwrap();
        assert_eq!(a.len(), b.len());
        for (ga, gb) in a.iter().zip(&b) {
            assert_eq!(ga.images, gb.images);
            assert_eq!(ga.cosal_masks, gb.cosal_masks);
            assert_eq!(ga.sal_masks, gb.sal_masks);
            assert_eq!(ga.category, gb.category);
        }
    }

    #[test]
    fn no_distractors_means_masks_coincide() {
        let spec = SynthSpec {
            max_distractors: 0,
            ..small_spec()
        };
        for g in generate(&spec).unwrap() {
            for (c, s) in g.cosal_masks.iter().zip(&g.sal_masks) {
                assert_eq!(c, s);
            }
        }
    }

    #[test]
    fn target_mask_area_is_in_band_and_nonempty() {
        let spec = SynthSpec {
            n_groups: 6,
            canvas: 64,
            ..SynthSpec::default()
        };
        let total = (spec.canvas * spec.canvas) as f64;
        for g in generate(&spec).unwrap() {
            for m in &g.cosal_masks {
                let frac = count(m) as f64 / total;
                assert!(
                    frac >= spec.min_area_frac && frac <= spec.max_area_frac,
                    "target area fraction {frac}"
                );
            }
        }
    }

    #[test]
    fn cosal_mask_is_subset_of_sal_mask() {
        for g in generate(&small_spec()).unwrap() {
            for (c, s) in g.cosal_masks.iter().zip(&g.sal_masks) {
                for (a, b) in c.iter().zip(s) {
                    assert!(!a || *b);
                }
            }
        }
    }

    #[test]
    fn some_image_lacks_distractors() {
        for g in generate(&small_spec()).unwrap() {
            let any_clean = g
                .cosal_masks
                .iter()
                .zip(&g.sal_masks)
                .any(|(c, s)| c == s);
            assert!(any_clean, "strict-subset rule violated");
        }
    }

    #[test]
    fn disk_round_trip_preserves_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let groups = generate(&small_spec()).unwrap();
        write_dataset(&groups, dir.path()).unwrap();
        let listed = read_manifest(dir.path()).unwrap();
        assert_eq!(listed.len(), groups.len());

        let loaded = load_group(&listed[0], true).unwrap();
        assert_eq!(loaded.images.len(), groups[0].images.len());
        assert_eq!(loaded.images[0].rgb, groups[0].images[0]);
        let gt = loaded.cosal[0].as_ref().unwrap();
        assert_eq!(gt.mask, groups[0].cosal_masks[0]);
        assert!(loaded.sal[0].is_some());
    }

    #[test]
    fn missing_gt_is_an_error_in_eval_mode() {
        let dir = tempfile::tempdir().unwrap();
        let groups = generate(&small_spec()).unwrap();
        write_dataset(&groups, dir.path()).unwrap();
        let gdir = dir.path().join(&groups[0].group_id);
        std::fs::remove_file(gdir.join("img_00_gt.png")).unwrap();
        let err = match load_group(&gdir, true) {
            Err(e) => e,
            Ok(_) => panic!("expected missing-gt error"),
        };
        assert!(err.to_string().contains("img_00"));
        assert!(load_group(&gdir, false).is_ok());
    }

    #[test]
    fn map_write_read_quantization_error_is_at_most_one_level() {
        let dir = tempfile::tempdir().unwrap();
        let vals: Vec<f64> = (0..64).map(|i| i as f64 / 63.0).collect();
        let map = Tensor::new(&[1, 8, 8], vals.clone()).unwrap();
        let (h, w, bytes) = map_to_gray_u8(&map);
        let path = dir.path().join("m.png");
        write_gray_png(&path, h, w, &bytes).unwrap();
        let back = load_mask(&path).unwrap();
        assert_eq!(back.width, 8);
        // reread raw levels and compare against the original values
        let img = image::open(&path).unwrap().to_luma8();
        for (v, px) in vals.iter().zip(img.into_raw()) {
            assert!((v - px as f64 / 255.0).abs() <= 1.0 / 255.0 + 1e-9);
        }
    }

    #[test]
    fn image_tensor_is_normalized_planar() {
        let img = RasterImage {
            width: 2,
            height: 1,
            rgb: vec![255, 0, 51, 0, 255, 102],
        };
        let t: Tensor<f64> = image_to_tensor(&img);
        assert_eq!(t.shape(), &[3, 1, 2]);
        let d = t.to_vec();
        assert_eq!(d[0], 1.0); // R plane
        assert_eq!(d[1], 0.0);
        assert_eq!(d[2], 0.0); // G plane
        assert_eq!(d[3], 1.0);
        assert!((d[4] - 0.2).abs() < 1e-9); // B plane
        assert!((d[5] - 0.4).abs() < 1e-9);
    }
}
