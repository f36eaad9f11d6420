//! Synthetic training data: sharp edge patches blurred along the σ ladder,
//! plus procedural images and test scenes.

use std::fmt::Write as _;

use crate::config::Config;
use crate::edges::{canny, CannyParams, EdgeLabel, Scale};
use crate::error::{Error, Result};
use crate::filter::gaussian_blur;
use crate::image::{to_grayscale, value_channel, Image};
use crate::par;
use crate::rng::Rng;

/// `σ_l = σ_min + (l − 1) σ_inter` for `1 ≤ l ≤ L`.
pub fn sigma_for_label(cfg: &Config, label: usize) -> Result<f64> {
    if label == 0 || label > cfg.labels {
        return Err(Error::invalid(format!("label {label} outside 1..={}", cfg.labels)));
    }
    Ok(cfg.sigma_min + (label - 1) as f64 * cfg.sigma_inter)
}

/// Ladder label closest to `sigma`.
pub fn label_for_sigma(cfg: &Config, sigma: f64) -> usize {
    let l = ((sigma - cfg.sigma_min) / cfg.sigma_inter).round() + 1.0;
    l.clamp(1.0, cfg.labels as f64) as usize
}

/// A normalized 2-D Gaussian of radius `⌈3σ⌉`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernelSpec {
    pub sigma: f64,
    pub radius: usize,
    /// Separable factor; the 2-D kernel is its outer product.
    pub taps_1d: Vec<f64>,
}

impl BlurKernelSpec {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid("blur sigma must be positive"));
        }
        let radius = (3.0 * sigma).ceil() as usize;
        let mut taps: Vec<f64> = (0..=2 * radius)
            .map(|i| {
                let d = i as f64 - radius as f64;
                (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let s: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= s);
        Ok(Self {
            sigma,
            radius,
            taps_1d: taps,
        })
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    /// Row-major 2-D taps.
    pub fn taps_2d(&self) -> Vec<f64> {
        let t = &self.taps_1d;
        t.iter().flat_map(|a| t.iter().map(move |b| a * b)).collect()
    }
}

/// Valid convolution: output is `(w − 2r) × (h − 2r)` with every tap inside.
pub fn blur_valid(img: &Image, k: &BlurKernelSpec) -> Result<Image> {
    let r = k.radius;
    let (w, h, c) = (img.width(), img.height(), img.channels());
    if w <= 2 * r || h <= 2 * r {
        return Err(Error::invalid("image smaller than the blur kernel support"));
    }
    let (ow, oh) = (w - 2 * r, h - 2 * r);
    let mut tmp = vec![0.0; ow * h * c];
    for y in 0..h {
        for x in 0..ow {
            for ch in 0..c {
                tmp[(y * ow + x) * c + ch] = k
                    .taps_1d
                    .iter()
                    .enumerate()
                    .map(|(t, kv)| kv * img.get(x + t, y, ch))
                    .sum();
            }
        }
    }
    let mut out = vec![0.0; ow * oh * c];
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                let v: f64 = k
                    .taps_1d
                    .iter()
                    .enumerate()
                    .map(|(t, kv)| kv * tmp[((y + t) * ow + x) * c + ch])
                    .sum();
                out[(y * ow + x) * c + ch] = v.clamp(0.0, 1.0);
            }
        }
    }
    Image::new(ow, oh, c, out)
}

/// Blurs the `size × size` patch centered at `(cx, cy)` with `σ`, reading the
/// enlarged `size + 2r` window so no border handling touches the result.
pub fn blur_patch(img: &Image, cx: usize, cy: usize, size: usize, k: &BlurKernelSpec) -> Result<Image> {
    let window = img.crop_centered(cx, cy, size + 2 * k.radius)?;
    blur_valid(&window, k)
}

/// A sharp edge location chosen for training.
#[derive(Debug, Clone)]
pub struct SharpPatch {
    pub source: usize,
    pub x: usize,
    pub y: usize,
    pub scale: Scale,
    /// RGB window of side `patch + 2·radius(σ_L)` centered on `(x, y)`.
    pub window: Image,
}

/// One blurred variant of a sharp patch.
#[derive(Debug, Clone)]
pub struct LabeledPatch {
    pub source: usize,
    pub x: usize,
    pub y: usize,
    pub scale: Scale,
    /// 1-based.
    pub label: usize,
    pub sigma: f64,
    pub rgb: Image,
    pub gray: Image,
}

fn margin(cfg: &Config) -> Result<usize> {
    Ok(BlurKernelSpec::new(cfg.sigma_max())?.radius)
}

impl SharpPatch {
    /// All `L` blurred variants, labels `1..=L`. Every variant, the sharp
    /// class included, is blurred with its own `σ_l`.
    pub fn variants(&self, cfg: &Config) -> Result<Vec<LabeledPatch>> {
        let size = cfg.patch_size(self.scale);
        let m = margin(cfg)?;
        let c = size / 2 + m;
        (1..=cfg.labels)
            .map(|label| {
                let sigma = sigma_for_label(cfg, label)?;
                let k = BlurKernelSpec::new(sigma)?;
                let rgb = blur_patch(&self.window, c, c, size, &k)?;
                let gray = to_grayscale(&rgb)?;
                Ok(LabeledPatch {
                    source: self.source,
                    x: self.x,
                    y: self.y,
                    scale: self.scale,
                    label,
                    sigma,
                    rgb,
                    gray,
                })
            })
            .collect()
    }
}

/// Samples sharp patches at strong edges of in-focus images.
///
/// Per image, strong edge pixels far enough from the border are thinned to one
/// per `edge_stride` cell, shuffled and truncated to `patches_per_image`; each
/// gets a random scale. The total is capped at `max_sharp_patches`.
pub fn build_training_set(images: &[Image], cfg: &Config, rng: &Rng) -> Result<Vec<SharpPatch>> {
    cfg.validate()?;
    let m = margin(cfg)?;
    let params = CannyParams::from_config(cfg);
    let per_image = par::map_range(images.len(), |i| -> Result<Vec<SharpPatch>> {
        let img = images[i].to_rgb();
        let edges = canny(&value_channel(&img)?, &params)?;
        let half = cfg.large_patch / 2 + m;
        let s = cfg.edge_stride.max(1);
        let (w, h) = (img.width(), img.height());
        let mut candidates = Vec::new();
        for cy in 0..h.div_ceil(s) {
            for cx in 0..w.div_ceil(s) {
                'cell: for y in cy * s..((cy + 1) * s).min(h) {
                    for x in cx * s..((cx + 1) * s).min(w) {
                        if edges.label(x, y) == EdgeLabel::Strong
                            && x >= half
                            && y >= half
                            && x + half < w
                            && y + half < h
                        {
                            candidates.push((x, y));
                            break 'cell;
                        }
                    }
                }
            }
        }
        let mut r = rng.fork(i as u64);
        r.shuffle(&mut candidates);
        candidates.truncate(cfg.patches_per_image);
        candidates
            .into_iter()
            .map(|(x, y)| {
                let scale = if r.bernoulli(0.5) {
                    Scale::Small
                } else {
                    Scale::Large
                };
                let side = cfg.patch_size(scale) + 2 * m;
                Ok(SharpPatch {
                    source: i,
                    x,
                    y,
                    scale,
                    window: img.crop_centered(x, y, side)?,
                })
            })
            .collect()
    });
    let mut out = Vec::new();
    for p in per_image {
        out.extend(p?);
    }
    if out.len() > cfg.max_sharp_patches {
        out.truncate(cfg.max_sharp_patches);
    }
    if out.is_empty() {
        log::warn!("no strong edges found in {} training images", images.len());
    }
    Ok(out)
}

/// Splits by source image so no image contributes to both sides. Returns
/// `(train, held_out)`.
pub fn split_holdout(patches: Vec<SharpPatch>, images: usize, fraction: f64, rng: &Rng) -> (Vec<SharpPatch>, Vec<SharpPatch>) {
    let mut ids: Vec<usize> = (0..images).collect();
    rng.fork(0x401d).shuffle(&mut ids);
    let n_hold = if images > 1 {
        ((images as f64 * fraction).round() as usize).clamp(usize::from(fraction > 0.0), images - 1)
    } else {
        0
    };
    let mut held = vec![false; images];
    for &i in &ids[..n_hold] {
        held[i] = true;
    }
    patches.into_iter().partition(|p| !held[p.source])
}

/// `image,x,y,scale,label,sigma` rows, one per variant.
pub fn manifest_csv(patches: &[SharpPatch], names: &[String], cfg: &Config) -> Result<String> {
    let mut s = String::from("image,x,y,scale,label,sigma\n");
    for p in patches {
        let name = names.get(p.source).map(String::as_str).unwrap_or("?");
        for label in 1..=cfg.labels {
            let _ = writeln!(
                s,
                "{name},{},{},{},{label},{}",
                p.x,
                p.y,
                p.scale.as_str(),
                sigma_for_label(cfg, label)?
            );
        }
    }
    Ok(s)
}

/// A sharp RGB image of random flat-colored shapes and stripes with faint
/// pixel noise: plenty of step edges at varied contrast and orientation.
pub fn synth_texture(width: usize, height: usize, rng: &mut Rng) -> Image {
    let color = |r: &mut Rng| [r.uniform(), r.uniform(), r.uniform()];
    let mut img = Image::filled(width, height, 3, 0.0);
    let bg = color(rng);
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                img.set(x, y, c, bg[c]);
            }
        }
    }
    let (w, h) = (width as f64, height as f64);
    let shapes = (width * height / 400).max(8);
    for _ in 0..shapes {
        let col = color(rng);
        let kind = rng.index(4);
        let cx = rng.range(0.0, w);
        let cy = rng.range(0.0, h);
        let size = rng.range(4.0, (w.min(h) / 4.0).max(5.0));
        let angle = rng.range(0.0, std::f64::consts::PI);
        let (ca, sa) = (angle.cos(), angle.sin());
        let period = rng.range(3.0, 8.0);
        let inside = |x: f64, y: f64| -> bool {
            let (dx, dy) = (x - cx, y - cy);
            let u = dx * ca + dy * sa;
            let v = -dx * sa + dy * ca;
            match kind {
                0 => dx * dx + dy * dy <= size * size,
                1 => u.abs() <= size && v.abs() <= size * 0.6,
                2 => v >= -size * 0.5 && u.abs() <= (size - v) * 0.6 && v <= size,
                _ => u.abs() <= size * 1.5 && v.abs() <= size && (v / period).floor() as i64 % 2 == 0,
            }
        };
        let y0 = (cy - 2.0 * size).max(0.0) as usize;
        let y1 = ((cy + 2.0 * size).ceil() as usize).min(height);
        let x0 = (cx - 2.0 * size).max(0.0) as usize;
        let x1 = ((cx + 2.0 * size).ceil() as usize).min(width);
        for y in y0..y1 {
            for x in x0..x1 {
                if inside(x as f64, y as f64) {
                    for c in 0..3 {
                        img.set(x, y, c, col[c]);
                    }
                }
            }
        }
    }
    for v in img.data_mut() {
        *v = (*v + rng.range(-0.01, 0.01)).clamp(0.0, 1.0);
    }
    img
}

/// Left half sharp, right half a different texture blurred with `sigma`.
/// The mask is `true` on the blurred half.
pub fn half_blurred_scene(width: usize, height: usize, sigma: f64, rng: &mut Rng) -> (Image, Vec<bool>) {
    let sharp = synth_texture(width, height, rng);
    let blurred = gaussian_blur(&synth_texture(width, height, rng), sigma);
    let split = width / 2;
    let img = Image::from_fn_rgb(width, height, |x, y| {
        if x < split {
            sharp.rgb(x, y)
        } else {
            blurred.rgb(x, y)
        }
    });
    let mask = (0..width * height).map(|i| i % width >= split).collect();
    (img, mask)
}

/// A sharp textured strip on the left and, on the right, a wide region of
/// faint low-frequency shading blurred with `sigma`. The right region has no
/// Canny edges. The mask marks the blurred region.
pub fn flat_region_scene(width: usize, height: usize, sigma: f64, rng: &mut Rng) -> (Image, Vec<bool>) {
    let sharp = synth_texture(width, height, rng);
    let split = width / 3;
    let base = [rng.range(0.3, 0.7), rng.range(0.3, 0.7), rng.range(0.3, 0.7)];
    let mut shade = Image::from_fn_rgb(width, height, |x, y| {
        let t = 0.02 * ((x as f64 * 0.05).sin() + (y as f64 * 0.07).cos());
        [base[0] + t, base[1] + t, base[2] + t]
    });
    for v in shade.data_mut() {
        *v = (*v + rng.range(-0.02, 0.02)).clamp(0.0, 1.0);
    }
    let shade = gaussian_blur(&shade, sigma);
    let img = Image::from_fn_rgb(width, height, |x, y| {
        if x < split {
            sharp.rgb(x, y)
        } else {
            shade.rgb(x, y)
        }
    });
    let mask = (0..width * height).map(|i| i % width >= split).collect();
    (img, mask)
}
