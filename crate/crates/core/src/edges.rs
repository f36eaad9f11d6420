//! Canny edges with strength labels and multi-scale patch extraction.
//!
//! Strong edges are assumed in focus and get small patches; weak edges may be
//! blurred and get large patches, so a blurred edge still carries enough
//! context to be told apart from a faint sharp one.

use std::collections::VecDeque;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::filter::{gaussian_blur, sobel};
use crate::image::{to_grayscale, Image};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeLabel {
    None,
    Weak,
    Strong,
}

/// Patch scale class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scale {
    Small,
    Large,
}

impl Scale {
    pub fn as_str(self) -> &'static str {
        match self {
            Scale::Small => "small",
            Scale::Large => "large",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Scale::Small => 0,
            Scale::Large => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Scale::Small),
            1 => Ok(Scale::Large),
            _ => Err(Error::invalid(format!("unknown scale code {code}"))),
        }
    }
}

/// Thresholds for [`canny`].
#[derive(Debug, Clone, Copy)]
pub struct CannyParams {
    pub sigma: f64,
    pub low: f64,
    pub high: f64,
    /// When set, hysteresis output at or above this magnitude is strong and the
    /// rest weak, instead of splitting at `high`.
    pub mid: Option<f64>,
}

impl CannyParams {
    pub fn from_config(cfg: &Config) -> Self {
        Self {
            sigma: cfg.canny_sigma,
            low: cfg.canny_low,
            high: cfg.canny_high,
            mid: cfg.canny_mid,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    labels: Vec<EdgeLabel>,
    magnitude: Vec<f64>,
}

impl EdgeMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn label(&self, x: usize, y: usize) -> EdgeLabel {
        self.labels[y * self.width + x]
    }

    pub fn labels(&self) -> &[EdgeLabel] {
        &self.labels
    }

    pub fn magnitude(&self, x: usize, y: usize) -> f64 {
        self.magnitude[y * self.width + x]
    }

    pub fn count(&self, label: EdgeLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn is_edge(&self, x: usize, y: usize) -> bool {
        self.label(x, y) != EdgeLabel::None
    }

    /// 0 none, 128 weak, 255 strong.
    pub fn to_image(&self) -> Image {
        Image::from_fn_gray(self.width, self.height, |x, y| match self.label(x, y) {
            EdgeLabel::None => 0.0,
            EdgeLabel::Weak => 128.0 / 255.0,
            EdgeLabel::Strong => 1.0,
        })
    }
}

/// Canny edge detection on a single-channel image in `[0, 1]`.
///
/// Gaussian smoothing, Sobel gradients, non-maximum suppression along the
/// quantized gradient direction, then hysteresis with 8-connectivity.
pub fn canny(v: &Image, params: &CannyParams) -> Result<EdgeMap> {
    if v.channels() != 1 {
        return Err(Error::invalid("canny expects a single-channel image"));
    }
    if !(params.sigma > 0.0) || !(params.low > 0.0) || params.low >= params.high {
        return Err(Error::invalid("canny needs sigma > 0 and 0 < low < high"));
    }
    let (w, h) = (v.width(), v.height());
    let smoothed = gaussian_blur(v, params.sigma);
    let g = sobel(&smoothed);
    let mag = &g.magnitude;

    let mut thin = vec![false; w * h];
    if w >= 3 && h >= 3 {
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let i = y * w + x;
                let m = mag[i];
                if m <= 0.0 {
                    continue;
                }
                let (a, b) = direction_neighbors(g.gx[i], g.gy[i], x, y, w);
                // ties keep the first pixel of a plateau
                thin[i] = m > mag[a] && m >= mag[b];
            }
        }
    }

    let mut detected = vec![false; w * h];
    let mut queue = VecDeque::new();
    for i in 0..w * h {
        if thin[i] && mag[i] >= params.high {
            detected[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !detected[j] && thin[j] && mag[j] >= params.low {
                    detected[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }

    let split = params.mid.unwrap_or(params.high);
    let labels = (0..w * h)
        .map(|i| {
            if !detected[i] {
                EdgeLabel::None
            } else if mag[i] >= split {
                EdgeLabel::Strong
            } else {
                EdgeLabel::Weak
            }
        })
        .collect();
    Ok(EdgeMap {
        width: w,
        height: h,
        labels,
        magnitude: g.magnitude,
    })
}

/// The two neighbors along the gradient direction, quantized to 0/45/90/135°.
/// The first is on the negative side of the gradient.
fn direction_neighbors(gx: f64, gy: f64, x: usize, y: usize, w: usize) -> (usize, usize) {
    let mut angle = gy.atan2(gx).to_degrees();
    if angle < 0.0 {
        angle += 180.0;
    }
    let i = y * w + x;
    if !(22.5..157.5).contains(&angle) {
        (i - 1, i + 1)
    } else if angle < 67.5 {
        (i - w - 1, i + w + 1)
    } else if angle < 112.5 {
        (i - w, i + w)
    } else {
        (i - w + 1, i + w - 1)
    }
}

/// An edge-centered crop used for classification.
#[derive(Debug, Clone)]
pub struct PatchSample {
    pub x: usize,
    pub y: usize,
    pub scale: Scale,
    /// Sobel magnitude at the center.
    pub strength: f64,
    pub rgb: Image,
    pub gray: Image,
}

impl PatchSample {
    /// Crops the patch of `size` around `(x, y)` from an RGB image; `None` when
    /// it would leave the image.
    pub fn crop(img: &Image, x: usize, y: usize, scale: Scale, size: usize, strength: f64) -> Option<Self> {
        let half = size / 2;
        if x < half || y < half || x + half >= img.width() || y + half >= img.height() {
            return None;
        }
        let rgb = img.to_rgb().crop_centered(x, y, size).ok()?;
        let gray = to_grayscale(&rgb).ok()?;
        Some(Self {
            x,
            y,
            scale,
            strength,
            rgb,
            gray,
        })
    }
}

/// Selects at most one edge pixel per `edge_stride × edge_stride` cell and
/// crops a small patch on strong edges, a large one on weak edges.
///
/// Within a cell, strong pixels are preferred, then raster order; pixels whose
/// patch would leave the image are skipped.
pub fn extract_patches(img: &Image, edges: &EdgeMap, cfg: &Config) -> Vec<PatchSample> {
    let img = img.to_rgb();
    let (w, h) = (edges.width(), edges.height());
    let s = cfg.edge_stride.max(1);
    let cells_x = w.div_ceil(s);
    let cells_y = h.div_ceil(s);
    let rows = par::map_range(cells_y, |cy| {
        let mut out = Vec::new();
        for cx in 0..cells_x {
            let mut chosen = None;
            'scan: for want in [EdgeLabel::Strong, EdgeLabel::Weak] {
                for y in cy * s..((cy + 1) * s).min(h) {
                    for x in cx * s..((cx + 1) * s).min(w) {
                        if edges.label(x, y) != want {
                            continue;
                        }
                        let scale = if want == EdgeLabel::Strong {
                            Scale::Small
                        } else {
                            Scale::Large
                        };
                        let size = cfg.patch_size(scale);
                        if let Some(p) =
                            PatchSample::crop(&img, x, y, scale, size, edges.magnitude(x, y))
                        {
                            chosen = Some(p);
                            break 'scan;
                        }
                    }
                }
            }
            out.extend(chosen);
        }
        out
    });
    rows.into_iter().flatten().collect()
}
