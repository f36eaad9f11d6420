//! Blur segmentation, evaluation metrics and defocus magnification.
//!
//! A pixel counts as blurry when its value is `≥ τ`, everywhere in this module.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::par;

/// Per-pixel blurry/sharp flags, `true` = blurry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(width * height, data.len()));
        }
        Ok(Self { width, height, data })
    }

    /// Pixels ≥ 0.5 of a single-channel image are `true`.
    pub fn from_image(img: &Image) -> Result<Self> {
        if img.channels() != 1 {
            return Err(Error::invalid("masks are single-channel"));
        }
        Self::new(img.width(), img.height(), img.data().iter().map(|&v| v >= 0.5).collect())
    }

    /// 1.0 for `true`, 0.0 otherwise.
    pub fn to_image(&self) -> Image {
        let d = self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Image::new(self.width, self.height, 1, d).expect("mask dims")
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

fn require_map(map: &Image) -> Result<()> {
    if map.channels() != 1 {
        return Err(Error::invalid("defocus maps are single-channel"));
    }
    Ok(())
}

/// `τ = α v_max + (1 − α) v_min`.
pub fn threshold(map: &Image, alpha: f64) -> Result<f64> {
    require_map(map)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("alpha must lie in [0, 1]"));
    }
    let (lo, hi) = map
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    Ok(alpha * hi + (1.0 - alpha) * lo)
}

/// Blurry where `I_F ≥ τ(α)`. A constant map is all blurry.
pub fn segment(map: &Image, alpha: f64) -> Result<BinaryMask> {
    let tau = threshold(map, alpha)?;
    BinaryMask::new(map.width(), map.height(), map.data().iter().map(|&v| v >= tau).collect())
}

/// Fraction of pixels where `mask` and `gt` agree.
pub fn accuracy(mask: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    if (mask.width, mask.height) != (gt.width, gt.height) {
        return Err(Error::shape(
            format!("{}×{}", gt.width, gt.height),
            format!("{}×{}", mask.width, mask.height),
        ));
    }
    let same = mask.data.iter().zip(&gt.data).filter(|(a, b)| a == b).count();
    Ok(same as f64 / mask.data.len().max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub tau: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau,precision,recall\n");
        for p in &self.points {
            let _ = writeln!(s, "{:.6},{:.6},{:.6}", p.tau, p.precision, p.recall);
        }
        s
    }

    pub fn recall_monotone(&self) -> bool {
        self.points.windows(2).all(|w| w[1].recall <= w[0].recall)
    }
}

/// Precision and recall of `map ≥ τ` against `gt` for `steps` thresholds
/// evenly spaced over `[lo, hi]`. Precision is 1 when nothing is predicted.
pub fn pr_curve(map: &Image, gt: &BinaryMask, steps: usize, lo: f64, hi: f64) -> Result<PrCurve> {
    require_map(map)?;
    if steps < 2 || !(hi > lo) {
        return Err(Error::invalid("pr_curve needs steps ≥ 2 and hi > lo"));
    }
    if (map.width(), map.height()) != (gt.width, gt.height) {
        return Err(Error::shape(
            format!("{}×{}", gt.width, gt.height),
            format!("{}×{}", map.width(), map.height()),
        ));
    }
    let positives = gt.count();
    if positives == 0 {
        return Err(Error::invalid("ground truth has no blurry pixels; recall is undefined"));
    }
    let points = (0..steps)
        .map(|k| {
            let tau = lo + (hi - lo) * k as f64 / (steps - 1) as f64;
            let (mut tp, mut fp) = (0usize, 0usize);
            for (&v, &g) in map.data().iter().zip(&gt.data) {
                if v >= tau {
                    if g {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            PrPoint {
                tau,
                precision: if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 },
                recall: tp as f64 / positives as f64,
            }
        })
        .collect();
    Ok(PrCurve { points })
}

/// Re-blurs the background (`I_F ≥ τ(α)`) with a per-pixel Gaussian of
/// `σ' = factor · I_F(x)`, gathered over `⌈3σ'⌉` and renormalized at the
/// border. Foreground pixels are copied unchanged.
pub fn magnify_blur(img: &Image, map: &Image, factor: f64, alpha: f64) -> Result<Image> {
    require_map(map)?;
    if (img.width(), img.height()) != (map.width(), map.height()) {
        return Err(Error::shape(
            format!("{}×{}", img.width(), img.height()),
            format!("{}×{}", map.width(), map.height()),
        ));
    }
    if !(factor >= 1.0) {
        return Err(Error::invalid("magnification factor must be ≥ 1"));
    }
    let mask = segment(map, alpha)?;
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut out = img.data().to_vec();
    par::fill_chunks(&mut out, w * c, |y, row| {
        let mut acc = vec![0.0; c];
        for x in 0..w {
            if !mask.data[y * w + x] {
                continue;
            }
            let s = factor * map.get(x, y, 0);
            if !(s > 0.0) {
                continue;
            }
            let r = (3.0 * s).ceil() as i64;
            let k = 1.0 / (2.0 * s * s);
            acc.iter_mut().for_each(|a| *a = 0.0);
            let mut norm = 0.0;
            for dy in -r..=r {
                let sy = y as i64 + dy;
                if sy < 0 || sy >= h as i64 {
                    continue;
                }
                for dx in -r..=r {
                    let sx = x as i64 + dx;
                    if sx < 0 || sx >= w as i64 {
                        continue;
                    }
                    let wgt = (-((dx * dx + dy * dy) as f64) * k).exp();
                    let p = img.pixel(sx as usize, sy as usize);
                    for ch in 0..c {
                        acc[ch] += wgt * p[ch];
                    }
                    norm += wgt;
                }
            }
            for ch in 0..c {
                row[x * c + ch] = acc[ch] / norm;
            }
        }
    });
    Image::new(w, h, c, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_level() -> Image {
        Image::from_fn_gray(4, 2, |x, _| if x < 2 { 0.5 } else { 2.0 })
    }

    #[test]
    fn threshold_examples() {
        let m = two_level();
        assert!((threshold(&m, 0.3).unwrap() - 0.95).abs() < 1e-12);
        let s = segment(&m, 0.3).unwrap();
        assert_eq!(s.data, vec![false, false, true, true, false, false, true, true]);
        assert_eq!(segment(&m, 0.0).unwrap().count(), 8);
        assert_eq!(segment(&m, 1.0).unwrap().count(), 4);
        assert_eq!(segment(&Image::filled(3, 3, 1, 1.2), 0.3).unwrap().count(), 9);
    }

    #[test]
    fn accuracy_examples() {
        let gt = BinaryMask::new(2, 2, vec![true, false, true, false]).unwrap();
        let inv = BinaryMask::new(2, 2, vec![false, true, false, true]).unwrap();
        let half = BinaryMask::new(2, 2, vec![true, true, false, false]).unwrap();
        assert_eq!(accuracy(&gt, &gt).unwrap(), 1.0);
        assert_eq!(accuracy(&inv, &gt).unwrap(), 0.0);
        assert_eq!(accuracy(&half, &gt).unwrap(), 0.5);
        assert!(accuracy(&BinaryMask::new(1, 1, vec![true]).unwrap(), &gt).is_err());
    }

    #[test]
    fn pr_examples() {
        let m = two_level();
        let gt = segment(&m, 0.5).unwrap();
        let c = pr_curve(&m, &gt, 11, 0.5, 2.0).unwrap();
        assert_eq!(c.points[0].recall, 1.0);
        assert_eq!(c.points[0].precision, 0.5);
        assert!(c.recall_monotone());
        assert!(c.points.iter().any(|p| p.precision == 1.0 && p.recall == 1.0));
        let none = BinaryMask::new(4, 2, vec![false; 8]).unwrap();
        assert!(pr_curve(&m, &none, 11, 0.5, 2.0).is_err());
    }

    #[test]
    fn magnify_keeps_foreground() {
        let img = Image::from_fn_rgb(12, 6, |x, y| [((x * 7 + y * 3) % 5) as f64 / 4.0, 0.2, 0.9]);
        let map = Image::from_fn_gray(12, 6, |x, _| if x < 6 { 0.5 } else { 2.0 });
        let out = magnify_blur(&img, &map, 2.0, 0.3).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                assert_eq!(out.pixel(x, y), img.pixel(x, y));
            }
        }
        let sharp = Image::filled(12, 6, 1, 0.5);
        let thr = magnify_blur(&img, &Image::from_fn_gray(12, 6, |x, _| if x == 0 { 0.6 } else { 0.5 }), 2.0, 1.0).unwrap();
        for y in 0..6 {
            for x in 1..12 {
                assert_eq!(thr.pixel(x, y), img.pixel(x, y));
            }
        }
        assert!(magnify_blur(&img, &sharp, 0.5, 0.3).is_err());
    }
}
