//! Gaussian kernels, Gaussian blur and Sobel gradients.

use crate::image::Image;
use crate::par;

/// Normalized 1-D Gaussian taps with radius `⌈3σ⌉`.
pub fn gaussian_kernel_1d(sigma: f64) -> Vec<f64> {
    assert!(sigma > 0.0, "sigma must be positive");
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur. Out-of-image taps are dropped and the remaining
/// weights renormalized, so constants are preserved up to the border.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    let k = gaussian_kernel_1d(sigma);
    let tmp = convolve_axis(img, &k, true);
    convolve_axis(&tmp, &k, false)
}

fn convolve_axis(img: &Image, k: &[f64], horizontal: bool) -> Image {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let r = (k.len() / 2) as i64;
    let mut out = vec![0.0; w * h * c];
    par::fill_chunks(&mut out, w * c, |y, row| {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                let mut norm = 0.0;
                for (t, &kv) in k.iter().enumerate() {
                    let off = t as i64 - r;
                    let (sx, sy) = if horizontal {
                        (x as i64 + off, y as i64)
                    } else {
                        (x as i64, y as i64 + off)
                    };
                    if sx < 0 || sy < 0 || sx >= w as i64 || sy >= h as i64 {
                        continue;
                    }
                    acc += kv * img.get(sx as usize, sy as usize, ch);
                    norm += kv;
                }
                row[x * c + ch] = acc / norm;
            }
        }
    });
    Image::new(w, h, c, out).expect("finite blur output")
}

/// Sobel responses of a single-channel image with replicated borders.
pub struct Gradients {
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub magnitude: Vec<f64>,
}

pub fn sobel(img: &Image) -> Gradients {
    assert_eq!(img.channels(), 1);
    let (w, h) = (img.width() as i64, img.height() as i64);
    let at = |x: i64, y: i64| img.get(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize, 0);
    let n = (w * h) as usize;
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            gx[i] = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            gy[i] = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
        }
    }
    let magnitude = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    Gradients { gx, gy, magnitude }
}

/// Sobel magnitudes over the valid interior of a square patch, row-major.
pub fn sobel_interior(patch: &[f64], n: usize) -> Vec<f64> {
    let at = |x: usize, y: usize| patch[y * n + x];
    let mut out = Vec::with_capacity((n - 2) * (n - 2));
    for y in 1..n - 1 {
        for x in 1..n - 1 {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            out.push(gx.hypot(gy));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_normalized_and_symmetric() {
        for s in [0.5, 1.0, 2.0, 3.3] {
            let k = gaussian_kernel_1d(s);
            assert_eq!(k.len(), 2 * (3.0 * s).ceil() as usize + 1);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for i in 0..k.len() {
                assert_eq!(k[i], k[k.len() - 1 - i]);
            }
        }
    }

    #[test]
    fn blur_preserves_constants() {
        let img = Image::filled(9, 7, 3, 0.4);
        let b = gaussian_blur(&img, 1.7);
        assert!(b.data().iter().all(|v| (v - 0.4).abs() < 1e-14));
    }

    #[test]
    fn sobel_on_step() {
        let img = Image::from_fn_gray(6, 5, |x, _| if x >= 3 { 1.0 } else { 0.0 });
        let g = sobel(&img);
        assert_eq!(g.gx[2 * 6 + 2], 4.0);
        assert_eq!(g.gx[2 * 6 + 3], 4.0);
        assert_eq!(g.gx[2 * 6 + 1], 0.0);
        assert!(g.gy.iter().all(|&v| v == 0.0));
        let interior = sobel_interior(&img.crop(0, 0, 5, 5).unwrap().into_data(), 5);
        assert_eq!(interior.len(), 9);
        assert_eq!(interior[1], 4.0);
    }
}
