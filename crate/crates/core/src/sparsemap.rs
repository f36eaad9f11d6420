//! Sparse defocus estimates at edge pixels, the rolling-guidance image and the
//! probability-joint bilateral filter.

use crate::config::Config;
use crate::edges::{PatchSample, Scale};
use crate::error::{Error, Result};
use crate::filter::gaussian_blur;
use crate::image::Image;
use crate::nn::{Classification, Model};
use crate::par;

/// `I_S` and `I_C`; zero marks an unset pixel in both.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDefocusMap {
    pub width: usize,
    pub height: usize,
    pub sigma: Vec<f64>,
    pub confidence: Vec<f64>,
}

impl SparseDefocusMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            sigma: vec![0.0; width * height],
            confidence: vec![0.0; width * height],
        }
    }

    /// Sets one pixel. Both values must be positive.
    pub fn set(&mut self, x: usize, y: usize, sigma: f64, confidence: f64) -> Result<()> {
        if x >= self.width || y >= self.height {
            return Err(Error::invalid(format!("({x}, {y}) outside the map")));
        }
        if !(sigma > 0.0 && confidence > 0.0 && confidence <= 1.0) {
            return Err(Error::invalid("sparse entries need σ > 0 and confidence in (0, 1]"));
        }
        let i = y * self.width + x;
        self.sigma[i] = sigma;
        self.confidence[i] = confidence;
        Ok(())
    }

    pub fn is_set(&self, x: usize, y: usize) -> bool {
        self.sigma[y * self.width + x] > 0.0
    }

    /// Raster indices of set pixels.
    pub fn support(&self) -> Vec<usize> {
        (0..self.sigma.len()).filter(|&i| self.sigma[i] > 0.0).collect()
    }

    pub fn support_len(&self) -> usize {
        self.sigma.iter().filter(|&&s| s > 0.0).count()
    }

    pub fn sigma_image(&self) -> Image {
        Image::new(self.width, self.height, 1, self.sigma.clone()).expect("finite map")
    }

    pub fn confidence_image(&self) -> Image {
        Image::new(self.width, self.height, 1, self.confidence.clone()).expect("finite map")
    }
}

/// Encodes and classifies every patch (in parallel, in input order).
pub fn classify_patches(model: &Model, samples: &[PatchSample]) -> Result<Vec<Classification>> {
    let small = model.extractor(Scale::Small);
    let large = model.extractor(Scale::Large);
    par::map(samples, |s| {
        let ex = match s.scale {
            Scale::Small => &small,
            Scale::Large => &large,
        };
        let e = model.encode_patch(&s.rgb, &s.gray, s.scale, ex)?;
        model.classify(&e)
    })
    .into_iter()
    .collect()
}

/// `I_S(x) = σ(argmax)`, `I_C(x) = max probability` at every sample center.
pub fn classify_to_sparse(model: &Model, samples: &[PatchSample], width: usize, height: usize) -> Result<SparseDefocusMap> {
    let mut map = SparseDefocusMap::new(width, height);
    for (s, c) in samples.iter().zip(classify_patches(model, samples)?) {
        map.set(s.x, s.y, c.sigma, c.confidence)?;
    }
    Ok(map)
}

/// Rolling guidance: a Gaussian blur, then `iterations − 1` joint bilateral
/// passes over the input, each guided by the previous iterate.
pub fn rolling_guidance(img: &Image, sigma_s: f64, sigma_r: f64, iterations: usize) -> Result<Image> {
    if iterations == 0 {
        return Err(Error::invalid("rolling guidance needs at least one iteration"));
    }
    if !(sigma_s > 0.0 && sigma_r > 0.0) {
        return Err(Error::invalid("rolling guidance sigmas must be positive"));
    }
    let input = img.to_rgb();
    let mut g = gaussian_blur(&input, sigma_s);
    for _ in 1..iterations {
        g = joint_bilateral(&input, &g, sigma_s, sigma_r);
    }
    Ok(g)
}

/// Joint bilateral filter of `input` with range weights from `guide`, over a
/// `⌈3σ_s⌉` square window truncated at the border.
pub fn joint_bilateral(input: &Image, guide: &Image, sigma_s: f64, sigma_r: f64) -> Image {
    let (w, h, c) = (input.width(), input.height(), input.channels());
    let gc = guide.channels();
    let r = (3.0 * sigma_s).ceil() as i64;
    let spatial: Vec<f64> = (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma_s * sigma_s)).exp())
        .collect();
    let inv_r = 1.0 / (2.0 * sigma_r * sigma_r);
    let mut out = vec![0.0; w * h * c];
    par::fill_chunks(&mut out, w * c, |y, row| {
        let mut acc = vec![0.0; c];
        for x in 0..w {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let gx = guide.pixel(x, y);
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
                    let gp = guide.pixel(sx as usize, sy as usize);
                    let d2: f64 = (0..gc).map(|k| (gx[k] - gp[k]) * (gx[k] - gp[k])).sum();
                    let wgt = spatial[(dy + r) as usize] * spatial[(dx + r) as usize] * (-d2 * inv_r).exp();
                    let ip = input.pixel(sx as usize, sy as usize);
                    for k in 0..c {
                        acc[k] += wgt * ip[k];
                    }
                    norm += wgt;
                }
            }
            for k in 0..c {
                row[x * c + k] = acc[k] / norm;
            }
        }
    });
    Image::new(w, h, c, out).expect("finite filter output")
}

/// Widths of the probability-joint bilateral filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilateralParams {
    pub sigma_s: f64,
    pub sigma_r: f64,
    pub sigma_c: f64,
    pub radius: usize,
}

impl BilateralParams {
    pub fn from_config(cfg: &Config) -> Self {
        Self {
            sigma_s: cfg.bilateral_sigma_s,
            sigma_r: cfg.bilateral_sigma_r,
            sigma_c: cfg.bilateral_sigma_c,
            radius: cfg.bilateral_radius,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma_s > 0.0 && self.sigma_r > 0.0 && self.sigma_c > 0.0 && self.radius > 0) {
            return Err(Error::invalid("bilateral widths and radius must be positive"));
        }
        Ok(())
    }
}

/// The probability-joint bilateral filter. For each support pixel `x`,
///
/// ```text
/// B(x) = Σ_p G_s(‖x − p‖) G_r(‖I_G(x) − I_G(p)‖) G_c(1 − I_C(p)) I_S(p) / W(x)
/// ```
///
/// over support pixels `p` within Euclidean distance `radius` of `x`. The
/// support and the confidences are unchanged.
pub fn prob_joint_bilateral(sparse: &SparseDefocusMap, guide: &Image, p: &BilateralParams) -> Result<SparseDefocusMap> {
    p.validate()?;
    let (w, h) = (sparse.width, sparse.height);
    if guide.width() != w || guide.height() != h {
        return Err(Error::shape(format!("{w}×{h} guide"), format!("{}×{}", guide.width(), guide.height())));
    }
    let support = sparse.support();
    if support.is_empty() {
        return Err(Error::invalid("bilateral filter needs a non-empty support"));
    }
    let r = p.radius as i64;
    let (ks, kr, kc) = (
        1.0 / (2.0 * p.sigma_s * p.sigma_s),
        1.0 / (2.0 * p.sigma_r * p.sigma_r),
        1.0 / (2.0 * p.sigma_c * p.sigma_c),
    );
    let gc = guide.channels();
    let filtered = par::map(&support, |&i| {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        let gx = guide.pixel(x as usize, y as usize);
        let (mut num, mut den) = (0.0, 0.0);
        for py in (y - r).max(0)..=(y + r).min(h as i64 - 1) {
            for px in (x - r).max(0)..=(x + r).min(w as i64 - 1) {
                let j = py as usize * w + px as usize;
                let s = sparse.sigma[j];
                if s <= 0.0 {
                    continue;
                }
                let d2 = ((px - x) * (px - x) + (py - y) * (py - y)) as f64;
                if d2 > (r * r) as f64 {
                    continue;
                }
                let gp = guide.pixel(px as usize, py as usize);
                let c2: f64 = (0..gc).map(|k| (gx[k] - gp[k]) * (gx[k] - gp[k])).sum();
                let dc = 1.0 - sparse.confidence[j];
                let wgt = (-d2 * ks - c2 * kr - dc * dc * kc).exp();
                num += wgt * s;
                den += wgt;
            }
        }
        if den > f64::MIN_POSITIVE && den.is_finite() {
            num / den
        } else {
            sparse.sigma[i]
        }
    });
    let mut out = sparse.clone();
    for (&i, v) in support.iter().zip(filtered) {
        out.sigma[i] = v;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn params() -> BilateralParams {
        BilateralParams {
            sigma_s: 100.0,
            sigma_r: 100.0,
            sigma_c: 1.0,
            radius: 15,
        }
    }

    #[test]
    fn single_support_is_identity() {
        let mut m = SparseDefocusMap::new(10, 10);
        m.set(4, 5, 1.3, 0.2).unwrap();
        let g = Image::filled(10, 10, 3, 0.5);
        let b = prob_joint_bilateral(&m, &g, &params()).unwrap();
        assert_eq!(b.sigma[5 * 10 + 4], 1.3);
        assert_eq!(b.support(), m.support());
    }

    #[test]
    fn constant_map_is_fixed() {
        let mut rng = Rng::new(2);
        let mut m = SparseDefocusMap::new(20, 20);
        for _ in 0..40 {
            m.set(rng.index(20), rng.index(20), 0.95, rng.range(0.05, 1.0)).unwrap();
        }
        let g = Image::from_fn_rgb(20, 20, |x, y| [x as f64 / 20.0, y as f64 / 20.0, 0.3]);
        let b = prob_joint_bilateral(&m, &g, &params()).unwrap();
        for i in m.support() {
            assert!((b.sigma[i] - 0.95).abs() < 1e-12);
        }
    }

    #[test]
    fn low_confidence_outlier_is_pulled_down() {
        let mut m = SparseDefocusMap::new(9, 9);
        for (x, y) in [(3, 4), (5, 4), (4, 3), (4, 5)] {
            m.set(x, y, 0.5, 1.0).unwrap();
        }
        m.set(4, 4, 2.0, 0.1).unwrap();
        let g = Image::filled(9, 9, 3, 0.2);
        let b = prob_joint_bilateral(&m, &g, &params()).unwrap();
        assert!(b.sigma[4 * 9 + 4] < 1.0);
    }

    #[test]
    fn empty_support_rejected() {
        let m = SparseDefocusMap::new(4, 4);
        assert!(prob_joint_bilateral(&m, &Image::zeros(4, 4, 3), &params()).is_err());
        let mut m = SparseDefocusMap::new(4, 4);
        assert!(m.set(1, 1, 0.0, 0.5).is_err());
        assert!(m.set(9, 1, 1.0, 0.5).is_err());
    }

    #[test]
    fn rolling_guidance_constant_fixed_point() {
        let img = Image::filled(16, 12, 3, 0.37);
        let g = rolling_guidance(&img, 3.0, 0.1, 4).unwrap();
        assert!(g.data().iter().all(|&v| (v - 0.37).abs() < 1e-12));
        assert!(rolling_guidance(&img, 3.0, 0.1, 0).is_err());
    }
}
