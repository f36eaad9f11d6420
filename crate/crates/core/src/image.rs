//! Planar float rasters and color conversions.

use crate::error::{Error, Result};

/// Row-major interleaved raster with 1 or 3 channels.
///
/// Pixel `(x, y)` channel `c` lives at `(y * width + x) * channels + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::shape(
                width * height * channels,
                format!("{} samples", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image contains non-finite values"));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        assert!(channels == 1 || channels == 3);
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        let mut img = Self::zeros(width, height, channels);
        img.data.fill(value);
        img
    }

    /// Builds a single-channel image from `f(x, y)`.
    pub fn from_fn_gray(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            data,
        }
    }

    /// Builds a 3-channel image from `f(x, y) -> [r, g, b]`.
    pub fn from_fn_rgb(width: usize, height: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 3,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// All channels of pixel `(x, y)`.
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Pixel as RGB; gray images are replicated.
    #[inline]
    pub fn rgb(&self, x: usize, y: usize) -> [f64; 3] {
        let p = self.pixel(x, y);
        if self.channels == 3 {
            [p[0], p[1], p[2]]
        } else {
            [p[0]; 3]
        }
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Copies the `size × size` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::invalid(format!(
                "crop {w}x{h} at ({x0},{y0}) exceeds {}x{}",
                self.width, self.height
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(w * h * c);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Ok(Image {
            width: w,
            height: h,
            channels: c,
            data,
        })
    }

    /// Square crop centered on `(cx, cy)`; `size` must be odd.
    pub fn crop_centered(&self, cx: usize, cy: usize, size: usize) -> Result<Image> {
        let half = size / 2;
        if cx < half || cy < half {
            return Err(Error::invalid("centered crop leaves the image"));
        }
        self.crop(cx - half, cy - half, size, size)
    }

    /// Single channel `c` as a gray image.
    pub fn channel(&self, c: usize) -> Image {
        assert!(c < self.channels);
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|p| p[c])
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Replicates a gray image into three channels; RGB images are cloned.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    /// Centers this image inside a zero canvas of `size × size`.
    pub fn zero_pad_to(&self, size: usize) -> Result<Image> {
        if self.width > size || self.height > size {
            return Err(Error::invalid("image larger than pad target"));
        }
        let mut out = Image::zeros(size, size, self.channels);
        let ox = (size - self.width) / 2;
        let oy = (size - self.height) / 2;
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    out.set(x + ox, y + oy, c, self.get(x, y, c));
                }
            }
        }
        Ok(out)
    }

    fn require_rgb(&self, op: &str) -> Result<()> {
        if self.channels != 3 {
            return Err(Error::invalid(format!(
                "{op} needs a 3-channel image, got {} channel(s)",
                self.channels
            )));
        }
        Ok(())
    }
}

/// HSV value channel: per-pixel maximum over R, G, B.
pub fn value_channel(img: &Image) -> Result<Image> {
    img.require_rgb("value_channel")?;
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| p[0].max(p[1]).max(p[2]))
        .collect();
    Ok(Image {
        width: img.width,
        height: img.height,
        channels: 1,
        data,
    })
}

pub const LUMA_R: f64 = 0.299;
pub const LUMA_G: f64 = 0.587;
pub const LUMA_B: f64 = 0.114;

/// Rec.601 luma, evaluated as `G + r(R − G) + b(B − G)` so gray input maps
/// to itself exactly.
pub fn to_grayscale(img: &Image) -> Result<Image> {
    img.require_rgb("to_grayscale")?;
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| p[1] + LUMA_R * (p[0] - p[1]) + LUMA_B * (p[2] - p[1]))
        .collect();
    Ok(Image {
        width: img.width,
        height: img.height,
        channels: 1,
        data,
    })
}

/// Grayscale view for either channel count: gray images pass through.
pub fn gray_view(img: &Image) -> Image {
    if img.channels == 1 {
        img.clone()
    } else {
        to_grayscale(img).expect("3-channel checked")
    }
}

/// Row-major square matrix of a single-channel image.
pub fn as_matrix(img: &Image) -> Vec<Vec<f64>> {
    assert_eq!(img.channels, 1);
    img.data.chunks(img.width).map(|r| r.to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn value_channel_examples() {
        let red = Image::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(value_channel(&red).unwrap().data(), &[1.0]);
        let gray = Image::new(1, 1, 3, vec![0.37; 3]).unwrap();
        assert_eq!(value_channel(&gray).unwrap().data(), &[0.37]);
    }

    #[test]
    fn value_channel_matches_scalar_oracle() {
        let mut rng = Rng::new(12);
        let img = Image::new(4, 4, 3, (0..48).map(|_| rng.uniform()).collect()).unwrap();
        let v = value_channel(&img).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let [r, g, b] = img.rgb(x, y);
                let mut m = r;
                if g > m {
                    m = g;
                }
                if b > m {
                    m = b;
                }
                assert_eq!(v.get(x, y, 0), m);
            }
        }
    }

    #[test]
    fn value_channel_permutation_and_replication() {
        let mut rng = Rng::new(3);
        let img = Image::new(3, 2, 3, (0..18).map(|_| rng.uniform()).collect()).unwrap();
        let permuted = Image::from_fn_rgb(3, 2, |x, y| {
            let [r, g, b] = img.rgb(x, y);
            [b, r, g]
        });
        assert_eq!(value_channel(&img).unwrap(), value_channel(&permuted).unwrap());
        // luma is not permutation invariant
        assert_ne!(to_grayscale(&img).unwrap(), to_grayscale(&permuted).unwrap());

        let v = value_channel(&img).unwrap();
        assert_eq!(value_channel(&v.to_rgb()).unwrap(), v);
    }

    #[test]
    fn grayscale_examples() {
        let px = |r, g, b| {
            to_grayscale(&Image::new(1, 1, 3, vec![r, g, b]).unwrap())
                .unwrap()
                .data()[0]
        };
        assert_eq!(px(1.0, 1.0, 1.0), 1.0);
        assert_eq!(px(0.0, 0.0, 0.0), 0.0);
        assert!((px(1.0, 0.0, 0.0) - 0.299).abs() < 1e-15);
    }

    #[test]
    fn wrong_channel_count_rejected() {
        let g = Image::zeros(2, 2, 1);
        assert!(matches!(value_channel(&g), Err(Error::InvalidInput(_))));
        assert!(to_grayscale(&g).is_err());
        assert!(Image::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(Image::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Image::new(1, 1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn crop_and_pad() {
        let img = Image::from_fn_gray(5, 5, |x, y| (y * 5 + x) as f64);
        let c = img.crop_centered(2, 2, 3).unwrap();
        assert_eq!(c.data(), &[6.0, 7.0, 8.0, 11.0, 12.0, 13.0, 16.0, 17.0, 18.0]);
        assert!(img.crop_centered(0, 2, 3).is_err());
        assert!(img.crop_centered(4, 2, 3).is_err());
        let p = c.zero_pad_to(5).unwrap();
        assert_eq!(p.get(1, 1, 0), 6.0);
        assert_eq!(p.get(0, 0, 0), 0.0);
        assert_eq!(p.get(3, 3, 0), 18.0);
    }
}
