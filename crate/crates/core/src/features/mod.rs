//! Hand-crafted sharpness features of a grayscale patch.
//!
//! Three log-compressed, unit-sum descriptors: radial DCT band power, a Sobel
//! magnitude histogram and the leading singular values. Sharp patches put more
//! mass in high DCT bands, high gradient bins and trailing singular values.

pub mod dct;
pub mod svd;

use crate::error::{Error, Result};
use crate::filter::sobel_interior;
use crate::image::Image;

pub use dct::{dct2, dct_feature, idct2, PolarBandPartition};
pub use svd::{low_rank_approx, singular_values, svd, svd_feature, Svd};

/// Upper end of the gradient histogram: the largest Sobel magnitude a patch
/// with values in `[0, 1]` can produce.
pub const GRADIENT_RANGE: f64 = 4.0 * std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Dct,
    Gradient,
    Svd,
    Deep,
    Handcrafted,
    Concatenated,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 6] = [
        FeatureKind::Dct,
        FeatureKind::Gradient,
        FeatureKind::Svd,
        FeatureKind::Deep,
        FeatureKind::Handcrafted,
        FeatureKind::Concatenated,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            FeatureKind::Dct => "f_D",
            FeatureKind::Gradient => "f_G",
            FeatureKind::Svd => "f_S",
            FeatureKind::Deep => "f_C",
            FeatureKind::Handcrafted => "f_H",
            FeatureKind::Concatenated => "f_B",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Dct => "dct",
            FeatureKind::Gradient => "gradient",
            FeatureKind::Svd => "svd",
            FeatureKind::Deep => "deep",
            FeatureKind::Handcrafted => "handcrafted",
            FeatureKind::Concatenated => "concatenated",
        }
    }

    /// Unit-sum kinds.
    pub fn is_normalized(self) -> bool {
        matches!(
            self,
            FeatureKind::Dct | FeatureKind::Gradient | FeatureKind::Svd
        )
    }
}

/// Non-negative feature values tagged with their kind.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub kind: FeatureKind,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(kind: FeatureKind, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(format!(
                "{} values must be finite and non-negative",
                kind.symbol()
            )));
        }
        Ok(Self { kind, values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Divides by the sum; an all-zero vector stays zero.
pub fn normalize_sum(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
    v
}

/// Histogram bin of a Sobel magnitude over `[0, GRADIENT_RANGE]`.
pub fn gradient_bin(magnitude: f64, bins: usize) -> usize {
    ((magnitude / GRADIENT_RANGE * bins as f64).floor() as usize).min(bins - 1)
}

/// `log(1 + count_k)` over a fixed-range histogram of interior Sobel
/// magnitudes, normalized to unit sum.
pub fn gradient_feature(patch: &[f64], side: usize, bins: usize) -> Result<Vec<f64>> {
    if side < 3 || patch.len() != side * side {
        return Err(Error::invalid("gradient feature needs a square patch of side ≥ 3"));
    }
    if bins == 0 {
        return Err(Error::invalid("gradient feature needs at least one bin"));
    }
    let mut hist = vec![0usize; bins];
    for m in sobel_interior(patch, side) {
        hist[gradient_bin(m, bins)] += 1;
    }
    Ok(normalize_sum(
        hist.iter().map(|&c| (1.0 + c as f64).ln()).collect(),
    ))
}

/// The three hand-crafted features of one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Handcrafted {
    pub dct: Vec<f64>,
    pub gradient: Vec<f64>,
    pub svd: Vec<f64>,
}

impl Handcrafted {
    /// `f_H = [f_D, f_G, f_S]`.
    pub fn concat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dct.len() * 3);
        v.extend_from_slice(&self.dct);
        v.extend_from_slice(&self.gradient);
        v.extend_from_slice(&self.svd);
        v
    }
}

/// Computes hand-crafted features for patches of one side length.
#[derive(Debug, Clone)]
pub struct HandcraftedExtractor {
    side: usize,
    dims: usize,
    partition: PolarBandPartition,
    basis: Vec<f64>,
}

impl HandcraftedExtractor {
    pub fn new(side: usize, dims: usize) -> Self {
        Self {
            side,
            dims,
            partition: PolarBandPartition::new(side, dims),
            basis: dct::dct_basis(side),
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn extract(&self, gray: &Image) -> Result<Handcrafted> {
        if gray.channels() != 1 || gray.width() != self.side || gray.height() != self.side {
            return Err(Error::shape(
                format!("{0}×{0} gray patch", self.side),
                format!("{}×{}×{}", gray.width(), gray.height(), gray.channels()),
            ));
        }
        let p = gray.data();
        let coeffs = dct::dct2_with_basis(&self.basis, p, self.side);
        Ok(Handcrafted {
            dct: dct_feature(&coeffs, &self.partition)?,
            gradient: gradient_feature(p, self.side, self.dims)?,
            svd: svd_feature(p, self.side, self.dims)?,
        })
    }
}
