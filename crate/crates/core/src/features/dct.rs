//! Orthonormal 2-D DCT-II and the polar band power feature.

use crate::error::{Error, Result};

/// `n × n` orthonormal DCT-II basis, row `k` holding frequency `k`.
pub fn dct_basis(n: usize) -> Vec<f64> {
    let mut d = vec![0.0; n * n];
    let nf = n as f64;
    for k in 0..n {
        let alpha = if k == 0 {
            (1.0 / nf).sqrt()
        } else {
            (2.0 / nf).sqrt()
        };
        for i in 0..n {
            d[k * n + i] =
                alpha * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf)).cos();
        }
    }
    d
}

fn check_square(data: &[f64], n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid("DCT needs a side of at least 2"));
    }
    if data.len() != n * n {
        return Err(Error::invalid(format!(
            "DCT input has {} samples, not a {n}×{n} square",
            data.len()
        )));
    }
    Ok(())
}

/// `C = D · X · Dᵀ` for a row-major square patch.
pub fn dct2(patch: &[f64], n: usize) -> Result<Vec<f64>> {
    check_square(patch, n)?;
    let d = dct_basis(n);
    Ok(sandwich(&d, patch, n, false))
}

/// Inverse of [`dct2`]: `X = Dᵀ · C · D`.
pub fn idct2(coeffs: &[f64], n: usize) -> Result<Vec<f64>> {
    check_square(coeffs, n)?;
    let d = dct_basis(n);
    Ok(sandwich(&d, coeffs, n, true))
}

pub(crate) fn dct2_with_basis(basis: &[f64], patch: &[f64], n: usize) -> Vec<f64> {
    sandwich(basis, patch, n, false)
}

/// `D X Dᵀ` or, transposed, `Dᵀ X D`.
fn sandwich(d: &[f64], x: &[f64], n: usize, transpose: bool) -> Vec<f64> {
    let at = |r: usize, c: usize| if transpose { d[c * n + r] } else { d[r * n + c] };
    let mut tmp = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += at(r, k) * x[k * n + c];
            }
            tmp[r * n + c] = s;
        }
    }
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += tmp[r * n + k] * at(c, k);
            }
            out[r * n + c] = s;
        }
    }
    out
}

/// Assignment of DCT coefficient cells to radial bands.
///
/// The radius of cell `(u, v)` is `√(u² + v²)` in index units. Band
/// boundaries are spaced linearly over `[0, √2 (n − 1)]`; the DC cell sits in
/// band 0 and the corner cell in the last band.
#[derive(Debug, Clone)]
pub struct PolarBandPartition {
    n: usize,
    bands: usize,
    boundaries: Vec<f64>,
    cell_band: Vec<usize>,
    cell_counts: Vec<usize>,
}

impl PolarBandPartition {
    pub fn new(n: usize, bands: usize) -> Self {
        assert!(n >= 2 && bands >= 1);
        let rho_max = std::f64::consts::SQRT_2 * (n - 1) as f64;
        let boundaries: Vec<f64> = (0..=bands)
            .map(|k| rho_max * k as f64 / bands as f64)
            .collect();
        let mut cell_band = vec![0; n * n];
        let mut cell_counts = vec![0; bands];
        for v in 0..n {
            for u in 0..n {
                let rho = ((u * u + v * v) as f64).sqrt();
                let band = ((rho / rho_max * bands as f64).floor() as usize).min(bands - 1);
                cell_band[v * n + u] = band;
                cell_counts[band] += 1;
            }
        }
        Self {
            n,
            bands,
            boundaries,
            cell_band,
            cell_counts,
        }
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn band_of(&self, u: usize, v: usize) -> usize {
        self.cell_band[v * self.n + u]
    }

    /// Cells per band (`S_k`).
    pub fn cell_counts(&self) -> &[usize] {
        &self.cell_counts
    }
}

/// Log band power: `log(1 + Σ_band |C| / S_k)`, normalized to unit sum.
pub fn dct_feature(coeffs: &[f64], partition: &PolarBandPartition) -> Result<Vec<f64>> {
    let n = partition.side();
    if coeffs.len() != n * n {
        return Err(Error::shape(n * n, coeffs.len()));
    }
    let mut sums = vec![0.0; partition.bands()];
    for (i, &c) in coeffs.iter().enumerate() {
        sums[partition.cell_band[i]] += c.abs();
    }
    let raw: Vec<f64> = sums
        .iter()
        .zip(partition.cell_counts())
        .map(|(&s, &count)| {
            if count == 0 {
                0.0
            } else {
                (1.0 + s / count as f64).ln()
            }
        })
        .collect();
    Ok(super::normalize_sum(raw))
}
