//! One-sided Jacobi SVD for small dense patches.

use crate::error::{Error, Result};

const TOLERANCE: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Thin SVD `A = U diag(λ) Vᵀ` with singular values in descending order.
///
/// `u` holds `cols` column vectors of length `rows`, `v` holds `cols` column
/// vectors of length `cols`; both are stored column-major.
#[derive(Debug, Clone)]
pub struct Svd {
    pub rows: usize,
    pub cols: usize,
    pub singular_values: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Hestenes one-sided Jacobi on a row-major `rows × cols` matrix with
/// `rows ≥ cols`.
pub fn svd(a: &[f64], rows: usize, cols: usize) -> Result<Svd> {
    if a.len() != rows * cols || rows < cols || cols == 0 {
        return Err(Error::invalid(format!(
            "svd expects a row-major {rows}×{cols} matrix with rows ≥ cols"
        )));
    }
    // work column-major
    let mut w = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            w[c * rows + r] = a[r * cols + c];
        }
    }
    let mut v = vec![0.0; cols * cols];
    for i in 0..cols {
        v[i * cols + i] = 1.0;
    }

    // columns below this squared norm are numerically zero and left alone
    let frob2: f64 = a.iter().map(|x| x * x).sum();
    let floor = (f64::EPSILON * f64::EPSILON) * frob2;
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let (cp, cq) = (&w[p * rows..(p + 1) * rows], &w[q * rows..(q + 1) * rows]);
                let alpha: f64 = cp.iter().map(|x| x * x).sum();
                let beta: f64 = cq.iter().map(|x| x * x).sum();
                let gamma: f64 = cp.iter().zip(cq).map(|(x, y)| x * y).sum();
                if alpha <= floor || beta <= floor || gamma.abs() <= TOLERANCE * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, rows, p, q, c, s);
                rotate(&mut v, cols, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "Jacobi SVD did not converge within {MAX_SWEEPS} sweeps"
        )));
    }

    let mut sv: Vec<(f64, usize)> = (0..cols)
        .map(|c| {
            let col = &w[c * rows..(c + 1) * rows];
            (col.iter().map(|x| x * x).sum::<f64>().sqrt(), c)
        })
        .collect();
    sv.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut u_out = vec![0.0; rows * cols];
    let mut v_out = vec![0.0; cols * cols];
    let mut singular_values = Vec::with_capacity(cols);
    for (k, &(sigma, c)) in sv.iter().enumerate() {
        singular_values.push(sigma);
        if sigma > 0.0 {
            for r in 0..rows {
                u_out[k * rows + r] = w[c * rows + r] / sigma;
            }
        }
        v_out[k * cols..(k + 1) * cols].copy_from_slice(&v[c * cols..(c + 1) * cols]);
    }
    Ok(Svd {
        rows,
        cols,
        singular_values,
        u: u_out,
        v: v_out,
    })
}

fn rotate(m: &mut [f64], len: usize, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..len {
        let x = m[p * len + i];
        let y = m[q * len + i];
        m[p * len + i] = c * x - s * y;
        m[q * len + i] = s * x + c * y;
    }
}

/// Singular values only, descending.
pub fn singular_values(a: &[f64], rows: usize, cols: usize) -> Result<Vec<f64>> {
    Ok(svd(a, rows, cols)?.singular_values)
}

/// Rank-`n` reconstruction `Σ_{k<n} λ_k u_k v_kᵀ` of a square row-major patch.
pub fn low_rank_approx(patch: &[f64], side: usize, n: usize) -> Result<Vec<f64>> {
    if n == 0 || n > side {
        return Err(Error::invalid(format!(
            "rank {n} outside [1, {side}]"
        )));
    }
    let d = svd(patch, side, side)?;
    let mut out = vec![0.0; side * side];
    for k in 0..n {
        let lam = d.singular_values[k];
        let u = &d.u[k * side..(k + 1) * side];
        let v = &d.v[k * side..(k + 1) * side];
        for r in 0..side {
            for c in 0..side {
                out[r * side + c] += lam * u[r] * v[c];
            }
        }
    }
    Ok(out)
}

/// `log(1 + λ_k)` for the leading `dims` singular values, normalized to unit sum.
pub fn svd_feature(patch: &[f64], side: usize, dims: usize) -> Result<Vec<f64>> {
    if dims > side {
        return Err(Error::invalid(format!(
            "{dims} singular values requested from a {side}×{side} patch"
        )));
    }
    let sv = singular_values(patch, side, side)?;
    let raw = sv[..dims].iter().map(|&l| (1.0 + l).ln()).collect();
    Ok(super::normalize_sum(raw))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_patch() {
        let n = 9;
        let u: Vec<f64> = (0..n).map(|i| 0.1 + 0.05 * i as f64).collect();
        let v: Vec<f64> = (0..n).map(|i| 1.0 - 0.07 * i as f64).collect();
        let a: Vec<f64> = (0..n * n).map(|i| u[i / n] * v[i % n]).collect();
        let f = svd_feature(&a, n, 5).unwrap();
        assert!((f[0] - 1.0).abs() < 1e-9);
        assert!(f[1..].iter().all(|&x| x.abs() < 1e-9));
        let approx = low_rank_approx(&a, n, 1).unwrap();
        for (x, y) in a.iter().zip(&approx) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn permutation_patch_has_unit_singular_values() {
        let n = 13;
        // anti-identity is orthogonal
        let a: Vec<f64> = (0..n * n)
            .map(|i| if i / n + i % n == n - 1 { 1.0 } else { 0.0 })
            .collect();
        let sv = singular_values(&a, n, n).unwrap();
        assert!(sv.iter().all(|&s| (s - 1.0).abs() < 1e-12));
        let f = svd_feature(&a, n, 7).unwrap();
        assert!(f.iter().all(|&x| (x - 1.0 / 7.0).abs() < 1e-12));
    }

    #[test]
    fn zero_patch_feature_is_zero() {
        let f = svd_feature(&[0.0; 25], 5, 3).unwrap();
        assert_eq!(f, vec![0.0; 3]);
    }

    #[test]
    fn bad_shapes() {
        assert!(svd(&[0.0; 6], 2, 3).is_err());
        assert!(low_rank_approx(&[0.0; 9], 3, 0).is_err());
        assert!(low_rank_approx(&[0.0; 9], 3, 4).is_err());
        assert!(svd_feature(&[0.0; 9], 3, 4).is_err());
    }
}
