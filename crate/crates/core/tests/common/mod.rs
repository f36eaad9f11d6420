//! Direct, slow reference implementations used as test oracles.
#![allow(dead_code)]

use std::f64::consts::PI;

use defocus::sparsemap::{BilateralParams, SparseDefocusMap};
use defocus::{Image, Rng};

pub fn random_patch(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n * n).map(|_| rng.uniform()).collect()
}

pub fn random_rgb(w: usize, h: usize, rng: &mut Rng) -> Image {
    let data = (0..w * h * 3).map(|_| rng.uniform()).collect();
    Image::new(w, h, 3, data).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Orthonormal DCT-II by the quadruple sum.
pub fn dct2_direct(x: &[f64], n: usize) -> Vec<f64> {
    let a = |k: usize| if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
    let mut out = vec![0.0; n * n];
    for u in 0..n {
        for v in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += x[i * n + j]
                        * (PI * (2 * i + 1) as f64 * u as f64 / (2 * n) as f64).cos()
                        * (PI * (2 * j + 1) as f64 * v as f64 / (2 * n) as f64).cos();
                }
            }
            out[u * n + v] = a(u) * a(v) * s;
        }
    }
    out
}

/// Eigenvalues of a symmetric matrix by cyclic two-sided Jacobi rotations,
/// descending.
pub fn sym_eigenvalues(m: &[f64], n: usize) -> Vec<f64> {
    let mut a = m.to_vec();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    ev.sort_by(|x, y| y.partial_cmp(x).unwrap());
    ev
}

/// Singular values as square roots of the eigenvalues of `AᵀA`.
pub fn singular_values_via_gram(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut g = vec![0.0; cols * cols];
    for i in 0..cols {
        for j in 0..cols {
            g[i * cols + j] = (0..rows).map(|r| a[r * cols + i] * a[r * cols + j]).sum();
        }
    }
    sym_eigenvalues(&g, cols).into_iter().map(|e| e.max(0.0).sqrt()).collect()
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn invert(m: &[f64], n: usize) -> Vec<f64> {
    let mut a = m.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x * n + col].abs().partial_cmp(&a[y * n + col].abs()).unwrap()).unwrap();
        for k in 0..n {
            a.swap(col * n + k, piv * n + k);
            inv.swap(col * n + k, piv * n + k);
        }
        let d = a[col * n + col];
        for k in 0..n {
            a[col * n + k] /= d;
            inv[col * n + k] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = a[r * n + col];
                for k in 0..n {
                    a[r * n + k] -= f * a[col * n + k];
                    inv[r * n + k] -= f * inv[col * n + k];
                }
            }
        }
    }
    inv
}

/// Dense solve `A x = b` by Gaussian elimination with partial pivoting.
pub fn dense_solve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let piv = (col..n).max_by(|&p, &q| m[p * n + col].abs().partial_cmp(&m[q * n + col].abs()).unwrap()).unwrap();
        for k in 0..n {
            m.swap(col * n + k, piv * n + k);
        }
        x.swap(col, piv);
        for r in col + 1..n {
            let f = m[r * n + col] / m[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[r * n + k] -= f * m[col * n + k];
            }
            x[r] -= f * x[col];
        }
    }
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| m[r * n + k] * x[k]).sum();
        x[r] = (x[r] - s) / m[r * n + r];
    }
    x
}

/// Matting Laplacian assembled window by window into a dense matrix.
pub fn naive_laplacian(guide: &Image, eps: f64) -> Vec<f64> {
    let (w, h) = (guide.width(), guide.height());
    let n = w * h;
    let mut l = vec![0.0; n * n];
    for cy in 1..h - 1 {
        for cx in 1..w - 1 {
            let idx: Vec<usize> = (0..9).map(|k| (cy + k / 3 - 1) * w + cx + k % 3 - 1).collect();
            let px: Vec<[f64; 3]> = idx.iter().map(|&i| guide.rgb(i % w, i / w)).collect();
            let mut mu = [0.0; 3];
            for p in &px {
                for c in 0..3 {
                    mu[c] += p[c] / 9.0;
                }
            }
            let mut cov = vec![0.0; 9];
            for a in 0..3 {
                for b in 0..3 {
                    cov[a * 3 + b] = px.iter().map(|p| p[a] * p[b]).sum::<f64>() / 9.0 - mu[a] * mu[b];
                }
                cov[a * 3 + a] += eps / 9.0;
            }
            let inv = invert(&cov, 3);
            for (ii, &i) in idx.iter().enumerate() {
                for (jj, &j) in idx.iter().enumerate() {
                    let mut q = 0.0;
                    for a in 0..3 {
                        for b in 0..3 {
                            q += (px[ii][a] - mu[a]) * inv[a * 3 + b] * (px[jj][b] - mu[b]);
                        }
                    }
                    let delta = if i == j { 1.0 } else { 0.0 };
                    l[i * n + j] += delta - (1.0 + q) / 9.0;
                }
            }
        }
    }
    l
}

/// The probability-joint bilateral filter by direct summation over every
/// support pair.
pub fn bilateral_direct(sparse: &SparseDefocusMap, guide: &Image, p: &BilateralParams) -> Vec<f64> {
    let w = sparse.width;
    let support: Vec<usize> = (0..sparse.sigma.len()).filter(|&i| sparse.sigma[i] > 0.0).collect();
    let mut out = sparse.sigma.clone();
    for &i in &support {
        let (xi, yi) = ((i % w) as f64, (i / w) as f64);
        let gi = guide.pixel(i % w, i / w);
        let (mut num, mut den) = (0.0, 0.0);
        for &j in &support {
            let (xj, yj) = ((j % w) as f64, (j / w) as f64);
            let dist = ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt();
            if dist > p.radius as f64 {
                continue;
            }
            let gj = guide.pixel(j % w, j / w);
            let cd: f64 = gi.iter().zip(gj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let wgt = gauss(dist, p.sigma_s) * gauss(cd, p.sigma_r) * gauss(1.0 - sparse.confidence[j], p.sigma_c);
            num += wgt * sparse.sigma[j];
            den += wgt;
        }
        out[i] = num / den;
    }
    out
}

fn gauss(d: f64, s: f64) -> f64 {
    (-d * d / (2.0 * s * s)).exp()
}

/// Rolling guidance on a 1-D gray profile: Gaussian blur then joint bilateral
/// passes, each with truncated, renormalized windows of radius `⌈3σ_s⌉`.
/// `channels` scales the squared range distance for a gray image replicated
/// across color channels.
pub fn rolling_guidance_1d(input: &[f64], sigma_s: f64, sigma_r: f64, iterations: usize, channels: f64) -> Vec<f64> {
    let n = input.len() as i64;
    let r = (3.0 * sigma_s).ceil() as i64;
    let filt = |guide: Option<&[f64]>| -> Vec<f64> {
        (0..n)
            .map(|x| {
                let (mut num, mut den) = (0.0, 0.0);
                for d in -r..=r {
                    let s = x + d;
                    if s < 0 || s >= n {
                        continue;
                    }
                    let mut wgt = gauss(d as f64, sigma_s);
                    if let Some(g) = guide {
                        let dg = g[x as usize] - g[s as usize];
                        wgt *= (-channels * dg * dg / (2.0 * sigma_r * sigma_r)).exp();
                    }
                    num += wgt * input[s as usize];
                    den += wgt;
                }
                num / den
            })
            .collect()
    };
    let mut g = filt(None);
    for _ in 1..iterations {
        g = filt(Some(&g));
    }
    g
}

/// Naive 2-D Gaussian convolution of the patch centered at `(cx, cy)`, with
/// taps normalized over the full `(2r+1)²` support and the result clamped.
pub fn blur_patch_direct(img: &Image, cx: usize, cy: usize, size: usize, sigma: f64) -> Image {
    let r = (3.0 * sigma).ceil() as i64;
    let mut taps = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            taps.push((dx, dy, (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp()));
        }
    }
    let total: f64 = taps.iter().map(|t| t.2).sum();
    let half = (size / 2) as i64;
    let c = img.channels();
    let mut data = Vec::with_capacity(size * size * c);
    for py in 0..size as i64 {
        for px in 0..size as i64 {
            let (x, y) = (cx as i64 - half + px, cy as i64 - half + py);
            for ch in 0..c {
                let s: f64 = taps
                    .iter()
                    .map(|&(dx, dy, t)| t * img.get((x + dx) as usize, (y + dy) as usize, ch))
                    .sum();
                data.push((s / total).clamp(0.0, 1.0));
            }
        }
    }
    Image::new(size, size, c, data).unwrap()
}
