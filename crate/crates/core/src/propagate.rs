//! Dense propagation of sparse defocus values through the matting Laplacian,
//! and random seeds for edge-free regions.

use crate::config::Config;
use crate::edges::{EdgeMap, PatchSample, Scale};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::Model;
use crate::par;
use crate::rng::Rng;
use crate::sparsemap::{classify_patches, SparseDefocusMap};

/// Square sparse matrix in compressed-row form with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from per-row `(column, value)` lists already sorted by column.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for r in rows {
            for (c, v) in r {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[a..b].iter().copied().zip(self.values[a..b].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.col_idx[a..b].binary_search(&j) {
            Ok(k) => self.values[a + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`, rows in parallel, each row summed in column order.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        par::fill_chunks(&mut y, 1024, |chunk, out| {
            for (k, yi) in out.iter_mut().enumerate() {
                *yi = self.row(chunk * 1024 + k).map(|(j, v)| v * x[j]).sum();
            }
        });
        y
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    /// `max |A(i,j) − A(j,i)|` over stored entries.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Row-major dense copy, for tests on small systems.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[i * self.n + j] = v;
            }
        }
        d
    }
}

/// Mean color and `(Σ + ε/|w| I)⁻¹` of one 3×3 window.
#[derive(Debug, Clone, Copy)]
struct WindowStats {
    mean: [f64; 3],
    inv: [[f64; 3]; 3],
}

const WIN: usize = 9;

fn window_stats(guide: &Image, cx: usize, cy: usize, eps: f64) -> WindowStats {
    let mut mean = [0.0; 3];
    for y in cy - 1..=cy + 1 {
        for x in cx - 1..=cx + 1 {
            let p = guide.rgb(x, y);
            for c in 0..3 {
                mean[c] += p[c];
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= WIN as f64);
    let mut cov = [[0.0; 3]; 3];
    for y in cy - 1..=cy + 1 {
        for x in cx - 1..=cx + 1 {
            let p = guide.rgb(x, y);
            for a in 0..3 {
                for b in a..3 {
                    cov[a][b] += (p[a] - mean[a]) * (p[b] - mean[b]);
                }
            }
        }
    }
    for a in 0..3 {
        for b in a..3 {
            cov[a][b] /= WIN as f64;
            cov[b][a] = cov[a][b];
        }
        cov[a][a] += eps / WIN as f64;
    }
    WindowStats {
        mean,
        inv: inverse_sym3(&cov),
    }
}

/// Inverse of a symmetric positive definite 3×3 matrix via the adjugate,
/// symmetric by construction.
fn inverse_sym3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c00 = m[1][1] * m[2][2] - m[1][2] * m[1][2];
    let c01 = m[0][2] * m[1][2] - m[0][1] * m[2][2];
    let c02 = m[0][1] * m[1][2] - m[0][2] * m[1][1];
    let c11 = m[0][0] * m[2][2] - m[0][2] * m[0][2];
    let c12 = m[0][1] * m[0][2] - m[0][0] * m[1][2];
    let c22 = m[0][0] * m[1][1] - m[0][1] * m[0][1];
    let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
    let d = 1.0 / det;
    [
        [c00 * d, c01 * d, c02 * d],
        [c01 * d, c11 * d, c12 * d],
        [c02 * d, c12 * d, c22 * d],
    ]
}

/// `aᵀ M b` with the sum ordered symmetrically in `a` and `b`, so swapping
/// them gives a bit-identical result.
fn bilinear(m: &[[f64; 3]; 3], a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let mut s = 0.0;
    for r in 0..3 {
        s += m[r][r] * (a[r] * b[r]);
    }
    for r in 0..3 {
        for c in r + 1..3 {
            s += m[r][c] * (a[r] * b[c] + a[c] * b[r]);
        }
    }
    s
}

/// The matting Laplacian over all fully interior 3×3 windows:
///
/// ```text
/// L(i,j) = Σ_{k | (i,j) ∈ w_k} δ_ij − (1 + (I_i − μ_k)ᵀ (Σ_k + ε/|w_k| I₃)⁻¹ (I_j − μ_k)) / |w_k|
/// ```
///
/// Window statistics are computed in parallel; rows are then assembled in
/// parallel, each summing its windows in raster order.
pub fn matting_laplacian(guide: &Image, epsilon: f64) -> Result<SparseMatrix> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("matting epsilon must be positive"));
    }
    if guide.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("guidance image has non-finite values"));
    }
    let guide = guide.to_rgb();
    let (w, h) = (guide.width(), guide.height());
    let n = w * h;
    if w < 3 || h < 3 {
        return Ok(SparseMatrix::from_rows(vec![Vec::new(); n]));
    }
    let (ww, wh) = (w - 2, h - 2);
    let stats = par::map_range(ww * wh, |k| window_stats(&guide, k % ww + 1, k / ww + 1, epsilon));
    let rows = par::map_range(n, |i| {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        let mut acc = [0.0f64; 25];
        let mut touched = [false; 25];
        let pi = guide.rgb(x as usize, y as usize);
        for cy in (y - 1).max(1)..=(y + 1).min(h as i64 - 2) {
            for cx in (x - 1).max(1)..=(x + 1).min(w as i64 - 2) {
                let st = &stats[(cy as usize - 1) * ww + cx as usize - 1];
                let ai = [pi[0] - st.mean[0], pi[1] - st.mean[1], pi[2] - st.mean[2]];
                for jy in cy - 1..=cy + 1 {
                    for jx in cx - 1..=cx + 1 {
                        let pj = guide.rgb(jx as usize, jy as usize);
                        let aj = [pj[0] - st.mean[0], pj[1] - st.mean[1], pj[2] - st.mean[2]];
                        let delta = if jx == x && jy == y { 1.0 } else { 0.0 };
                        let slot = ((jy - y + 2) * 5 + (jx - x + 2)) as usize;
                        acc[slot] += delta - (1.0 + bilinear(&st.inv, &ai, &aj)) / WIN as f64;
                        touched[slot] = true;
                    }
                }
            }
        }
        let mut row = Vec::new();
        for dy in -2..=2i64 {
            for dx in -2..=2i64 {
                let slot = ((dy + 2) * 5 + dx + 2) as usize;
                if touched[slot] {
                    row.push((((y + dy) * w as i64 + x + dx) as usize, acc[slot]));
                }
            }
        }
        row
    });
    Ok(SparseMatrix::from_rows(rows))
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone)]
pub struct CgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final `‖r‖ / ‖b‖`.
    pub residual: f64,
    /// `‖r‖ / ‖b‖` after every iteration, starting with the initial guess.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned CG on `(A + diag(d)) x = b`, from `x0`.
pub fn conjugate_gradient(a: &SparseMatrix, d: &[f64], b: &[f64], x0: Vec<f64>, tol: f64, max_iter: usize) -> Result<CgResult> {
    let n = a.n;
    if d.len() != n || b.len() != n || x0.len() != n {
        return Err(Error::shape(n, b.len()));
    }
    let apply = |v: &[f64]| -> Vec<f64> {
        let mut y = a.matvec(v);
        for i in 0..n {
            y[i] += d[i] * v[i];
        }
        y
    };
    let diag: Vec<f64> = a.diagonal().iter().zip(d).map(|(x, y)| x + y).collect();
    if diag.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Numeric("system has a non-positive diagonal entry".into()));
    }
    let bnorm = dot(b, b).sqrt();
    let mut x = x0;
    if bnorm == 0.0 {
        return Ok(CgResult {
            x: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
            history: vec![0.0],
        });
    }
    let ax = apply(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut res = dot(&r, &r).sqrt() / bnorm;
    let mut history = vec![res];
    let mut it = 0;
    while res >= tol {
        if it >= max_iter {
            return Err(Error::Convergence {
                iterations: it,
                residual: res,
            });
        }
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Numeric("system is not positive definite".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        it += 1;
        res = dot(&r, &r).sqrt() / bnorm;
        history.push(res);
    }
    Ok(CgResult {
        x,
        iterations: it,
        residual: res,
        history,
    })
}

/// Solves `(L + D_γ) î_F = γ î_B` where `D_γ(i,i) = γ` on the support of
/// `I_B`, then clamps to `[lo, hi]`. CG starts from the support mean.
pub fn solve_propagation(l: &SparseMatrix, ib: &SparseDefocusMap, gamma: f64, tol: f64, lo: f64, hi: f64) -> Result<(Image, CgResult)> {
    let n = ib.width * ib.height;
    if l.n != n {
        return Err(Error::shape(n, l.n));
    }
    if !(gamma > 0.0) {
        return Err(Error::invalid("gamma must be positive"));
    }
    let support = ib.support();
    if support.is_empty() {
        return Err(Error::invalid("propagation needs at least one sparse estimate"));
    }
    let d: Vec<f64> = ib.sigma.iter().map(|&s| if s > 0.0 { gamma } else { 0.0 }).collect();
    let b: Vec<f64> = ib.sigma.iter().map(|&s| gamma * s).collect();
    let (smin, smax) = support
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &i| (a.min(ib.sigma[i]), b.max(ib.sigma[i])));
    // rounding in the sum must not move a uniform support off its value
    let mean = (support.iter().map(|&i| ib.sigma[i]).sum::<f64>() / support.len() as f64).clamp(smin, smax);
    let cg = conjugate_gradient(l, &d, &b, vec![mean; n], tol, 10 * n.max(1))?;
    let data = cg.x.iter().map(|v| v.clamp(lo, hi)).collect();
    Ok((Image::new(ib.width, ib.height, 1, data)?, cg))
}

/// Exact Euclidean distance from every pixel to the nearest edge pixel
/// (separable lower-envelope transform). Infinite when there are no edges.
pub fn distance_to_edges(edges: &EdgeMap) -> Vec<f64> {
    let (w, h) = (edges.width(), edges.height());
    let inf = 1e20;
    let mut f: Vec<f64> = (0..w * h)
        .map(|i| if edges.is_edge(i % w, i / w) { 0.0 } else { inf })
        .collect();
    for x in 0..w {
        let col: Vec<f64> = (0..h).map(|y| f[y * w + x]).collect();
        let d = dt_1d(&col);
        for y in 0..h {
            f[y * w + x] = d[y];
        }
    }
    for y in 0..h {
        let d = dt_1d(&f[y * w..(y + 1) * w]);
        f[y * w..(y + 1) * w].copy_from_slice(&d);
    }
    f.into_iter()
        .map(|v| if v >= inf { f64::INFINITY } else { v.sqrt() })
        .collect()
}

/// 1-D squared distance transform of a sampled function.
fn dt_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    if n == 0 {
        return Vec::new();
    }
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let s_of = |p: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
        let mut s = s_of(v[k]);
        // z[0] = −∞ stops the pop loop at k = 0
        while s <= z[k] {
            k -= 1;
            s = s_of(v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, dq) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let diff = q as f64 - p as f64;
        *dq = diff * diff + f[p];
    }
    d
}

/// Candidate seed positions: one jittered point per grid cell, kept when it is
/// farther than `min_distance` from every edge and its large patch fits.
pub fn seed_positions(edges: &EdgeMap, cfg: &Config, rng: &mut Rng) -> Vec<(usize, usize)> {
    let (w, h) = (edges.width(), edges.height());
    let g = cfg.seed_grid.max(1);
    let jitter = cfg.seed_jitter as i64;
    let half = cfg.large_patch / 2;
    let dist = distance_to_edges(edges);
    let mut out = Vec::new();
    for gy in 0..h.div_ceil(g) {
        for gx in 0..w.div_ceil(g) {
            let jx = rng.int_inclusive(-jitter, jitter);
            let jy = rng.int_inclusive(-jitter, jitter);
            let x = (gx * g + g / 2) as i64 + jx;
            let y = (gy * g + g / 2) as i64 + jy;
            // stay in this cell so the count bound holds
            let x = x.clamp((gx * g) as i64, ((gx + 1) * g).min(w) as i64 - 1);
            let y = y.clamp((gy * g) as i64, ((gy + 1) * g).min(h) as i64 - 1);
            let (x, y) = (x as usize, y as usize);
            if x < half || y < half || x + half >= w || y + half >= h {
                continue;
            }
            if dist[y * w + x] > cfg.seed_min_distance {
                out.push((x, y));
            }
        }
    }
    out
}

/// Classifies large patches at [`seed_positions`] and inserts them into
/// `sparse` (existing entries are kept). Returns the number added.
pub fn add_random_seeds(sparse: &mut SparseDefocusMap, edges: &EdgeMap, img: &Image, model: &Model, cfg: &Config, rng: &mut Rng) -> Result<usize> {
    let rgb = img.to_rgb();
    let samples: Vec<PatchSample> = seed_positions(edges, cfg, rng)
        .into_iter()
        .filter(|&(x, y)| !sparse.is_set(x, y))
        .filter_map(|(x, y)| PatchSample::crop(&rgb, x, y, Scale::Large, cfg.large_patch, 0.0))
        .collect();
    for (s, c) in samples.iter().zip(classify_patches(model, &samples)?) {
        sparse.set(s.x, s.y, c.sigma, c.confidence)?;
    }
    Ok(samples.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edges::{canny, CannyParams};

    fn random_guide(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = Rng::new(seed);
        Image::new(w, h, 3, (0..w * h * 3).map(|_| rng.uniform()).collect()).unwrap()
    }

    #[test]
    fn laplacian_rows_sum_to_zero_and_symmetric() {
        let l = matting_laplacian(&random_guide(9, 7, 1), 1e-5).unwrap();
        assert!(l.row_sums().iter().all(|s| s.abs() < 1e-8));
        assert_eq!(l.max_asymmetry(), 0.0);
    }

    #[test]
    fn tiny_images_have_empty_laplacian() {
        let l = matting_laplacian(&Image::filled(1, 1, 3, 0.5), 1e-5).unwrap();
        assert_eq!((l.n, l.nnz()), (1, 0));
        let mut ib = SparseDefocusMap::new(1, 1);
        ib.set(0, 0, 1.25, 0.9).unwrap();
        let (f, _) = solve_propagation(&l, &ib, 0.005, 1e-6, 0.5, 2.0).unwrap();
        assert!((f.data()[0] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn full_constant_support_is_exact() {
        let g = random_guide(8, 8, 2);
        let l = matting_laplacian(&g, 1e-5).unwrap();
        let mut ib = SparseDefocusMap::new(8, 8);
        for y in 0..8 {
            for x in 0..8 {
                ib.set(x, y, 1.1, 1.0).unwrap();
            }
        }
        let (f, cg) = solve_propagation(&l, &ib, 0.005, 1e-6, 0.5, 2.0).unwrap();
        assert!(f.data().iter().all(|&v| (v - 1.1).abs() < 1e-12));
        assert!(cg.iterations <= 1);
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let img = Image::from_fn_gray(23, 17, |x, y| if (x / 5 + y / 4) % 2 == 0 { 0.0 } else { 1.0 });
        let e = canny(&img, &CannyParams { sigma: 1.0, low: 0.08, high: 0.2, mid: None }).unwrap();
        let d = distance_to_edges(&e);
        let pts: Vec<(usize, usize)> = (0..23 * 17)
            .filter(|&i| e.is_edge(i % 23, i / 23))
            .map(|i| (i % 23, i / 23))
            .collect();
        assert!(!pts.is_empty());
        for i in 0..23 * 17 {
            let (x, y) = ((i % 23) as f64, (i / 23) as f64);
            let best = pts
                .iter()
                .map(|&(px, py)| ((px as f64 - x).powi(2) + (py as f64 - y).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!((d[i] - best).abs() < 1e-9, "pixel {i}: {} vs {best}", d[i]);
        }
    }

    #[test]
    fn no_edges_means_infinite_distance() {
        let e = canny(&Image::filled(10, 10, 1, 0.5), &CannyParams { sigma: 1.0, low: 0.08, high: 0.2, mid: None }).unwrap();
        assert!(distance_to_edges(&e).iter().all(|d| d.is_infinite()));
    }

    #[test]
    fn seed_count_bound() {
        let cfg = Config::default();
        let e = canny(&Image::filled(100, 70, 1, 0.5), &CannyParams::from_config(&cfg)).unwrap();
        let s = seed_positions(&e, &cfg, &mut Rng::new(1));
        assert!(!s.is_empty());
        assert!(s.len() <= (100 * 70usize).div_ceil(16 * 16));
    }
}
