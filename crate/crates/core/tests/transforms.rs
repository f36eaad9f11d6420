mod common;

use approx::assert_abs_diff_eq;
use common::*;
use defocus::datagen::{blur_patch, BlurKernelSpec};
use defocus::features::{dct2, idct2, low_rank_approx, singular_values, svd};
use defocus::Rng;
use proptest::prelude::*;

#[test]
fn dct_matches_direct_sum() {
    let mut rng = Rng::new(11);
    for n in [8, 15] {
        for _ in 0..3 {
            let x = random_patch(n, &mut rng);
            let c = dct2(&x, n).unwrap();
            assert!(max_abs_diff(&c, &dct2_direct(&x, n)) < 1e-10);
            let e_x: f64 = x.iter().map(|v| v * v).sum();
            let e_c: f64 = c.iter().map(|v| v * v).sum();
            assert_abs_diff_eq!(e_x, e_c, epsilon = 1e-8);
            assert!(max_abs_diff(&idct2(&c, n).unwrap(), &x) < 1e-10);
        }
    }
}

#[test]
fn dct_of_constant_is_dc_only() {
    let n = 15;
    let c = dct2(&vec![0.4; n * n], n).unwrap();
    assert_abs_diff_eq!(c[0], 0.4 * n as f64, epsilon = 1e-12);
    assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn singular_values_match_gram_eigen() {
    let mut rng = Rng::new(12);
    for n in [5, 13, 15, 27] {
        let a = random_patch(n, &mut rng);
        let sv = singular_values(&a, n, n).unwrap();
        let oracle = singular_values_via_gram(&a, n, n);
        // the Gram route loses precision below √ε·λ₁, so compare squared values there
        for (s, o) in sv.iter().zip(&oracle) {
            assert!((s * s - o * o).abs() < 1e-8 * sv[0].max(1.0), "{s} vs {o}");
        }
        assert!(max_abs_diff(&sv[..3], &oracle[..3]) < 1e-8);
    }
}

#[test]
fn rectangular_svd_reconstructs() {
    let mut rng = Rng::new(13);
    let (r, c) = (9, 4);
    let a: Vec<f64> = (0..r * c).map(|_| rng.range(-1.0, 1.0)).collect();
    let d = svd(&a, r, c).unwrap();
    let oracle = singular_values_via_gram(&a, r, c);
    assert!(max_abs_diff(&d.singular_values, &oracle) < 1e-8);
    for i in 0..r {
        for j in 0..c {
            let v: f64 = (0..c).map(|k| d.singular_values[k] * d.u[k * r + i] * d.v[k * c + j]).sum();
            assert_abs_diff_eq!(v, a[i * c + j], epsilon = 1e-10);
        }
    }
}

#[test]
fn low_rank_error_is_discarded_energy() {
    let mut rng = Rng::new(14);
    let n = 15;
    let a = random_patch(n, &mut rng);
    let sv = singular_values(&a, n, n).unwrap();
    for k in [1, 3, 7, 14] {
        let approx = low_rank_approx(&a, n, k).unwrap();
        let err: f64 = a.iter().zip(&approx).map(|(x, y)| (x - y) * (x - y)).sum();
        let tail: f64 = sv[k..].iter().map(|l| l * l).sum();
        assert_abs_diff_eq!(err, tail, epsilon = 1e-8);
    }
    let full = low_rank_approx(&a, n, n).unwrap();
    assert!(max_abs_diff(&full, &a) < 1e-10);
}

#[test]
fn blur_patch_matches_naive_convolution() {
    let mut rng = Rng::new(15);
    let img = random_rgb(60, 60, &mut rng);
    for sigma in [0.5, 1.25, 2.0] {
        let k = BlurKernelSpec::new(sigma).unwrap();
        for size in [15, 27] {
            let fast = blur_patch(&img, 30, 29, size, &k).unwrap();
            let slow = blur_patch_direct(&img, 30, 29, size, sigma);
            assert!(max_abs_diff(fast.data(), slow.data()) < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dct_roundtrip_and_energy(values in prop::collection::vec(-1.0f64..1.0, 49)) {
        let c = dct2(&values, 7).unwrap();
        let back = idct2(&c, 7).unwrap();
        prop_assert!(max_abs_diff(&back, &values) < 1e-10);
        let e_x: f64 = values.iter().map(|v| v * v).sum();
        let e_c: f64 = c.iter().map(|v| v * v).sum();
        prop_assert!((e_x - e_c).abs() < 1e-9);
    }

    #[test]
    fn singular_values_sorted_and_match_frobenius(values in prop::collection::vec(-1.0f64..1.0, 36)) {
        let sv = singular_values(&values, 6, 6).unwrap();
        prop_assert!(sv.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(sv.iter().all(|&s| s >= 0.0));
        let fro: f64 = values.iter().map(|v| v * v).sum();
        let sum: f64 = sv.iter().map(|s| s * s).sum();
        prop_assert!((fro - sum).abs() < 1e-10);
    }
}
