mod common;

use common::*;
use defocus::nn::gradcheck::check_all_layers;
use defocus::sparsemap::{prob_joint_bilateral, rolling_guidance, BilateralParams, SparseDefocusMap};
use defocus::{Image, Rng};

fn defaults() -> BilateralParams {
    BilateralParams {
        sigma_s: 100.0,
        sigma_r: 100.0,
        sigma_c: 1.0,
        radius: 15,
    }
}

fn random_support(w: usize, h: usize, count: usize, rng: &mut Rng) -> SparseDefocusMap {
    let mut m = SparseDefocusMap::new(w, h);
    while m.support_len() < count {
        m.set(rng.index(w), rng.index(h), rng.range(0.5, 2.0), rng.range(0.05, 1.0)).unwrap();
    }
    m
}

#[test]
fn bilateral_matches_direct_sum() {
    let mut rng = Rng::new(31);
    let narrow = BilateralParams {
        sigma_s: 4.0,
        sigma_r: 0.3,
        sigma_c: 0.5,
        radius: 6,
    };
    for params in [defaults(), narrow] {
        for (w, h, count) in [(30, 30, 200), (40, 25, 120), (12, 12, 1)] {
            let sparse = random_support(w, h, count, &mut rng);
            let guide = random_rgb(w, h, &mut rng);
            let fast = prob_joint_bilateral(&sparse, &guide, &params).unwrap();
            let slow = bilateral_direct(&sparse, &guide, &params);
            assert!(max_abs_diff(&fast.sigma, &slow) < 1e-10);
            assert_eq!(fast.support(), sparse.support());
            assert_eq!(fast.confidence, sparse.confidence);
        }
    }
}

#[test]
fn bilateral_output_is_convex_combination() {
    let mut rng = Rng::new(32);
    let sparse = random_support(32, 32, 150, &mut rng);
    let guide = random_rgb(32, 32, &mut rng);
    let out = prob_joint_bilateral(&sparse, &guide, &defaults()).unwrap();
    let vals: Vec<f64> = sparse.support().iter().map(|&i| sparse.sigma[i]).collect();
    let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    for i in sparse.support() {
        assert!(out.sigma[i] >= lo - 1e-12 && out.sigma[i] <= hi + 1e-12);
    }
}

fn profile_image(profile: &[f64], rows: usize) -> Image {
    Image::from_fn_gray(profile.len(), rows, |x, _| profile[x]).to_rgb()
}

#[test]
fn rolling_guidance_matches_1d_oracle_and_keeps_steps() {
    let profile: Vec<f64> = (0..80).map(|x| if x < 40 { 0.2 } else { 0.8 }).collect();
    let out = rolling_guidance(&profile_image(&profile, 12), 3.0, 0.1, 4).unwrap();
    let oracle = rolling_guidance_1d(&profile, 3.0, 0.1, 4, 3.0);
    for y in 0..12 {
        let row: Vec<f64> = (0..80).map(|x| out.get(x, y, 0)).collect();
        assert!(max_abs_diff(&row, &oracle) < 1e-10);
    }
    let height = 0.6;
    for x in (0..37).chain(43..80) {
        assert!((oracle[x] - profile[x]).abs() <= 0.05 * height, "x = {x}: {}", oracle[x]);
    }
    assert!(oracle[42] - oracle[37] >= 0.95 * height);
}

#[test]
fn rolling_guidance_removes_small_texture() {
    let amp = 0.02;
    let profile: Vec<f64> = (0..96).map(|x| 0.5 + if x % 2 == 0 { amp } else { -amp }).collect();
    let out = rolling_guidance(&profile_image(&profile, 10), 3.0, 0.1, 4).unwrap();
    let oracle = rolling_guidance_1d(&profile, 3.0, 0.1, 4, 3.0);
    let row: Vec<f64> = (0..96).map(|x| out.get(x, 5, 0)).collect();
    assert!(max_abs_diff(&row, &oracle) < 1e-10);
    let inner = &row[12..84];
    let (lo, hi) = inner.iter().fold((1.0f64, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    assert!((hi - lo) / 2.0 <= 0.1 * amp, "residual amplitude {}", (hi - lo) / 2.0);
}

#[test]
fn every_layer_passes_gradient_check() {
    for seed in [1, 2, 3] {
        for r in check_all_layers(seed).unwrap() {
            assert!(r.max_rel_error < 1e-4, "{}: {}", r.name, r.max_rel_error);
            assert!(r.checked > 0);
        }
    }
}
