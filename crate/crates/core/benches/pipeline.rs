use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use defocus::datagen::half_blurred_scene;
use defocus::edges::{canny, extract_patches, CannyParams};
use defocus::image::value_channel;
use defocus::propagate::{matting_laplacian, solve_propagation};
use defocus::sparsemap::{classify_to_sparse, prob_joint_bilateral, rolling_guidance, BilateralParams};
use defocus::{estimate, par, Config, Model, Rng};

fn pools() -> Vec<(&'static str, usize)> {
    vec![("1-thread", 1), ("default", par::current_threads())]
}

fn stages(c: &mut Criterion) {
    let cfg = Config::default();
    let model = Model::new(&cfg, &mut Rng::new(cfg.seed)).unwrap();
    let (img, _) = half_blurred_scene(96, 96, 2.0, &mut Rng::new(1));
    let edges = canny(&value_channel(&img).unwrap(), &CannyParams::from_config(&cfg)).unwrap();
    let samples = extract_patches(&img, &edges, &cfg);
    let sparse = classify_to_sparse(&model, &samples, 96, 96).unwrap();
    let guide = rolling_guidance(&img, cfg.rgf_sigma_s, cfg.rgf_sigma_r, cfg.rgf_iterations).unwrap();
    let filtered = prob_joint_bilateral(&sparse, &guide, &BilateralParams::from_config(&cfg)).unwrap();
    let lap = matting_laplacian(&guide, cfg.matting_epsilon).unwrap();

    let mut g = c.benchmark_group("stages");
    g.sample_size(10);
    for (name, threads) in pools() {
        g.bench_function(BenchmarkId::new("classify", name), |b| {
            b.iter(|| par::with_threads(threads, || classify_to_sparse(&model, &samples, 96, 96).unwrap()))
        });
        g.bench_function(BenchmarkId::new("rolling_guidance", name), |b| {
            b.iter(|| {
                par::with_threads(threads, || {
                    rolling_guidance(&img, cfg.rgf_sigma_s, cfg.rgf_sigma_r, cfg.rgf_iterations).unwrap()
                })
            })
        });
        g.bench_function(BenchmarkId::new("bilateral", name), |b| {
            b.iter(|| {
                par::with_threads(threads, || {
                    prob_joint_bilateral(&sparse, &guide, &BilateralParams::from_config(&cfg)).unwrap()
                })
            })
        });
        g.bench_function(BenchmarkId::new("laplacian", name), |b| {
            b.iter(|| par::with_threads(threads, || matting_laplacian(&guide, cfg.matting_epsilon).unwrap()))
        });
        g.bench_function(BenchmarkId::new("solve", name), |b| {
            b.iter(|| {
                par::with_threads(threads, || {
                    solve_propagation(&lap, &filtered, cfg.gamma, cfg.cg_tolerance, 0.5, 2.0).unwrap()
                })
            })
        });
    }
    g.finish();
}

fn end_to_end(c: &mut Criterion) {
    let cfg = Config::default();
    let model = Model::new(&cfg, &mut Rng::new(cfg.seed)).unwrap();
    let (img, _) = half_blurred_scene(96, 96, 2.0, &mut Rng::new(2));
    let mut g = c.benchmark_group("estimate");
    g.sample_size(10);
    for (name, threads) in pools() {
        g.bench_function(name, |b| b.iter(|| par::with_threads(threads, || estimate(&img, &model, &cfg).unwrap())));
    }
    g.finish();
}

criterion_group!(benches, stages, end_to_end);
criterion_main!(benches);
