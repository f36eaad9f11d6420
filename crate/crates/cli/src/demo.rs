use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use defocus::apps::BinaryMask;
use defocus::datagen::{half_blurred_scene, synth_texture};
use defocus::features::FeatureKind;
use defocus::io::save_image;
use defocus::nn::{train_on_images, SIGMA_TOLERANCE};
use defocus::{estimate, Config, Rng};

use crate::commands::{ensure_parent, evaluate_pairs, loss_csv, save_estimate, write_text};

#[derive(Debug, Clone, Args)]
pub struct DemoArgs {
    /// Output directory for the artifact bundle.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of procedural training images.
    #[arg(long, default_value_t = 20)]
    pub images: usize,
    /// Side of the training images and test scenes.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// Number of half-blurred test scenes.
    #[arg(long, default_value_t = 5)]
    pub scenes: usize,
    /// Blur of the out-of-focus half of each test scene.
    #[arg(long, default_value_t = 2.0)]
    pub scene_sigma: f64,
}

/// Headline numbers of a demo run.
#[derive(Debug, Clone)]
pub struct DemoSummary {
    pub report: PathBuf,
    pub model: PathBuf,
    pub accuracies: Vec<(FeatureKind, f64)>,
    pub segmentation_accuracy: f64,
}

const CORPUS_STREAM: u64 = 0xc0;
const SCENE_STREAM: u64 = 0x5c;

/// Procedural corpus → training → estimates on held-out scenes → evaluation
/// → `report.txt`. The report holds no timings, so equal seeds and configs
/// give byte-identical reports.
pub fn run_demo(args: &DemoArgs, cfg: &Config) -> Result<DemoSummary> {
    let mut cfg = cfg.clone();
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    if args.images < 2 || args.scenes == 0 {
        anyhow::bail!("the demo needs at least 2 images and 1 scene");
    }
    let out = &args.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let root = Rng::new(cfg.seed);

    let mut rng = root.fork(CORPUS_STREAM);
    let images: Vec<_> = (0..args.images).map(|_| synth_texture(args.size, args.size, &mut rng)).collect();
    for (i, img) in images.iter().enumerate() {
        let p = out.join("corpus").join(format!("img_{i:02}.png"));
        ensure_parent(&p)?;
        save_image(img, &p)?;
    }
    log::info!("generated {} training images", images.len());

    let run = train_on_images(&images, &cfg)?;
    let model_path = out.join("model.dfk");
    run.suite.model.save(&model_path)?;
    write_text(&out.join("loss.csv"), &loss_csv(&run.suite.history))?;

    let mut pairs = Vec::new();
    for k in 0..args.scenes {
        let mut r = root.fork(SCENE_STREAM + k as u64);
        let (img, gt) = half_blurred_scene(args.size, args.size, args.scene_sigma, &mut r);
        let name = format!("scene_{k:02}");
        let dir = out.join("scenes");
        ensure_parent(&dir.join(&name))?;
        save_image(&img, &dir.join(format!("{name}.png")))?;
        let gt = BinaryMask::new(args.size, args.size, gt)?;
        save_image(&gt.to_image(), &dir.join(format!("{name}_gt.pgm")))?;
        let est = estimate(&img, &run.suite.model, &cfg).with_context(|| format!("estimating {name}"))?;
        save_estimate(&est, &dir.join(&name), &cfg)?;
        save_image(
            &defocus::apps::segment(&est.dense, cfg.alpha)?.to_image(),
            &dir.join(format!("{name}_mask.pgm")),
        )?;
        pairs.push((name, est.dense, gt));
    }
    let ev = evaluate_pairs(&pairs, &cfg)?;
    write_text(&out.join("metrics.csv"), &ev.csv())?;
    write_text(&out.join("pr.csv"), &ev.pr.to_csv())?;

    let order = [
        FeatureKind::Dct,
        FeatureKind::Gradient,
        FeatureKind::Svd,
        FeatureKind::Handcrafted,
        FeatureKind::Deep,
        FeatureKind::Concatenated,
    ];
    let accuracies: Vec<(FeatureKind, f64)> = order
        .iter()
        .filter_map(|&k| run.suite.accuracy(k).map(|a| (k, a)))
        .collect();

    let mut r = String::new();
    let _ = writeln!(r, "defocus demo report");
    let _ = writeln!(r, "seed: {}", cfg.seed);
    let _ = writeln!(r, "training images: {} ({}x{})", args.images, args.size, args.size);
    let _ = writeln!(
        r,
        "sharp patches: {} train, {} held out",
        run.stats.sharp_train, run.stats.sharp_test
    );
    let _ = writeln!(
        r,
        "samples: {} train, {} held out",
        run.stats.train_samples, run.stats.test_samples
    );
    let _ = writeln!(r);
    let _ = writeln!(r, "[feature accuracy] held-out, |sigma error| <= {SIGMA_TOLERANCE}");
    for (k, a) in &accuracies {
        let _ = writeln!(r, "{:<4} {:<13} {:>7.2}%", k.symbol(), k.name(), 100.0 * a);
    }
    let _ = writeln!(r);
    let _ = writeln!(
        r,
        "[segmentation] {} scenes, sigma {}, alpha {}",
        args.scenes, args.scene_sigma, cfg.alpha
    );
    for (name, a) in &ev.rows {
        let _ = writeln!(r, "{name} {a:.4}");
    }
    let _ = writeln!(r, "mean {:.4}", ev.mean);
    let _ = writeln!(r, "recall monotone in tau: {}", ev.pr.recall_monotone());
    let _ = writeln!(r);
    let _ = writeln!(r, "[config]");
    r.push_str(&cfg.render());

    let report = out.join("report.txt");
    write_text(&report, &r)?;
    print!("{r}");
    Ok(DemoSummary {
        report,
        model: model_path,
        accuracies,
        segmentation_accuracy: ev.mean,
    })
}
