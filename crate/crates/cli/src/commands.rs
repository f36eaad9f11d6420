use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use defocus::apps::{accuracy, magnify_blur, pr_curve, segment as segment_map, BinaryMask, PrCurve};
use defocus::datagen::manifest_csv;
use defocus::descriptor::{self, DatasetRecord};
use defocus::edges::extract_patches;
use defocus::io::{load_image, load_map, render_map, save_image, save_map, write_atomic};
use defocus::nn::{train_on_images, EpochStats, TrainRun};
use defocus::{estimate as run_estimate, Config, Image, Model, Scale};

use crate::{EstimateArgs, EvaluateArgs, MagnifyArgs, SegmentArgs, TrainArgs};

pub(crate) const MAP_EXT: &str = "dfkmap";
const IMAGE_EXTS: [&str; 3] = ["png", "ppm", "pgm"];

fn has_ext(p: &Path, exts: &[&str]) -> bool {
    p.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .is_some_and(|e| exts.contains(&e.as_str()))
}

fn sorted_files(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading directory {}", dir.display()))? {
        let p = entry?.path();
        if p.is_file() && has_ext(&p, exts) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub(crate) fn loss_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("stage,epoch,loss,train_accuracy\n");
    for h in history {
        let _ = writeln!(s, "{},{},{:.6},{:.6}", h.stage, h.epoch, h.loss, h.train_acc);
    }
    s
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    Ok(())
}

/// Writes the model, loss CSV and the optional dataset and manifest.
pub(crate) fn save_training(run: &TrainRun, names: &[String], cfg: &Config, args: &TrainArgs) -> Result<()> {
    ensure_parent(&args.out)?;
    run.suite
        .model
        .save(&args.out)
        .with_context(|| format!("writing model {}", args.out.display()))?;
    let loss_path = args
        .loss_csv
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.loss.csv", args.out.display())));
    write_text(&loss_path, &loss_csv(&run.suite.history))?;
    if let Some(p) = &args.dataset {
        let dim = run.suite.model.layout.encoded_dim();
        let records: Vec<DatasetRecord> = run
            .train_samples
            .iter()
            .map(|s| DatasetRecord {
                encoded: s.encoded.clone(),
                label: s.label as u8,
            })
            .collect();
        descriptor::save_dataset(&records, dim, p).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &args.manifest {
        write_text(p, &manifest_csv(&run.train_patches, names, cfg)?)?;
    }
    Ok(())
}

pub(crate) fn train(args: &TrainArgs, cfg: &Config) -> Result<()> {
    let paths = sorted_files(&args.images, &IMAGE_EXTS)?;
    if paths.is_empty() {
        bail!("no PNG/PPM/PGM images in {}", args.images.display());
    }
    let images = paths
        .iter()
        .map(|p| load_image(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = paths.iter().map(|p| stem(p)).collect();
    let run = train_on_images(&images, cfg)?;
    save_training(&run, &names, cfg, args)?;
    for s in &run.suite.scores {
        println!("{:<4} {:>7.2}%", s.kind.symbol(), 100.0 * s.accuracy);
    }
    let acc = run.suite.accuracy(defocus::features::FeatureKind::Concatenated).unwrap_or(0.0);
    println!(
        "held-out within-tolerance accuracy: {:.2}% ({} held-out samples)",
        100.0 * acc,
        run.stats.test_samples
    );
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}{suffix}", prefix.display()))
}

/// Writes `<prefix>_{IS,IC,IB,IF}.dfkmap`, their PGM renders and `<prefix>_IG.ppm`.
pub(crate) fn save_estimate(est: &defocus::Estimate, prefix: &Path, cfg: &Config) -> Result<()> {
    ensure_parent(prefix)?;
    let (lo, hi) = (cfg.sigma_min, cfg.sigma_max());
    let maps = [
        ("_IS", est.sparse.sigma_image(), lo, hi),
        ("_IC", est.sparse.confidence_image(), 0.0, 1.0),
        ("_IB", est.filtered.sigma_image(), lo, hi),
        ("_IF", est.dense.clone(), lo, hi),
    ];
    for (tag, map, a, b) in &maps {
        save_map(map, &with_suffix(prefix, &format!("{tag}.{MAP_EXT}")))?;
        save_image(&render_map(map, *a, *b), &with_suffix(prefix, &format!("{tag}.pgm")))?;
    }
    save_image(&est.guide, &with_suffix(prefix, "_IG.ppm"))?;
    Ok(())
}

fn load_model(path: &Path, cfg: &Config) -> Result<Model> {
    let m = Model::load(path).with_context(|| format!("loading model {}", path.display()))?;
    if m.labels != cfg.labels || m.sigma_min != cfg.sigma_min || m.sigma_inter != cfg.sigma_inter {
        log::warn!("model σ ladder differs from the config; the model's ladder is used for labels");
    }
    Ok(m)
}

pub(crate) fn estimate(args: &EstimateArgs, cfg: &Config) -> Result<()> {
    let mut cfg = cfg.clone();
    cfg.seed_homogeneous |= args.seed_homogeneous;
    let model = load_model(&args.model, &cfg)?;
    let img = load_image(&args.image).with_context(|| format!("loading {}", args.image.display()))?;
    let est = run_estimate(&img, &model, &cfg)?;
    save_estimate(&est, &args.out, &cfg)?;
    if args.dump_edges {
        save_image(&est.edges.to_image(), &with_suffix(&args.out, "_edges.pgm"))?;
    }
    if args.dump_features {
        write_text(&with_suffix(&args.out, "_features.csv"), &feature_csv(&img, &est, &model, &cfg)?)?;
    }
    let mean = est.dense.data().iter().sum::<f64>() / est.dense.len_pixels() as f64;
    println!(
        "{} edge patches, {} seeds, CG {} iterations, mean σ {:.3}",
        est.edge_samples, est.seeds_added, est.cg_iterations, mean
    );
    Ok(())
}

/// `center_x, center_y, scale`, then the descriptor block of each edge patch.
fn feature_csv(img: &Image, est: &defocus::Estimate, model: &Model, cfg: &Config) -> Result<String> {
    let samples = extract_patches(&img.to_rgb(), &est.edges, cfg);
    let small = model.extractor(Scale::Small);
    let large = model.extractor(Scale::Large);
    let mut s = String::new();
    for p in &samples {
        let ex = if p.scale == Scale::Small { &small } else { &large };
        let enc = model.encode_patch(&p.rgb, &p.gray, p.scale, ex)?;
        let (block, _) = descriptor::decode(&enc, &model.layout)?;
        let _ = write!(s, "{},{},{}", p.x, p.y, p.scale.as_str());
        for v in block {
            let _ = write!(s, ",{v:.8e}");
        }
        s.push('\n');
    }
    Ok(s)
}

pub(crate) fn segment(args: &SegmentArgs, cfg: &Config) -> Result<()> {
    let map = load_map(&args.map).with_context(|| format!("loading {}", args.map.display()))?;
    let mask = segment_map(&map, cfg.alpha)?;
    ensure_parent(&args.out)?;
    save_image(&mask.to_image(), &args.out)?;
    println!(
        "{} of {} pixels blurry at α = {}",
        mask.count(),
        mask.data.len(),
        cfg.alpha
    );
    Ok(())
}

/// Per-image accuracies and the pooled PR curve of `(name, map, truth)` triples.
pub(crate) struct Evaluation {
    pub rows: Vec<(String, f64)>,
    pub mean: f64,
    pub pr: PrCurve,
}

impl Evaluation {
    pub fn csv(&self) -> String {
        let mut s = String::from("image,accuracy\n");
        for (n, a) in &self.rows {
            let _ = writeln!(s, "{n},{a:.6}");
        }
        let _ = writeln!(s, "mean,{:.6}", self.mean);
        s
    }
}

pub(crate) fn evaluate_pairs(pairs: &[(String, Image, BinaryMask)], cfg: &Config) -> Result<Evaluation> {
    if pairs.is_empty() {
        bail!("nothing to evaluate");
    }
    let mut rows = Vec::new();
    let (mut values, mut truth) = (Vec::new(), Vec::new());
    for (name, map, gt) in pairs {
        let mask = segment_map(map, cfg.alpha)?;
        rows.push((name.clone(), accuracy(&mask, gt)?));
        values.extend_from_slice(map.data());
        truth.extend_from_slice(&gt.data);
    }
    let mean = rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64;
    // all pixels side by side so precision and recall pool over images
    let n = values.len();
    let pooled = Image::new(n, 1, 1, values)?;
    let pr = pr_curve(&pooled, &BinaryMask::new(n, 1, truth)?, cfg.labels, cfg.sigma_min, cfg.sigma_max())?;
    Ok(Evaluation { rows, mean, pr })
}

fn find_truth(dir: &Path, name: &str) -> Option<PathBuf> {
    IMAGE_EXTS
        .iter()
        .map(|e| dir.join(format!("{name}.{e}")))
        .find(|p| p.is_file())
}

pub(crate) fn evaluate(args: &EvaluateArgs, cfg: &Config) -> Result<()> {
    let maps = if args.maps.is_dir() {
        sorted_files(&args.maps, &[MAP_EXT])?
    } else {
        vec![args.maps.clone()]
    };
    let mut pairs = Vec::new();
    let mut missing = Vec::new();
    for m in &maps {
        let s = stem(m);
        let name = s.strip_suffix("_IF").unwrap_or(&s).to_string();
        let Some(gt_path) = find_truth(&args.gt, &name) else {
            missing.push(name);
            continue;
        };
        let map = load_map(m).with_context(|| format!("loading {}", m.display()))?;
        let gt = load_image(&gt_path).with_context(|| format!("loading {}", gt_path.display()))?;
        let gt = BinaryMask::from_image(&defocus::image::gray_view(&gt))?;
        pairs.push((name, map, gt));
    }
    for name in &missing {
        log::warn!("no ground truth for {name}; skipped");
    }
    if pairs.is_empty() {
        bail!("no map has a matching ground-truth mask in {}", args.gt.display());
    }
    let ev = evaluate_pairs(&pairs, cfg)?;
    ensure_parent(&args.out)?;
    write_text(&args.out, &ev.csv())?;
    if let Some(p) = &args.pr {
        write_text(p, &ev.pr.to_csv())?;
    }
    println!("{} images, mean accuracy {:.4}", ev.rows.len(), ev.mean);
    if !missing.is_empty() {
        println!("skipped (no ground truth): {}", missing.join(", "));
    }
    Ok(())
}

pub(crate) fn magnify(args: &MagnifyArgs, cfg: &Config) -> Result<()> {
    let img = load_image(&args.image).with_context(|| format!("loading {}", args.image.display()))?;
    let map = load_map(&args.map).with_context(|| format!("loading {}", args.map.display()))?;
    let out = magnify_blur(&img, &map, args.factor, cfg.alpha)?;
    ensure_parent(&args.out)?;
    save_image(&out, &args.out)?;
    Ok(())
}
