//! Two-stage training with vanilla mini-batch SGD.
//!
//! Stage 1 trains the feature network and the classifier together on `f_C`
//! alone. Stage 2 freezes the feature network, switches the hand-crafted slots
//! on and fine-tunes the classifier on the full descriptor.
//!
//! Batch gradients are summed over fixed chunks of [`CHUNK`] samples and the
//! chunk sums are reduced in order, so results do not depend on thread count.

use crate::config::Config;
use crate::datagen::{build_training_set, split_holdout, LabeledPatch, SharpPatch};
use crate::descriptor;
use crate::edges::Scale;
use crate::error::{Error, Result};
use crate::features::{FeatureKind, HandcraftedExtractor};
use crate::image::Image;
use crate::nn::layers::{softmax_cross_entropy, Mode, Tensor};
use crate::nn::model::{within_tolerance, FeatureMask, InputScaler, Model};
use crate::nn::network::NetGrads;
use crate::par;
use crate::rng::Rng;

pub const CHUNK: usize = 8;
const DROPOUT_SALT: u64 = 0xd0_0d_5a17;
const SHUFFLE_SALT: u64 = 0x5_4ff1e;

/// One labeled training example, ready for either stage.
#[derive(Debug, Clone)]
pub struct TrainSample {
    /// Feature-net input `(3, side, side)`, zero-padded; stored as `f32`.
    pub tensor: Vec<f32>,
    /// Encoded descriptor. Deep slots stay zero until [`cache_deep`] fills them.
    pub encoded: Vec<f64>,
    pub scale: Scale,
    /// 1-based label.
    pub label: usize,
}

impl TrainSample {
    pub fn input(&self, side: usize) -> Tensor {
        Tensor {
            shape: [3, side, side],
            data: self.tensor.iter().map(|&v| v as f64).collect(),
        }
    }

    /// `encoded` with the deep slots replaced by `deep`.
    pub fn with_deep(&self, deep: &[f64], model: &Model) -> Vec<f64> {
        let mut e = self.encoded.clone();
        let off = deep_offset(model, self.scale);
        e[off..off + deep.len()].copy_from_slice(deep);
        e
    }
}

fn deep_offset(model: &Model, scale: Scale) -> usize {
    model.layout.block_offset(scale) + model.layout.hand_dim(scale)
}

/// Computes hand-crafted features and input tensors for labeled patches.
pub fn prepare_samples(model: &Model, patches: &[LabeledPatch]) -> Result<Vec<TrainSample>> {
    let small = model.extractor(Scale::Small);
    let large = model.extractor(Scale::Large);
    let zeros = vec![0.0; model.deep_dim()];
    par::map(patches, |p| {
        let ex: &HandcraftedExtractor = match p.scale {
            Scale::Small => &small,
            Scale::Large => &large,
        };
        let hand = ex.extract(&p.gray)?;
        let block = descriptor::concat(&hand.dct, &hand.gradient, &hand.svd, &zeros, p.scale, &model.layout)?;
        let encoded = descriptor::encode_scale(&block, p.scale, &model.layout)?;
        let t = model.patch_tensor(&p.rgb)?;
        if p.label == 0 || p.label > model.labels {
            return Err(Error::invalid(format!("label {} outside 1..={}", p.label, model.labels)));
        }
        Ok(TrainSample {
            tensor: t.data.iter().map(|&v| v as f32).collect(),
            encoded,
            scale: p.scale,
            label: p.label,
        })
    })
    .into_iter()
    .collect()
}

/// Expands each sharp patch into its `L` blurred variants and prepares them.
/// Variants of one patch stay adjacent, in label order.
pub fn prepare_from_sharp(model: &Model, sharp: &[SharpPatch], cfg: &Config) -> Result<Vec<TrainSample>> {
    let per = par::map(sharp, |p| prepare_samples(model, &p.variants(cfg)?));
    let mut out = Vec::with_capacity(sharp.len() * cfg.labels);
    for v in per {
        out.extend(v?);
    }
    Ok(out)
}

/// Fills every sample's deep slots with the (frozen) feature network output.
pub fn cache_deep(model: &Model, samples: &mut [TrainSample]) -> Result<()> {
    let side = model.large_patch;
    let deep = par::map(samples, |s| model.feature_net.infer(&s.input(side)).map(|t| t.data));
    for (s, d) in samples.iter_mut().zip(deep) {
        let d = d?;
        let off = deep_offset(model, s.scale);
        s.encoded[off..off + d.len()].copy_from_slice(&d);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainOptions {
    pub fn stage1(cfg: &Config) -> Self {
        Self {
            epochs: cfg.epochs_stage1,
            learning_rate: cfg.learning_rate,
            batch_size: cfg.batch_size,
            seed: cfg.seed,
        }
    }

    pub fn stage2(cfg: &Config) -> Self {
        Self {
            epochs: cfg.epochs_stage2,
            ..Self::stage1(cfg)
        }
    }
}

/// Mean training loss and within-tolerance accuracy of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub stage: u32,
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
}

struct Acc {
    feat: Option<NetGrads>,
    cls: NetGrads,
    loss: f64,
    correct: usize,
}

impl Acc {
    fn new(model: &Model, with_feat: bool) -> Self {
        Self {
            feat: with_feat.then(|| model.feature_net.zero_grads()),
            cls: model.classifier.zero_grads(),
            loss: 0.0,
            correct: 0,
        }
    }

    fn merge(&mut self, o: &Acc) {
        if let (Some(a), Some(b)) = (self.feat.as_mut(), o.feat.as_ref()) {
            a.add_assign(b);
        }
        self.cls.add_assign(&o.cls);
        self.loss += o.loss;
        self.correct += o.correct;
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Forward + backward of one sample, accumulating into `acc`.
fn sample_step(model: &Model, s: &TrainSample, end_to_end: bool, rng: &mut Rng, acc: &mut Acc) -> Result<()> {
    let feat = if end_to_end {
        let (fc, caches) = model.feature_net.forward(&s.input(model.large_patch), Mode::Train, None)?;
        Some((fc, caches))
    } else {
        None
    };
    let encoded = match &feat {
        Some((fc, _)) => s.with_deep(&fc.data, model),
        None => s.encoded.clone(),
    };
    let x = Tensor::flat(model.prepare_input(&encoded)?);
    let (logits, caches) = model.classifier.forward(&x, Mode::Train, Some(rng))?;
    let (loss, g) = softmax_cross_entropy(&logits.data, s.label - 1);
    if !loss.is_finite() {
        return Err(Error::Numeric("training loss is not finite".into()));
    }
    acc.loss += loss;
    let pred = argmax(&logits.data) + 1;
    if within_tolerance(model.sigma_for_label(pred), model.sigma_for_label(s.label)) {
        acc.correct += 1;
    }
    let dx = model
        .classifier
        .backward(&caches, &Tensor::new(logits.shape, g)?, Some(&mut acc.cls))?;
    if let (Some((fc, fcaches)), Some(fg)) = (feat, acc.feat.as_mut()) {
        let off = deep_offset(model, s.scale);
        let dfc: Vec<f64> = (0..fc.len())
            .map(|i| dx.data[off + i] * model.scaler.inv_std[off + i])
            .collect();
        model
            .feature_net
            .backward_params(&fcaches, &Tensor::new(fc.shape, dfc)?, fg)?;
    }
    Ok(())
}

fn run_epochs(model: &mut Model, samples: &[TrainSample], opts: &TrainOptions, stage: u32, end_to_end: bool) -> Result<Vec<EpochStats>> {
    if samples.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut shuffler = Rng::new(opts.seed ^ SHUFFLE_SALT).fork(stage as u64);
    let dropout = Rng::new(opts.seed ^ DROPOUT_SALT);
    let mut history = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        shuffler.shuffle(&mut order);
        let mut loss = 0.0;
        let mut correct = 0;
        for batch in order.chunks(opts.batch_size) {
            let chunks: Vec<&[usize]> = batch.chunks(CHUNK).collect();
            let frozen: &Model = model;
            let parts = par::map(&chunks, |chunk| -> Result<Acc> {
                let mut acc = Acc::new(frozen, end_to_end);
                for &i in chunk.iter() {
                    let stream = ((stage as u64) << 56) | ((epoch as u64) << 32) | i as u64;
                    let mut rng = dropout.fork(stream);
                    sample_step(frozen, &samples[i], end_to_end, &mut rng, &mut acc)?;
                }
                Ok(acc)
            });
            let mut total: Option<Acc> = None;
            for p in parts {
                let p = p?;
                match total.as_mut() {
                    None => total = Some(p),
                    Some(t) => t.merge(&p),
                }
            }
            let mut total = total.expect("non-empty batch");
            loss += total.loss;
            correct += total.correct;
            let inv = 1.0 / batch.len() as f64;
            total.cls.scale(inv);
            model.classifier.apply_sgd(&total.cls, opts.learning_rate)?;
            if let Some(mut fg) = total.feat {
                fg.scale(inv);
                model.feature_net.apply_sgd(&fg, opts.learning_rate)?;
            }
        }
        let stats = EpochStats {
            stage,
            epoch: epoch + 1,
            loss: loss / samples.len() as f64,
            train_acc: correct as f64 / samples.len() as f64,
        };
        log::info!(
            "stage {} epoch {}: loss {:.4}, train acc {:.2}%",
            stats.stage,
            stats.epoch,
            stats.loss,
            100.0 * stats.train_acc
        );
        if !stats.loss.is_finite() {
            return Err(Error::Numeric(format!("loss diverged at epoch {}", stats.epoch)));
        }
        history.push(stats);
    }
    model.round_to_storage();
    Ok(history)
}

/// Trains the feature network and classifier jointly on `f_C` only.
pub fn train_stage1(model: &mut Model, samples: &[TrainSample], opts: &TrainOptions) -> Result<Vec<EpochStats>> {
    model.mask = FeatureMask::for_kind(FeatureKind::Deep);
    run_epochs(model, samples, opts, 1, true)
}

/// Trains only the classifier on samples whose deep slots are already cached
/// (or irrelevant under `model.mask`).
pub fn train_classifier(model: &mut Model, samples: &[TrainSample], opts: &TrainOptions, stage: u32) -> Result<Vec<EpochStats>> {
    run_epochs(model, samples, opts, stage, false)
}

/// Sets the first classifier layer's weights on hand-crafted slots to zero,
/// so enabling those slots leaves the network's function unchanged.
pub fn zero_handcrafted_columns(model: &mut Model) {
    let layout = model.layout;
    let Some(p) = model.classifier.layers.iter_mut().find_map(|l| l.params_mut()) else {
        return;
    };
    let inputs = layout.encoded_dim();
    let outputs = p.bias.len();
    for scale in [Scale::Small, Scale::Large] {
        let off = layout.block_offset(scale);
        for i in off..off + layout.hand_dim(scale) {
            for o in 0..outputs {
                p.weight[o * inputs + i] = 0.0;
            }
        }
    }
}

/// Switches a stage-1 model to the full descriptor: fits the input scaler on
/// `samples` and zeroes the hand-crafted first-layer columns.
pub fn begin_stage2(model: &mut Model, samples: &[TrainSample]) -> Result<()> {
    model.scaler = InputScaler::fit(samples.iter().map(|s| s.encoded.as_slice()), &model.layout)?;
    model.mask = FeatureMask::ALL;
    zero_handcrafted_columns(model);
    model.round_to_storage();
    Ok(())
}

/// Runs both stages. `samples` get their deep slots cached in between.
pub fn train_two_stage(model: &mut Model, samples: &mut [TrainSample], cfg: &Config) -> Result<Vec<EpochStats>> {
    let mut history = train_stage1(model, samples, &TrainOptions::stage1(cfg))?;
    cache_deep(model, samples)?;
    begin_stage2(model, samples)?;
    history.extend(train_classifier(model, samples, &TrainOptions::stage2(cfg), 2)?);
    Ok(history)
}

/// Within-tolerance accuracy. Deep slots are recomputed when the mask uses them.
pub fn evaluate(model: &Model, samples: &[TrainSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("no evaluation samples"));
    }
    let hits = par::map(samples, |s| -> Result<bool> {
        let encoded = if model.mask.deep {
            let fc = model.feature_net.infer(&s.input(model.large_patch))?;
            s.with_deep(&fc.data, model)
        } else {
            s.encoded.clone()
        };
        let c = model.classify(&encoded)?;
        Ok(within_tolerance(c.sigma, model.sigma_for_label(s.label)))
    });
    let mut n = 0;
    for h in hits {
        n += h? as usize;
    }
    Ok(n as f64 / samples.len() as f64)
}

/// Held-out accuracy of one feature configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScore {
    pub kind: FeatureKind,
    pub accuracy: f64,
}

/// Result of [`train_feature_suite`].
#[derive(Debug, Clone)]
pub struct SuiteResult {
    /// The full-descriptor (`f_B`) model.
    pub model: Model,
    pub scores: Vec<FeatureScore>,
    pub history: Vec<EpochStats>,
}

impl SuiteResult {
    pub fn accuracy(&self, kind: FeatureKind) -> Option<f64> {
        self.scores.iter().find(|s| s.kind == kind).map(|s| s.accuracy)
    }
}

/// Trains the two-stage model plus one classifier per hand-crafted feature
/// set, and scores each on `test`.
///
/// `f_C` is the stage-1 model and `f_B` the stage-2 model. Hand-crafted-only
/// classifiers start fresh and get the same total number of epochs.
pub fn train_feature_suite(cfg: &Config, train: &mut [TrainSample], test: &mut [TrainSample]) -> Result<SuiteResult> {
    let init = Model::new(cfg, &mut Rng::new(cfg.seed))?;
    let mut model = init.clone();
    let mut history = train_stage1(&mut model, train, &TrainOptions::stage1(cfg))?;
    let acc_c = evaluate(&model, test)?;
    cache_deep(&model, train)?;
    cache_deep(&model, test)?;
    begin_stage2(&mut model, train)?;
    history.extend(train_classifier(&mut model, train, &TrainOptions::stage2(cfg), 2)?);
    let acc_b = evaluate(&model, test)?;

    let mut scores = Vec::new();
    let hand_opts = TrainOptions {
        epochs: cfg.epochs_stage1 + cfg.epochs_stage2,
        ..TrainOptions::stage1(cfg)
    };
    for (stage, kind) in [
        (3, FeatureKind::Dct),
        (4, FeatureKind::Gradient),
        (5, FeatureKind::Svd),
        (6, FeatureKind::Handcrafted),
    ] {
        let mut m = init.clone();
        m.mask = FeatureMask::for_kind(kind);
        m.scaler = model.scaler.clone();
        train_classifier(&mut m, train, &hand_opts, stage)?;
        let accuracy = evaluate(&m, test)?;
        log::info!("{}: held-out accuracy {:.2}%", kind.symbol(), 100.0 * accuracy);
        scores.push(FeatureScore { kind, accuracy });
    }
    scores.push(FeatureScore {
        kind: FeatureKind::Deep,
        accuracy: acc_c,
    });
    scores.push(FeatureScore {
        kind: FeatureKind::Concatenated,
        accuracy: acc_b,
    });
    Ok(SuiteResult {
        model,
        scores,
        history,
    })
}

/// Sizes of the corpus behind a [`train_on_images`] run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusStats {
    pub images: usize,
    pub sharp_train: usize,
    pub sharp_test: usize,
    pub train_samples: usize,
    pub test_samples: usize,
}

/// Everything a [`train_on_images`] run produces.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub suite: SuiteResult,
    pub stats: CorpusStats,
    /// Sharp patches on the training side of the split.
    pub train_patches: Vec<SharpPatch>,
    /// Their blurred variants, deep slots filled by the trained network.
    pub train_samples: Vec<TrainSample>,
}

/// Samples sharp patches from in-focus `images`, holds out a fraction of the
/// images, blurs every patch at each label and runs [`train_feature_suite`].
pub fn train_on_images(images: &[Image], cfg: &Config) -> Result<TrainRun> {
    let rng = Rng::new(cfg.seed);
    let sharp = build_training_set(images, cfg, &rng.fork(0xda7a))?;
    let (train_patches, test_patches) = split_holdout(sharp, images.len(), cfg.holdout_fraction, &rng);
    if train_patches.is_empty() || test_patches.is_empty() {
        return Err(Error::invalid(format!(
            "need sharp patches on both sides of the split, got {} train / {} held out",
            train_patches.len(),
            test_patches.len()
        )));
    }
    let prep = Model::new(cfg, &mut Rng::new(cfg.seed))?;
    let mut train = prepare_from_sharp(&prep, &train_patches, cfg)?;
    let mut test = prepare_from_sharp(&prep, &test_patches, cfg)?;
    let stats = CorpusStats {
        images: images.len(),
        sharp_train: train_patches.len(),
        sharp_test: test_patches.len(),
        train_samples: train.len(),
        test_samples: test.len(),
    };
    log::info!(
        "{} images: {} + {} sharp patches, {} training samples",
        stats.images,
        stats.sharp_train,
        stats.sharp_test,
        stats.train_samples
    );
    let suite = train_feature_suite(cfg, &mut train, &mut test)?;
    Ok(TrainRun {
        suite,
        stats,
        train_patches,
        train_samples: train,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config() -> Config {
        let mut cfg = Config::default();
        cfg.labels = 2;
        cfg.batch_size = 8;
        cfg.learning_rate = 0.05;
        cfg.dropout = 0.0;
        // labels one tolerance apart would count as equal
        cfg.sigma_inter = 1.0;
        cfg
    }

    /// Two classes split on the sign of one hand-crafted slot.
    fn separable(model: &Model, n: usize, seed: u64) -> Vec<TrainSample> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|i| {
                let label = 1 + i % 2;
                let mut block = vec![0.0; model.layout.block_dim(Scale::Large)];
                for v in block.iter_mut().take(75) {
                    *v = rng.range(0.0, 0.1);
                }
                block[3] = if label == 1 { -1.0 } else { 1.0 } * rng.range(0.5, 1.0);
                TrainSample {
                    tensor: vec![0.0; 3 * 27 * 27],
                    encoded: descriptor::encode_scale(&block, Scale::Large, &model.layout).unwrap(),
                    scale: Scale::Large,
                    label,
                }
            })
            .collect()
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let cfg = toy_config();
        let mut m = Model::new(&cfg, &mut Rng::new(1)).unwrap();
        m.mask = FeatureMask::for_kind(FeatureKind::Handcrafted);
        let data = separable(&m, 64, 2);
        let opts = TrainOptions {
            epochs: 50,
            ..TrainOptions::stage1(&cfg)
        };
        let hist = train_classifier(&mut m, &data, &opts, 2).unwrap();
        assert_eq!(hist.len(), 50);
        assert_eq!(evaluate(&m, &data).unwrap(), 1.0);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let cfg = toy_config();
        let mut m = Model::new(&cfg, &mut Rng::new(1)).unwrap();
        m.mask = FeatureMask::for_kind(FeatureKind::Handcrafted);
        let before = m.clone();
        let data = separable(&m, 16, 3);
        let opts = TrainOptions {
            epochs: 1,
            learning_rate: 0.0,
            ..TrainOptions::stage1(&cfg)
        };
        train_classifier(&mut m, &data, &opts, 2).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn training_is_thread_count_independent() {
        let cfg = toy_config();
        let base = {
            let mut m = Model::new(&cfg, &mut Rng::new(5)).unwrap();
            m.mask = FeatureMask::for_kind(FeatureKind::Handcrafted);
            m
        };
        let data = separable(&base, 40, 4);
        let opts = TrainOptions {
            epochs: 2,
            ..TrainOptions::stage1(&cfg)
        };
        let run = |threads| {
            par::with_threads(threads, || {
                let mut m = base.clone();
                train_classifier(&mut m, &data, &opts, 2).unwrap();
                m
            })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn stage2_switch_preserves_function() {
        let cfg = Config::default();
        let mut m = Model::new(&cfg, &mut Rng::new(9)).unwrap();
        m.mask = FeatureMask::for_kind(FeatureKind::Deep);
        // make the last layer non-trivial so logits are informative
        if let Some(p) = m.classifier.layers.last_mut().and_then(|l| l.params_mut()) {
            let mut rng = Rng::new(10);
            p.weight.iter_mut().for_each(|w| *w = rng.range(-0.1, 0.1) as f32 as f64);
        }
        let mut data = separable(&m, 12, 11);
        let mut rng = Rng::new(12);
        for s in &mut data {
            s.tensor.iter_mut().for_each(|v| *v = rng.uniform() as f32);
        }
        cache_deep(&m, &mut data).unwrap();
        let before: Vec<Vec<f64>> = data.iter().map(|s| m.logits(&s.encoded).unwrap()).collect();
        begin_stage2(&mut m, &data).unwrap();
        for (s, b) in data.iter().zip(&before) {
            let after = m.logits(&s.encoded).unwrap();
            for (x, y) in after.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
