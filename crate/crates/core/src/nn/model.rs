//! The deep feature network, the classifier, and their file format.

use std::fs;
use std::path::Path;

use crate::config::Config;
use crate::descriptor::{self, Layout};
use crate::edges::Scale;
use crate::error::{Error, Result};
use crate::features::{FeatureKind, HandcraftedExtractor};
use crate::image::Image;
use crate::io::write_atomic;
use crate::nn::layers::{softmax, Conv2d, Dense, Layer, MaxPool, Tensor};
use crate::nn::network::Network;
use crate::rng::Rng;

pub const MODEL_MAGIC: &[u8; 8] = b"DFKT0001";

/// Hidden widths of the classifier; the output width is the label count.
pub const CLASSIFIER_HIDDEN: [usize; 2] = [300, 150];

/// |σ_pred − σ_gt| bound for a prediction to count as correct.
pub const SIGMA_TOLERANCE: f64 = 0.15;

/// True when two ladder values agree within [`SIGMA_TOLERANCE`]. A 1e-9 slack
/// absorbs rounding in `σ_min + (l − 1) σ_inter`, so adjacent labels on the
/// default ladder (spacing exactly 0.15) count as correct.
pub fn within_tolerance(sigma_pred: f64, sigma_true: f64) -> bool {
    (sigma_pred - sigma_true).abs() <= SIGMA_TOLERANCE + 1e-9
}

/// Which sub-features reach the classifier. Masked slots are fed as zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureMask {
    pub dct: bool,
    pub gradient: bool,
    pub svd: bool,
    pub deep: bool,
}

impl FeatureMask {
    pub const ALL: FeatureMask = FeatureMask {
        dct: true,
        gradient: true,
        svd: true,
        deep: true,
    };

    pub fn for_kind(kind: FeatureKind) -> Self {
        let none = FeatureMask {
            dct: false,
            gradient: false,
            svd: false,
            deep: false,
        };
        match kind {
            FeatureKind::Dct => FeatureMask { dct: true, ..none },
            FeatureKind::Gradient => FeatureMask {
                gradient: true,
                ..none
            },
            FeatureKind::Svd => FeatureMask { svd: true, ..none },
            FeatureKind::Deep => FeatureMask { deep: true, ..none },
            FeatureKind::Handcrafted => FeatureMask {
                deep: false,
                ..Self::ALL
            },
            FeatureKind::Concatenated => Self::ALL,
        }
    }

    pub fn bits(self) -> u32 {
        (self.dct as u32) | (self.gradient as u32) << 1 | (self.svd as u32) << 2 | (self.deep as u32) << 3
    }

    pub fn from_bits(bits: u32) -> Result<Self> {
        if bits > 0b1111 || bits == 0 {
            return Err(Error::format(format!("invalid feature mask {bits:#b}")));
        }
        Ok(Self {
            dct: bits & 1 != 0,
            gradient: bits & 2 != 0,
            svd: bits & 4 != 0,
            deep: bits & 8 != 0,
        })
    }

    pub fn any_handcrafted(self) -> bool {
        self.dct || self.gradient || self.svd
    }

    /// Per-slot keep flags for one scale block.
    fn block_flags(self, n: usize, deep_dim: usize) -> impl Iterator<Item = bool> {
        std::iter::repeat(self.dct)
            .take(n)
            .chain(std::iter::repeat(self.gradient).take(n))
            .chain(std::iter::repeat(self.svd).take(n))
            .chain(std::iter::repeat(self.deep).take(deep_dim))
    }
}

/// Per-slot affine standardization of hand-crafted inputs, fit on training
/// data. Deep and constant slots pass through unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct InputScaler {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl InputScaler {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            inv_std: vec![1.0; dim],
        }
    }

    /// Fits on encoded vectors; each slot's statistics use only the vectors
    /// whose active scale owns that slot.
    pub fn fit<'a>(encoded: impl Iterator<Item = &'a [f64]>, layout: &Layout) -> Result<Self> {
        let dim = layout.encoded_dim();
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let mut count = [0usize; 2];
        for e in encoded {
            let scale = descriptor::active_scale(e, layout)?;
            count[scale.code() as usize] += 1;
            let off = layout.block_offset(scale);
            for i in off..off + layout.hand_dim(scale) {
                sum[i] += e[i];
                sq[i] += e[i] * e[i];
            }
        }
        let mut s = Self::identity(dim);
        for scale in [Scale::Small, Scale::Large] {
            let n = count[scale.code() as usize];
            if n == 0 {
                continue;
            }
            let off = layout.block_offset(scale);
            for i in off..off + layout.hand_dim(scale) {
                let mean = sum[i] / n as f64;
                let var = (sq[i] / n as f64 - mean * mean).max(0.0);
                let std = var.sqrt();
                s.mean[i] = mean as f32 as f64;
                s.inv_std[i] = if std > 1e-6 {
                    (1.0 / std) as f32 as f64
                } else {
                    1.0
                };
            }
        }
        Ok(s)
    }
}

/// Label, its σ, and the class probabilities of one descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    /// 1-based label on the blur ladder.
    pub label: usize,
    pub sigma: f64,
    pub confidence: f64,
    pub probabilities: Vec<f64>,
}

/// Feature network + classifier + everything needed to encode a patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub small_patch: usize,
    pub large_patch: usize,
    pub labels: usize,
    pub sigma_min: f64,
    pub sigma_inter: f64,
    pub layout: Layout,
    pub mask: FeatureMask,
    pub feature_net: Network,
    pub classifier: Network,
    pub scaler: InputScaler,
}

impl Model {
    /// Fresh model: He-initialized weights, zero biases, zero output layer.
    pub fn new(cfg: &Config, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let feature_net = Network::new(vec![
            Layer::Conv(Conv2d::new(3, cfg.conv1_filters, 5, rng)),
            Layer::Relu,
            Layer::MaxPool(MaxPool { size: 3, stride: 3 }),
            Layer::Conv(Conv2d::new(cfg.conv1_filters, cfg.conv2_filters, 3, rng)),
            Layer::Relu,
            Layer::MaxPool(MaxPool { size: 3, stride: 3 }),
        ]);
        let out = feature_net.output_shape([3, cfg.large_patch, cfg.large_patch])?;
        let deep_dim = out.iter().product();
        let layout = Layout::new(cfg.feature_dim_small, cfg.feature_dim_large, deep_dim);
        let enc = layout.encoded_dim();
        let [h1, h2] = CLASSIFIER_HIDDEN;
        let classifier = Network::new(vec![
            Layer::Dense(Dense::new(enc, h1, false, rng)),
            Layer::Relu,
            Layer::Dropout { rate: cfg.dropout },
            Layer::Dense(Dense::new(h1, h2, false, rng)),
            Layer::Relu,
            Layer::Dropout { rate: cfg.dropout },
            Layer::Dense(Dense::new(h2, cfg.labels, true, rng)),
        ]);
        let mut m = Self {
            small_patch: cfg.small_patch,
            large_patch: cfg.large_patch,
            labels: cfg.labels,
            sigma_min: cfg.sigma_min,
            sigma_inter: cfg.sigma_inter,
            layout,
            mask: FeatureMask::ALL,
            feature_net,
            classifier,
            scaler: InputScaler::identity(enc),
        };
        m.round_to_storage();
        Ok(m)
    }

    pub fn deep_dim(&self) -> usize {
        self.layout.deep_dim
    }

    pub fn sigma_for_label(&self, label: usize) -> f64 {
        self.sigma_min + (label as f64 - 1.0) * self.sigma_inter
    }

    pub fn extractor(&self, scale: Scale) -> HandcraftedExtractor {
        match scale {
            Scale::Small => HandcraftedExtractor::new(self.small_patch, self.layout.dim_small),
            Scale::Large => HandcraftedExtractor::new(self.large_patch, self.layout.dim_large),
        }
    }

    /// Rounds all stored values to `f32` so a save/load round trip is exact.
    pub fn round_to_storage(&mut self) {
        self.feature_net.round_to_f32();
        self.classifier.round_to_f32();
        for v in self.scaler.mean.iter_mut().chain(self.scaler.inv_std.iter_mut()) {
            *v = *v as f32 as f64;
        }
    }

    /// RGB patch as a `(3, side, side)` tensor; small patches are zero-padded
    /// to the large side, centered.
    pub fn patch_tensor(&self, patch: &Image) -> Result<Tensor> {
        if patch.channels() != 3 || patch.width() != patch.height() {
            return Err(Error::invalid("deep feature expects a square RGB patch"));
        }
        let padded;
        let p = if patch.width() == self.large_patch {
            patch
        } else if patch.width() < self.large_patch {
            padded = patch.zero_pad_to(self.large_patch)?;
            &padded
        } else {
            return Err(Error::shape(
                format!("patch side ≤ {}", self.large_patch),
                patch.width(),
            ));
        };
        let s = self.large_patch;
        let mut data = vec![0.0; 3 * s * s];
        for y in 0..s {
            for x in 0..s {
                for c in 0..3 {
                    data[c * s * s + y * s + x] = p.get(x, y, c);
                }
            }
        }
        Tensor::new([3, s, s], data)
    }

    /// Flattened output of the feature network.
    pub fn deep_feature(&self, patch: &Image) -> Result<Vec<f64>> {
        let t = self.patch_tensor(patch)?;
        Ok(self.feature_net.infer(&t)?.data)
    }

    /// Encoded descriptor of one patch. Deep slots are zero when the mask
    /// excludes the deep feature (the network is not run).
    pub fn encode_patch(&self, rgb: &Image, gray: &Image, scale: Scale, extractor: &HandcraftedExtractor) -> Result<Vec<f64>> {
        let hand = extractor.extract(gray)?;
        let deep = if self.mask.deep {
            self.deep_feature(rgb)?
        } else {
            vec![0.0; self.deep_dim()]
        };
        let block = descriptor::concat(&hand.dct, &hand.gradient, &hand.svd, &deep, scale, &self.layout)?;
        descriptor::encode_scale(&block, scale, &self.layout)
    }

    /// Standardizes active hand-crafted slots and zeroes masked slots.
    pub fn prepare_input(&self, encoded: &[f64]) -> Result<Vec<f64>> {
        let scale = descriptor::active_scale(encoded, &self.layout)?;
        let mut x = encoded.to_vec();
        let off = self.layout.block_offset(scale);
        let n = self.layout.feature_dim(scale);
        for (i, keep) in self.mask.block_flags(n, self.deep_dim()).enumerate() {
            let slot = off + i;
            x[slot] = if keep {
                (x[slot] - self.scaler.mean[slot]) * self.scaler.inv_std[slot]
            } else {
                0.0
            };
        }
        Ok(x)
    }

    pub fn logits(&self, encoded: &[f64]) -> Result<Vec<f64>> {
        let x = self.prepare_input(encoded)?;
        Ok(self.classifier.infer(&Tensor::flat(x))?.data)
    }

    pub fn classify(&self, encoded: &[f64]) -> Result<Classification> {
        if encoded.len() != self.layout.encoded_dim() {
            return Err(Error::shape(self.layout.encoded_dim(), encoded.len()));
        }
        let probabilities = softmax(&self.logits(encoded)?);
        let (idx, &confidence) = probabilities
            .iter()
            .enumerate()
            .fold((0, &f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        Ok(Classification {
            label: idx + 1,
            sigma: self.sigma_for_label(idx + 1),
            confidence,
            probabilities,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Layout: magic, header scalars, layer descriptors, scaler, then every
    /// parameter as little-endian `f32`, weights before biases, layer order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MODEL_MAGIC);
        for v in [
            self.small_patch,
            self.large_patch,
            self.labels,
            self.layout.dim_small,
            self.layout.dim_large,
            self.layout.deep_dim,
        ] {
            w.u32(v as u32);
        }
        w.u32(self.mask.bits());
        w.f64(self.sigma_min);
        w.f64(self.sigma_inter);
        for net in [&self.feature_net, &self.classifier] {
            w.u32(net.layers.len() as u32);
            for layer in &net.layers {
                w.u32(layer.kind_code());
                match layer {
                    Layer::Conv(c) => {
                        w.u32(c.in_channels as u32);
                        w.u32(c.out_channels as u32);
                        w.u32(c.kernel as u32);
                    }
                    Layer::MaxPool(p) => {
                        w.u32(p.size as u32);
                        w.u32(p.stride as u32);
                    }
                    Layer::Dense(d) => {
                        w.u32(d.inputs as u32);
                        w.u32(d.outputs as u32);
                    }
                    Layer::Dropout { rate } => w.f32(*rate),
                    Layer::Relu => {}
                }
            }
        }
        w.u32(self.scaler.mean.len() as u32);
        self.scaler.mean.iter().for_each(|&v| w.f32(v));
        self.scaler.inv_std.iter().for_each(|&v| w.f32(v));
        for net in [&self.feature_net, &self.classifier] {
            for p in net.layers.iter().filter_map(|l| l.params()) {
                p.weight.iter().chain(&p.bias).for_each(|&v| w.f32(v));
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MODEL_MAGIC {
            return Err(Error::format("not a model file (bad magic or version)"));
        }
        let small_patch = r.u32()? as usize;
        let large_patch = r.u32()? as usize;
        let labels = r.u32()? as usize;
        let layout = Layout::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let mask = FeatureMask::from_bits(r.u32()?)?;
        let sigma_min = r.f64()?;
        let sigma_inter = r.f64()?;
        let mut nets = Vec::with_capacity(2);
        for _ in 0..2 {
            let n = r.u32()? as usize;
            if n > 64 {
                return Err(Error::format("implausible layer count"));
            }
            let mut layers = Vec::with_capacity(n);
            for _ in 0..n {
                layers.push(match r.u32()? {
                    1 => {
                        let (i, o, k) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
                        Layer::Conv(Conv2d {
                            in_channels: i,
                            out_channels: o,
                            kernel: k,
                            params: zero_params(o * i * k * k, o)?,
                        })
                    }
                    2 => Layer::Relu,
                    3 => Layer::MaxPool(MaxPool {
                        size: r.u32()? as usize,
                        stride: r.u32()? as usize,
                    }),
                    4 => {
                        let (i, o) = (r.u32()? as usize, r.u32()? as usize);
                        Layer::Dense(Dense {
                            inputs: i,
                            outputs: o,
                            params: zero_params(i * o, o)?,
                        })
                    }
                    5 => Layer::Dropout { rate: r.f32()? },
                    k => return Err(Error::format(format!("unknown layer kind {k}"))),
                });
            }
            nets.push(Network::new(layers));
        }
        let classifier = nets.pop().unwrap();
        let feature_net = nets.pop().unwrap();
        let dim = r.u32()? as usize;
        if dim != layout.encoded_dim() {
            return Err(Error::format("scaler length does not match the layout"));
        }
        let mean = (0..dim).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        let inv_std = (0..dim).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        let mut model = Model {
            small_patch,
            large_patch,
            labels,
            sigma_min,
            sigma_inter,
            layout,
            mask,
            feature_net,
            classifier,
            scaler: InputScaler { mean, inv_std },
        };
        for net in [&mut model.feature_net, &mut model.classifier] {
            for p in net.layers.iter_mut().filter_map(|l| l.params_mut()) {
                for v in p.weight.iter_mut().chain(p.bias.iter_mut()) {
                    *v = r.f32()?;
                }
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::format("trailing bytes after model parameters"));
        }
        model.validate_shapes()?;
        Ok(model)
    }

    fn validate_shapes(&self) -> Result<()> {
        let out = self
            .feature_net
            .output_shape([3, self.large_patch, self.large_patch])?;
        if out.iter().product::<usize>() != self.layout.deep_dim {
            return Err(Error::format("feature network output does not match deep_dim"));
        }
        let c = self.classifier.output_shape([self.layout.encoded_dim(), 1, 1])?;
        if c[0] != self.labels {
            return Err(Error::format("classifier output does not match label count"));
        }
        Ok(())
    }
}

fn zero_params(weights: usize, biases: usize) -> Result<crate::nn::layers::LayerParams> {
    if weights > 1 << 26 {
        return Err(Error::format("implausible layer size"));
    }
    Ok(crate::nn::layers::LayerParams {
        weight: vec![0.0; weights],
        bias: vec![0.0; biases],
    })
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f64) {
        self.0.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format("truncated model file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
