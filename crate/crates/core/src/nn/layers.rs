//! Layer math: forward passes with caches and analytic backward passes.

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Channel-major activation tensor `(channels, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: [usize; 3],
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(
                format!("{shape:?}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    /// Flat vector of length `d`, stored as `(d, 1, 1)`.
    pub fn flat(data: Vec<f64>) -> Self {
        Self {
            shape: [data.len(), 1, 1],
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Trainable weights and biases of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub fn add_assign(&mut self, other: &LayerParams) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.weight.iter_mut().chain(self.bias.iter_mut()).for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Vanilla gradient descent: `w ← w − η ∂L/∂w`, `b ← b − η ∂L/∂b`.
pub fn sgd_step(params: &mut LayerParams, grads: &LayerParams, lr: f64) -> Result<()> {
    if !(lr >= 0.0) {
        return Err(Error::invalid("learning rate must be non-negative"));
    }
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    for (w, g) in params.weight.iter_mut().zip(&grads.weight) {
        *w -= lr * g;
    }
    for (b, g) in params.bias.iter_mut().zip(&grads.bias) {
        *b -= lr * g;
    }
    Ok(())
}

/// Valid (unpadded) convolution with stride 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `[out][in][ky][kx]`.
    pub params: LayerParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxPool {
    pub size: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `[out][in]`.
    pub params: LayerParams,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    Relu,
    MaxPool(MaxPool),
    Dense(Dense),
    Dropout { rate: f64 },
}

/// What a layer's backward pass needs from its forward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    Input(Tensor),
    Pool { input_shape: [usize; 3], argmax: Vec<usize> },
    Dropout(Option<Vec<f64>>),
}

impl Conv2d {
    /// He-normal weights, zero bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut Rng) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let std = (2.0 / fan_in).sqrt();
        let weight = (0..out_channels * in_channels * kernel * kernel)
            .map(|_| rng.normal() * std)
            .collect();
        Self {
            in_channels,
            out_channels,
            kernel,
            params: LayerParams {
                weight,
                bias: vec![0.0; out_channels],
            },
        }
    }

    pub fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let [c, h, w] = input;
        if c != self.in_channels || h < self.kernel || w < self.kernel {
            return Err(Error::shape(
                format!("{} channels of side ≥ {}", self.in_channels, self.kernel),
                format!("{input:?}"),
            ));
        }
        Ok([self.out_channels, h - self.kernel + 1, w - self.kernel + 1])
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let [oc_n, oh, ow] = self.output_shape(x.shape)?;
        let [ic_n, h, w] = x.shape;
        let k = self.kernel;
        let wt = &self.params.weight;
        let mut out = vec![0.0; oc_n * oh * ow];
        for oc in 0..oc_n {
            let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
            plane.fill(self.params.bias[oc]);
            for ic in 0..ic_n {
                let xin = &x.data[ic * h * w..(ic + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wt[((oc * ic_n + ic) * k + ky) * k + kx];
                        for oy in 0..oh {
                            let row = &xin[(oy + ky) * w + kx..(oy + ky) * w + kx + ow];
                            let dst = &mut plane[oy * ow..(oy + 1) * ow];
                            for (d, s) in dst.iter_mut().zip(row) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
        Tensor::new([oc_n, oh, ow], out)
    }

    fn backward(&self, x: &Tensor, g: &Tensor, grads: &mut LayerParams, want_dx: bool) -> Tensor {
        let [ic_n, h, w] = x.shape;
        let [oc_n, oh, ow] = g.shape;
        let k = self.kernel;
        let wt = &self.params.weight;
        let mut dx = vec![0.0; ic_n * h * w];
        for oc in 0..oc_n {
            let gp = &g.data[oc * oh * ow..(oc + 1) * oh * ow];
            grads.bias[oc] += gp.iter().sum::<f64>();
            for ic in 0..ic_n {
                let xin = &x.data[ic * h * w..(ic + 1) * h * w];
                let dxin = &mut dx[ic * h * w..(ic + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let wi = ((oc * ic_n + ic) * k + ky) * k + kx;
                        let wv = wt[wi];
                        let mut acc = 0.0;
                        for oy in 0..oh {
                            let base = (oy + ky) * w + kx;
                            let grow = &gp[oy * ow..(oy + 1) * ow];
                            let xrow = &xin[base..base + ow];
                            acc += grow.iter().zip(xrow).map(|(gv, xv)| gv * xv).sum::<f64>();
                            if want_dx {
                                let drow = &mut dxin[base..base + ow];
                                for (gv, dv) in grow.iter().zip(drow.iter_mut()) {
                                    *dv += wv * gv;
                                }
                            }
                        }
                        grads.weight[wi] += acc;
                    }
                }
            }
        }
        Tensor {
            shape: x.shape,
            data: dx,
        }
    }
}

impl MaxPool {
    pub fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let [c, h, w] = input;
        if h < self.size || w < self.size || self.stride == 0 {
            return Err(Error::shape(
                format!("side ≥ {}", self.size),
                format!("{input:?}"),
            ));
        }
        Ok([
            c,
            (h - self.size) / self.stride + 1,
            (w - self.size) / self.stride + 1,
        ])
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let [c, oh, ow] = self.output_shape(x.shape)?;
        let [_, h, w] = x.shape;
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for py in 0..self.size {
                        for px in 0..self.size {
                            let i = ch * h * w + (oy * self.stride + py) * w + ox * self.stride + px;
                            // strict comparison: first maximum wins ties
                            if x.data[i] > best {
                                best = x.data[i];
                                best_i = i;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_i);
                }
            }
        }
        Ok((Tensor::new([c, oh, ow], out)?, argmax))
    }
}

impl Dense {
    /// He-normal weights (or all-zero when `zero`), zero bias.
    pub fn new(inputs: usize, outputs: usize, zero: bool, rng: &mut Rng) -> Self {
        let std = (2.0 / inputs as f64).sqrt();
        let weight = (0..inputs * outputs)
            .map(|_| if zero { 0.0 } else { rng.normal() * std })
            .collect();
        Self {
            inputs,
            outputs,
            params: LayerParams {
                weight,
                bias: vec![0.0; outputs],
            },
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.len() != self.inputs {
            return Err(Error::shape(self.inputs, x.len()));
        }
        let out = self
            .params
            .weight
            .chunks_exact(self.inputs)
            .zip(&self.params.bias)
            .map(|(row, b)| b + row.iter().zip(&x.data).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        Ok(Tensor::flat(out))
    }

    fn backward(&self, x: &Tensor, g: &Tensor, grads: &mut LayerParams) -> Tensor {
        let mut dx = vec![0.0; self.inputs];
        for (j, &gj) in g.data.iter().enumerate() {
            grads.bias[j] += gj;
            if gj == 0.0 {
                continue;
            }
            let row = &self.params.weight[j * self.inputs..(j + 1) * self.inputs];
            let grow = &mut grads.weight[j * self.inputs..(j + 1) * self.inputs];
            for k in 0..self.inputs {
                grow[k] += gj * x.data[k];
                dx[k] += gj * row[k];
            }
        }
        Tensor {
            shape: x.shape,
            data: dx,
        }
    }
}

impl Layer {
    pub fn params(&self) -> Option<&LayerParams> {
        match self {
            Layer::Conv(c) => Some(&c.params),
            Layer::Dense(d) => Some(&d.params),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut LayerParams> {
        match self {
            Layer::Conv(c) => Some(&mut c.params),
            Layer::Dense(d) => Some(&mut d.params),
            _ => None,
        }
    }

    pub fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        match self {
            Layer::Conv(c) => c.output_shape(input),
            Layer::MaxPool(p) => p.output_shape(input),
            Layer::Dense(d) => {
                let n: usize = input.iter().product();
                if n != d.inputs {
                    return Err(Error::shape(d.inputs, n));
                }
                Ok([d.outputs, 1, 1])
            }
            Layer::Relu | Layer::Dropout { .. } => Ok(input),
        }
    }

    /// Forward pass; dropout draws its mask from `rng` in train mode.
    pub fn forward(&self, x: &Tensor, mode: Mode, rng: Option<&mut Rng>) -> Result<(Tensor, Cache)> {
        match self {
            Layer::Conv(c) => Ok((c.forward(x)?, Cache::Input(x.clone()))),
            Layer::Dense(d) => Ok((d.forward(x)?, Cache::Input(x.clone()))),
            Layer::Relu => {
                let out = x.data.iter().map(|&v| v.max(0.0)).collect();
                Ok((
                    Tensor {
                        shape: x.shape,
                        data: out,
                    },
                    Cache::Input(x.clone()),
                ))
            }
            Layer::MaxPool(p) => {
                let (out, argmax) = p.forward(x)?;
                Ok((
                    out,
                    Cache::Pool {
                        input_shape: x.shape,
                        argmax,
                    },
                ))
            }
            Layer::Dropout { rate } => {
                if mode == Mode::Eval || *rate == 0.0 {
                    return Ok((x.clone(), Cache::Dropout(None)));
                }
                let rng = rng.ok_or_else(|| Error::invalid("dropout in train mode needs an rng"))?;
                let keep = 1.0 - rate;
                let mask: Vec<f64> = (0..x.len())
                    .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                let out = x.data.iter().zip(&mask).map(|(v, m)| v * m).collect();
                Ok((
                    Tensor {
                        shape: x.shape,
                        data: out,
                    },
                    Cache::Dropout(Some(mask)),
                ))
            }
        }
    }

    /// Backward pass. Parameter gradients are added into `grads`, which must be
    /// shaped like this layer's params (ignored for parameter-free layers).
    pub fn backward(&self, cache: &Cache, g: &Tensor, grads: Option<&mut LayerParams>) -> Result<Tensor> {
        self.backward_with(cache, g, grads, true)
    }

    /// As [`Layer::backward`]; with `want_dx` false a conv layer skips the
    /// input gradient and returns zeros.
    pub fn backward_with(&self, cache: &Cache, g: &Tensor, grads: Option<&mut LayerParams>, want_dx: bool) -> Result<Tensor> {
        match (self, cache) {
            (Layer::Conv(c), Cache::Input(x)) => {
                let grads = grads.ok_or_else(|| Error::invalid("conv backward needs grads"))?;
                Ok(c.backward(x, g, grads, want_dx))
            }
            (Layer::Dense(d), Cache::Input(x)) => {
                let grads = grads.ok_or_else(|| Error::invalid("dense backward needs grads"))?;
                Ok(d.backward(x, g, grads))
            }
            (Layer::Relu, Cache::Input(x)) => Ok(Tensor {
                shape: x.shape,
                data: x
                    .data
                    .iter()
                    .zip(&g.data)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect(),
            }),
            (Layer::MaxPool(_), Cache::Pool { input_shape, argmax }) => {
                let mut dx = Tensor::zeros(*input_shape);
                for (&i, &gv) in argmax.iter().zip(&g.data) {
                    dx.data[i] += gv;
                }
                Ok(dx)
            }
            (Layer::Dropout { .. }, Cache::Dropout(mask)) => Ok(match mask {
                None => g.clone(),
                Some(m) => Tensor {
                    shape: g.shape,
                    data: g.data.iter().zip(m).map(|(a, b)| a * b).collect(),
                },
            }),
            _ => Err(Error::invalid("cache does not belong to this layer")),
        }
    }

    pub fn kind_code(&self) -> u32 {
        match self {
            Layer::Conv(_) => 1,
            Layer::Relu => 2,
            Layer::MaxPool(_) => 3,
            Layer::Dense(_) => 4,
            Layer::Dropout { .. } => 5,
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Cross-entropy of a 0-based class index and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &[f64], class: usize) -> (f64, Vec<f64>) {
    let p = softmax(logits);
    let loss = -p[class].max(f64::MIN_POSITIVE).ln();
    let mut g = p;
    g[class] -= 1.0;
    (loss, g)
}
