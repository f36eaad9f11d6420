use crate::error::{Error, Result};
use crate::nn::layers::{Cache, Layer, LayerParams, Mode, Tensor};
use crate::rng::Rng;

/// A plain layer stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

/// Parameter gradients, one entry per layer (empty for parameter-free layers).
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads(pub Vec<LayerParams>);

impl NetGrads {
    pub fn add_assign(&mut self, other: &NetGrads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().for_each(|g| g.scale(s));
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(LayerParams::is_finite)
    }
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.layers
            .iter()
            .try_fold(input, |shape, layer| layer.output_shape(shape))
    }

    pub fn forward(&self, x: &Tensor, mode: Mode, mut rng: Option<&mut Rng>) -> Result<(Tensor, Vec<Cache>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (out, cache) = layer.forward(&cur, mode, rng.as_deref_mut())?;
            caches.push(cache);
            cur = out;
        }
        Ok((cur, caches))
    }

    /// Eval-mode forward without keeping caches.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur, Mode::Eval, None)?.0;
        }
        Ok(cur)
    }

    pub fn zero_grads(&self) -> NetGrads {
        NetGrads(
            self.layers
                .iter()
                .map(|l| match l.params() {
                    Some(p) => p.zeros_like(),
                    None => LayerParams {
                        weight: vec![],
                        bias: vec![],
                    },
                })
                .collect(),
        )
    }

    /// Backpropagates `g`; parameter gradients are accumulated into `grads`
    /// when given. Returns the gradient w.r.t. the network input.
    pub fn backward(&self, caches: &[Cache], g: &Tensor, grads: Option<&mut NetGrads>) -> Result<Tensor> {
        self.backward_with(caches, g, grads, true)
    }

    /// Parameter gradients only; the returned input gradient is not computed.
    pub fn backward_params(&self, caches: &[Cache], g: &Tensor, grads: &mut NetGrads) -> Result<()> {
        self.backward_with(caches, g, Some(grads), false).map(|_| ())
    }

    fn backward_with(&self, caches: &[Cache], g: &Tensor, mut grads: Option<&mut NetGrads>, want_dx: bool) -> Result<Tensor> {
        if caches.len() != self.layers.len() {
            return Err(Error::invalid("cache count does not match layer count"));
        }
        let mut cur = g.clone();
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let dx = want_dx || i > 0;
            cur = match (layer.params(), grads.as_deref_mut()) {
                (Some(_), Some(gs)) => layer.backward_with(cache, &cur, Some(&mut gs.0[i]), dx)?,
                (Some(p), None) => {
                    let mut scratch = p.zeros_like();
                    layer.backward_with(cache, &cur, Some(&mut scratch), dx)?
                }
                (None, _) => layer.backward_with(cache, &cur, None, dx)?,
            };
        }
        Ok(cur)
    }

    pub fn apply_sgd(&mut self, grads: &NetGrads, lr: f64) -> Result<()> {
        for (layer, g) in self.layers.iter_mut().zip(&grads.0) {
            if let Some(p) = layer.params_mut() {
                crate::nn::layers::sgd_step(p, g, lr)?;
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().filter_map(|l| l.params()).map(|p| p.len()).sum()
    }

    /// Rounds every parameter to the nearest `f32`, the on-disk precision.
    pub fn round_to_f32(&mut self) {
        for layer in &mut self.layers {
            if let Some(p) = layer.params_mut() {
                p.weight
                    .iter_mut()
                    .chain(p.bias.iter_mut())
                    .for_each(|v| *v = *v as f32 as f64);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::Conv2d;

    #[test]
    fn param_only_backward_matches_full_backward() {
        let mut rng = Rng::new(3);
        let net = Network::new(vec![Layer::Conv(Conv2d::new(2, 3, 3, &mut rng)), Layer::Relu]);
        let x = Tensor::new([2, 6, 6], (0..72).map(|_| rng.range(-1.0, 1.0)).collect()).unwrap();
        let (y, caches) = net.forward(&x, Mode::Train, None).unwrap();
        let g = Tensor::new(y.shape, (0..y.len()).map(|_| rng.range(-1.0, 1.0)).collect()).unwrap();
        let mut full = net.zero_grads();
        net.backward(&caches, &g, Some(&mut full)).unwrap();
        let mut only = net.zero_grads();
        net.backward_params(&caches, &g, &mut only).unwrap();
        for (a, b) in full.0.iter().zip(&only.0) {
            for (u, v) in a.weight.iter().chain(&a.bias).zip(b.weight.iter().chain(&b.bias)) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }
}
