//! Central finite-difference checks of the analytic backward passes.

use crate::error::Result;
use crate::nn::layers::{softmax_cross_entropy, Conv2d, Dense, Layer, MaxPool, Mode, Tensor};
use crate::nn::network::Network;
use crate::rng::Rng;

pub const STEP: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Result of one check: the worst relative error over inputs and parameters.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Inputs bounded away from zero so ReLU kinks are never crossed by `±h`.
fn random_input(shape: [usize; 3], rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.range(0.05, 1.0);
            if rng.bernoulli(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Pool inputs: a shuffled ladder of distinct values spaced far wider than `h`.
fn distinct_input(shape: [usize; 3], rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.3).collect();
    rng.shuffle(&mut data);
    Tensor::new(shape, data).unwrap()
}

/// Checks one network against `f(x, θ) = Σ r ⊙ net(x)` for a fixed random `r`.
/// Dropout masks are frozen by reseeding the same stream for every evaluation.
pub fn check_network(name: &str, net: &Network, x: &Tensor, mode: Mode, seed: u64) -> Result<CheckReport> {
    let out_shape = net.output_shape(x.shape)?;
    let mut rr = Rng::new(seed ^ 0x5eed);
    let r: Vec<f64> = (0..out_shape.iter().product::<usize>())
        .map(|_| rr.range(-1.0, 1.0))
        .collect();
    let eval = |net: &Network, x: &Tensor| -> Result<f64> {
        let mut rng = Rng::new(seed);
        let (y, _) = net.forward(x, mode, Some(&mut rng))?;
        Ok(y.data.iter().zip(&r).map(|(a, b)| a * b).sum())
    };

    let mut rng = Rng::new(seed);
    let (_, caches) = net.forward(x, mode, Some(&mut rng))?;
    let mut grads = net.zero_grads();
    let g = Tensor::new(out_shape, r.clone())?;
    let dx = net.backward(&caches, &g, Some(&mut grads))?;

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data[i] += STEP;
        let mut xm = x.clone();
        xm.data[i] -= STEP;
        let num = (eval(net, &xp)? - eval(net, &xm)?) / (2.0 * STEP);
        worst = worst.max(relative_error(dx.data[i], num));
        checked += 1;
    }
    for (li, layer) in net.layers.iter().enumerate() {
        let Some(params) = layer.params() else { continue };
        let total = params.weight.len() + params.bias.len();
        // sample large layers on a fixed stride
        let stride = (total / 400).max(1);
        for pi in (0..total).step_by(stride) {
            let bump = |delta: f64| -> Result<f64> {
                let mut n2 = net.clone();
                let p = n2.layers[li].params_mut().unwrap();
                if pi < p.weight.len() {
                    p.weight[pi] += delta;
                } else {
                    p.bias[pi - p.weight.len()] += delta;
                }
                eval(&n2, x)
            };
            let num = (bump(STEP)? - bump(-STEP)?) / (2.0 * STEP);
            let g = &grads.0[li];
            let ana = if pi < g.weight.len() {
                g.weight[pi]
            } else {
                g.bias[pi - g.weight.len()]
            };
            worst = worst.max(relative_error(ana, num));
            checked += 1;
        }
    }
    Ok(CheckReport {
        name: name.to_string(),
        max_rel_error: worst,
        checked,
    })
}

/// Softmax cross-entropy gradient w.r.t. logits.
pub fn check_softmax_cross_entropy(seed: u64) -> CheckReport {
    let mut rng = Rng::new(seed);
    let logits: Vec<f64> = (0..11).map(|_| rng.range(-3.0, 3.0)).collect();
    let class = rng.index(11);
    let (_, g) = softmax_cross_entropy(&logits, class);
    let mut worst: f64 = 0.0;
    for i in 0..logits.len() {
        let mut p = logits.clone();
        p[i] += STEP;
        let mut m = logits.clone();
        m[i] -= STEP;
        let num = (softmax_cross_entropy(&p, class).0 - softmax_cross_entropy(&m, class).0)
            / (2.0 * STEP);
        worst = worst.max(relative_error(g[i], num));
    }
    CheckReport {
        name: "softmax-cross-entropy".into(),
        max_rel_error: worst,
        checked: logits.len(),
    }
}

/// Every layer type on seeded random tensors, plus a full conv stack.
pub fn check_all_layers(seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = Rng::new(seed);
    let mut reports = Vec::new();

    let conv = Network::new(vec![Layer::Conv(Conv2d::new(3, 4, 5, &mut rng))]);
    let x = random_input([3, 9, 9], &mut rng);
    reports.push(check_network("conv5x5", &conv, &x, Mode::Train, seed)?);

    let conv3 = Network::new(vec![Layer::Conv(Conv2d::new(2, 3, 3, &mut rng))]);
    let x = random_input([2, 6, 7], &mut rng);
    reports.push(check_network("conv3x3", &conv3, &x, Mode::Train, seed)?);

    let relu = Network::new(vec![Layer::Relu]);
    let x = random_input([2, 4, 4], &mut rng);
    reports.push(check_network("relu", &relu, &x, Mode::Train, seed)?);

    let pool = Network::new(vec![Layer::MaxPool(MaxPool { size: 3, stride: 3 })]);
    let x = distinct_input([2, 9, 9], &mut rng);
    reports.push(check_network("maxpool", &pool, &x, Mode::Train, seed)?);

    let dense = Network::new(vec![Layer::Dense(Dense::new(12, 7, false, &mut rng))]);
    let x = random_input([12, 1, 1], &mut rng);
    reports.push(check_network("dense", &dense, &x, Mode::Train, seed)?);

    let dropout = Network::new(vec![Layer::Dropout { rate: 0.5 }]);
    let x = random_input([20, 1, 1], &mut rng);
    reports.push(check_network("dropout", &dropout, &x, Mode::Train, seed)?);

    // conv → relu → pool → dense: exercises shape plumbing between layers
    let stack = Network::new(vec![
        Layer::Conv(Conv2d::new(3, 2, 3, &mut rng)),
        Layer::Relu,
        Layer::MaxPool(MaxPool { size: 3, stride: 3 }),
        Layer::Dense(Dense::new(2 * 3 * 3, 5, false, &mut rng)),
    ]);
    let x = random_input([3, 11, 11], &mut rng);
    reports.push(check_network("stack", &stack, &x, Mode::Eval, seed)?);

    reports.push(check_softmax_cross_entropy(seed));
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_passes() {
        for seed in [1, 2] {
            for r in check_all_layers(seed).unwrap() {
                assert!(r.max_rel_error < 1e-4, "{}: {:e}", r.name, r.max_rel_error);
                assert!(r.checked > 0);
            }
        }
    }
}
