//! Shared machinery for the gradient-trained networks: the loss heads, the
//! minibatch Adam loop with dropout, target noise and early stopping, and a
//! central-difference gradient checker.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::learners::optim::Adam;
use crate::learners::{Hyper, Input, LabeledData, LstmNet, MlpNet, Model, TrainConfig, Validation};
use crate::linalg::{sigmoid, Matrix};
use crate::rng;

const BCE_EPS: f64 = 1e-12;

/// Loss on the scalar network output `z`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// binary cross-entropy on `sigmoid(z)`
    Bce,
    /// squared error on `z`
    Mse,
}

impl Objective {
    /// `(w·ℓ(z, t), w·dℓ/dz)`.
    pub fn sample(self, z: f64, t: f64, w: f64) -> (f64, f64) {
        match self {
            Objective::Bce => {
                let s = sigmoid(z);
                let sc = s.clamp(BCE_EPS, 1.0 - BCE_EPS);
                let l = -(t * sc.ln() + (1.0 - t) * (1.0 - sc).ln());
                (w * l, w * (s - t))
            }
            Objective::Mse => {
                let r = z - t;
                (w * r * r, 2.0 * w * r)
            }
        }
    }

    pub fn link(self, z: f64) -> f64 {
        match self {
            Objective::Bce => sigmoid(z),
            Objective::Mse => z,
        }
    }
}

/// Inverted dropout: active units are scaled by `1 / (1 - rate)`.
pub struct Dropout<'r> {
    rate: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r> Dropout<'r> {
    pub fn off() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn new(rate: f64, rng: &'r mut ChaCha8Rng) -> Self {
        if rate > 0.0 {
            Dropout { rate, rng: Some(rng) }
        } else {
            Dropout::off()
        }
    }

    /// Multiplier for one unit: 0 or `1 / (1 - rate)`.
    pub fn mask(&mut self) -> f64 {
        match self.rng.as_deref_mut() {
            Some(r) => {
                if r.random::<f64>() < self.rate {
                    0.0
                } else {
                    1.0 / (1.0 - self.rate)
                }
            }
            None => 1.0,
        }
    }
}

/// A scalar-output network over a flat parameter vector.
pub trait Net {
    type Input: ?Sized;

    fn theta(&self) -> &[f64];
    fn theta_mut(&mut self) -> &mut [f64];
    /// parameter ranges subject to the l2 penalty
    fn penalized(&self) -> Vec<Range<usize>>;
    fn check_input(&self, x: &Self::Input) -> Result<()>;
    /// Output without dropout.
    fn forward(&self, x: &Self::Input) -> f64;
    /// Forward pass with dropout, then `head(z) = (loss, dloss/dz)`, then the
    /// backward pass accumulating into `grad`. Returns the loss.
    fn backprop(&self, x: &Self::Input, drop: &mut Dropout<'_>, head: &mut dyn FnMut(f64) -> (f64, f64), grad: &mut [f64]) -> f64;
}

/// `(1/B) Σ w_i ℓ_i + (l2/2) Σ_penalized θ²` and its gradient.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss_grad<N: Net>(
    net: &N,
    xs: &[&N::Input],
    targets: &[f64],
    weights: &[f64],
    objective: Objective,
    l2: f64,
    drop: &mut Dropout<'_>,
) -> (f64, Vec<f64>) {
    let theta = net.theta();
    let mut grad = vec![0.0; theta.len()];
    let mut loss = 0.0;
    let b = xs.len() as f64;
    for ((x, &t), &w) in xs.iter().zip(targets).zip(weights) {
        let mut head = |z: f64| {
            let (l, dz) = objective.sample(z, t, w);
            (l / b, dz / b)
        };
        loss += net.backprop(x, drop, &mut head, &mut grad);
    }
    if l2 > 0.0 {
        for r in net.penalized() {
            for i in r {
                loss += 0.5 * l2 * theta[i] * theta[i];
                grad[i] += l2 * theta[i];
            }
        }
    }
    (loss, grad)
}

/// Largest relative discrepancy between the analytic gradient and central
/// differences with step `h`, over every parameter. The denominator is
/// `max(|analytic|, |numeric|, 1e-6)` so vanishing components compare in
/// absolute terms.
pub fn gradient_check<N: Net + Clone>(
    net: &N,
    xs: &[&N::Input],
    targets: &[f64],
    weights: &[f64],
    objective: Objective,
    l2: f64,
    h: f64,
) -> f64 {
    let (_, g) = batch_loss_grad(net, xs, targets, weights, objective, l2, &mut Dropout::off());
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for i in 0..g.len() {
        let orig = probe.theta()[i];
        probe.theta_mut()[i] = orig + h;
        let lp = batch_loss_grad(&probe, xs, targets, weights, objective, l2, &mut Dropout::off()).0;
        probe.theta_mut()[i] = orig - h;
        let lm = batch_loss_grad(&probe, xs, targets, weights, objective, l2, &mut Dropout::off()).0;
        probe.theta_mut()[i] = orig;
        let fd = (lp - lm) / (2.0 * h);
        let denom = g[i].abs().max(fd.abs()).max(1e-6);
        worst = worst.max((g[i] - fd).abs() / denom);
    }
    worst
}

/// Minibatch Adam with per-epoch Gaussian target noise and dropout. With a
/// validation set, training stops after `patience` epochs without a metric
/// improvement and the best parameters are restored.
#[allow(clippy::too_many_arguments)]
pub fn train<N: Net + Clone>(
    net: &mut N,
    xs: &[&N::Input],
    targets: &[f64],
    weights: &[f64],
    objective: Objective,
    cfg: &TrainConfig,
    val: Option<(&[&N::Input], &(dyn Fn(&[f64]) -> f64 + Sync))>,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let n = xs.len();
    let mut opt = Adam::new(net.theta().len(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..n).collect();
    let mut noisy = targets.to_vec();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut stale = 0usize;
    let mut batch_x: Vec<&N::Input> = Vec::with_capacity(cfg.batch_size);
    let mut batch_t = Vec::with_capacity(cfg.batch_size);
    let mut batch_w = Vec::with_capacity(cfg.batch_size);
    for _epoch in 0..cfg.epochs {
        order.shuffle(rng);
        if cfg.target_noise_sd > 0.0 {
            for (v, &t) in noisy.iter_mut().zip(targets) {
                let e: f64 = rng.sample(StandardNormal);
                let p = t + cfg.target_noise_sd * e;
                *v = match objective {
                    Objective::Bce => p.clamp(0.0, 1.0),
                    Objective::Mse => p,
                };
            }
        }
        for chunk in order.chunks(cfg.batch_size) {
            batch_x.clear();
            batch_t.clear();
            batch_w.clear();
            for &i in chunk {
                batch_x.push(xs[i]);
                batch_t.push(noisy[i]);
                batch_w.push(weights[i]);
            }
            let mut drop = Dropout::new(cfg.dropout_rate, rng);
            let (loss, grad) = batch_loss_grad(net, &batch_x, &batch_t, &batch_w, objective, cfg.l2, &mut drop);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::training("non-finite loss or gradient"));
            }
            opt.step(net.theta_mut(), &grad);
        }
        if let Some((vx, metric)) = val {
            let preds: Vec<f64> = vx.iter().map(|x| objective.link(net.forward(x))).collect();
            let m = metric(&preds);
            let m = if m.is_nan() { f64::NEG_INFINITY } else { m };
            if best.as_ref().is_none_or(|b| m > b.0) {
                best = Some((m, net.theta().to_vec()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.early_stop_patience {
                    break;
                }
            }
        }
    }
    if let Some((_, theta)) = best {
        net.theta_mut().copy_from_slice(&theta);
    }
    Ok(())
}

/// Builds and trains the network named by `hyper` (MLP or LSTM).
pub fn fit(
    hyper: &Hyper,
    cfg: &TrainConfig,
    data: &LabeledData<'_>,
    weights: &[f64],
    objective: Objective,
    val: Option<&Validation<'_>>,
    seed: u64,
) -> Result<Model> {
    cfg.validate()?;
    let mut init = rng::stream(seed, "init");
    let mut rng = rng::stream(seed, "train");
    match hyper {
        Hyper::Mlp {
            hidden1,
            hidden2,
            shrink_small_inputs,
        } => {
            let xs: Vec<&[f64]> = data.inputs.iter().map(|x| x.vector()).collect::<Result<_>>()?;
            let d = xs[0].len();
            let (h1, h2) = if *shrink_small_inputs && d < 500 {
                (100.min(*hidden1), 10.min(*hidden2))
            } else {
                (*hidden1, *hidden2)
            };
            let mut net = MlpNet::new(d, h1, h2, &mut init);
            for x in &xs {
                net.check_input(x)?;
            }
            let vx: Option<Vec<&[f64]>> = match val {
                Some(v) => Some(v.inputs.iter().map(|x| x.vector()).collect::<Result<_>>()?),
                None => None,
            };
            let vpair = match (&vx, val) {
                (Some(vx), Some(v)) => Some((vx.as_slice(), v.metric)),
                _ => None,
            };
            train(&mut net, &xs, &data.targets, weights, objective, cfg, vpair, &mut rng)?;
            Ok(Model::Mlp(net))
        }
        Hyper::Lstm { hidden } => {
            let xs: Vec<&Matrix> = data.inputs.iter().map(|x| x.sequence()).collect::<Result<_>>()?;
            let f = xs[0].cols();
            let mut net = LstmNet::new(f, *hidden, &mut init);
            for x in &xs {
                net.check_input(x)?;
            }
            let vx: Option<Vec<&Matrix>> = match val {
                Some(v) => Some(v.inputs.iter().map(|x: &Input<'_>| x.sequence()).collect::<Result<_>>()?),
                None => None,
            };
            let vpair = match (&vx, val) {
                (Some(vx), Some(v)) => Some((vx.as_slice(), v.metric)),
                _ => None,
            };
            train(&mut net, &xs, &data.targets, weights, objective, cfg, vpair, &mut rng)?;
            Ok(Model::Lstm(net))
        }
        other => Err(Error::invalid(format!("{other:?} is not a neural learner"))),
    }
}

/// Uniform `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> f64 {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    rng.random_range(-a..a)
}

/// Uniform `±sqrt(6 / fan_in)`.
pub fn he<R: Rng>(rng: &mut R, fan_in: usize) -> f64 {
    let a = (6.0 / fan_in as f64).sqrt();
    rng.random_range(-a..a)
}
