//! Linear support-vector machines trained in the primal with Pegasos-style
//! stochastic subgradient steps. Inputs are divided by the kernel scale and
//! augmented with a constant 1 feature for the intercept; the returned model
//! is the average of the iterates over the second half of training.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::learners::{ClassWeights, LinearModel};
use crate::linalg::dot;
use crate::rng;

enum Loss {
    /// labels ±1, per-sample weights
    Hinge { y: Vec<f64>, w: Vec<f64> },
    EpsInsensitive { y: Vec<f64>, eps: f64 },
}

fn pegasos(xs: &[&[f64]], scale: f64, lambda: f64, radius: f64, loss: &Loss, epochs: usize, seed: u64) -> Result<LinearModel> {
    let d = xs[0].len();
    let n = xs.len();
    let z: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| x.iter().map(|v| v / scale).chain(std::iter::once(1.0)).collect())
        .collect();
    let mut w = vec![0.0; d + 1];
    let mut avg = vec![0.0; d + 1];
    let mut averaged = 0usize;
    let total = epochs * n;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::seeded(seed);
    let mut t = 0usize;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let pred = dot(&w, &z[i]);
            let shrink = 1.0 - eta * lambda;
            for v in w.iter_mut() {
                *v *= shrink;
            }
            let coef = match loss {
                Loss::Hinge { y, w: sw } => {
                    if y[i] * pred < 1.0 {
                        eta * sw[i] * y[i]
                    } else {
                        0.0
                    }
                }
                Loss::EpsInsensitive { y, eps } => {
                    let r = pred - y[i];
                    if r > *eps {
                        -eta
                    } else if r < -*eps {
                        eta
                    } else {
                        0.0
                    }
                }
            };
            if coef != 0.0 {
                for (v, zi) in w.iter_mut().zip(&z[i]) {
                    *v += coef * zi;
                }
            }
            let norm = dot(&w, &w).sqrt();
            if norm > radius {
                let s = radius / norm;
                for v in w.iter_mut() {
                    *v *= s;
                }
            }
            if 2 * t > total {
                for (a, v) in avg.iter_mut().zip(&w) {
                    *a += v;
                }
                averaged += 1;
            }
        }
    }
    for a in avg.iter_mut() {
        *a /= averaged.max(1) as f64;
    }
    if avg.iter().any(|v| !v.is_finite()) {
        return Err(Error::training("SVM weights are not finite"));
    }
    let bias = avg[d];
    avg.truncate(d);
    Ok(LinearModel {
        weights: avg,
        bias,
        input_scale: scale,
    })
}

/// Weighted hinge loss + l2 with `λ = 1 / (c · N)`.
pub fn fit_svm(
    xs: &[&[f64]],
    labels: &[f64],
    weights: &ClassWeights,
    c: f64,
    scale: f64,
    epochs: usize,
    seed: u64,
) -> Result<LinearModel> {
    let n = xs.len() as f64;
    let lambda = 1.0 / (c * n);
    let y: Vec<f64> = labels.iter().map(|&t| if t >= 0.5 { 1.0 } else { -1.0 }).collect();
    let w: Vec<f64> = labels.iter().map(|&t| weights.of(t)).collect();
    let mean_w = w.iter().sum::<f64>() / n;
    let radius = (2.0 * mean_w / lambda).sqrt();
    pegasos(xs, scale, lambda, radius, &Loss::Hinge { y, w }, epochs, seed)
}

/// ε-insensitive regression + l2 with `λ = 1 / (c · N)`.
pub fn fit_svr(
    xs: &[&[f64]],
    targets: &[f64],
    c: f64,
    scale: f64,
    epsilon: f64,
    epochs: usize,
    seed: u64,
) -> Result<LinearModel> {
    let n = xs.len() as f64;
    let lambda = 1.0 / (c * n);
    let base = targets.iter().map(|y| (y.abs() - epsilon).max(0.0)).sum::<f64>() / n;
    let radius = (2.0 * base.max(1e-12) / lambda).sqrt();
    pegasos(
        xs,
        scale,
        lambda,
        radius,
        &Loss::EpsInsensitive {
            y: targets.to_vec(),
            eps: epsilon,
        },
        epochs,
        seed,
    )
}
