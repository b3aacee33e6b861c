//! Logistic regression (weighted, l2) by preconditioned accelerated gradient
//! descent, and closed-form ridge regression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::ClassWeights;
use crate::linalg::{cholesky_solve, dot, sigmoid};

/// `raw(x) = w·x / input_scale + bias`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub input_scale: f64,
}

impl LinearModel {
    pub fn raw(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::invalid(format!(
                "dimension mismatch: model has {} weights, input has {}",
                self.weights.len(),
                x.len()
            )));
        }
        Ok(dot(&self.weights, x) / self.input_scale + self.bias)
    }
}

/// Largest eigenvalue of `(1/N) Σ x̃ x̃ᵀ` with `x̃ = [x, 1]`, by power
/// iteration (capped by the trace, which bounds it from above).
fn gram_top_eigenvalue(xs: &[&[f64]]) -> f64 {
    let d = xs[0].len();
    let n = xs.len() as f64;
    let trace = xs.iter().map(|x| dot(x, x) + 1.0).sum::<f64>() / n;
    let mut v = vec![1.0 / ((d + 1) as f64).sqrt(); d + 1];
    let mut lambda = 0.0;
    for _ in 0..100 {
        let mut next = vec![0.0; d + 1];
        for x in xs {
            let p = dot(&v[..d], x) + v[d];
            for (nj, xj) in next.iter_mut().zip(x.iter()) {
                *nj += p * xj;
            }
            next[d] += p;
        }
        let norm = next.iter().map(|a| a * a).sum::<f64>().sqrt() / n;
        if norm == 0.0 {
            break;
        }
        lambda = norm;
        for (a, b) in v.iter_mut().zip(&next) {
            *a = b / (norm * n);
        }
    }
    (lambda * 1.1).min(trace).max(1e-12)
}

/// Weighted logistic loss `(1/N) Σ w_i ℓ_i + (l2/2)‖w‖²` and its gradient
/// (last entry is the intercept).
pub fn logistic_loss_grad(
    xs: &[&[f64]],
    y: &[f64],
    sw: &[f64],
    l2: f64,
    theta: &[f64],
) -> (f64, Vec<f64>) {
    let d = theta.len() - 1;
    let n = xs.len() as f64;
    let mut g = vec![0.0; d + 1];
    let mut loss = 0.0;
    for ((x, &t), &w) in xs.iter().zip(y).zip(sw) {
        let z = dot(&theta[..d], x) + theta[d];
        // log(1 + e^z) - t z, stable
        let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        loss += w * (softplus - t * z);
        let r = w * (sigmoid(z) - t) / n;
        for (gj, xj) in g[..d].iter_mut().zip(x.iter()) {
            *gj += r * xj;
        }
        g[d] += r;
    }
    loss /= n;
    let wn: f64 = theta[..d].iter().map(|a| a * a).sum();
    loss += 0.5 * l2 * wn;
    for (gj, tj) in g[..d].iter_mut().zip(&theta[..d]) {
        *gj += l2 * tj;
    }
    (loss, g)
}

pub fn fit_logistic(
    xs: &[&[f64]],
    y: &[f64],
    weights: &ClassWeights,
    l2: f64,
    iters: usize,
) -> Result<LinearModel> {
    let d = xs[0].len();
    let sw: Vec<f64> = y.iter().map(|&t| weights.of(t)).collect();
    let wmax = weights.w_pos.max(weights.w_neg);
    let smooth = 0.25 * wmax * gram_top_eigenvalue(xs);
    let mut step = vec![1.0 / (smooth + l2); d + 1];
    step[d] = 1.0 / smooth;

    let mut theta = vec![0.0; d + 1];
    let mut look = theta.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let (loss, g) = logistic_loss_grad(xs, y, &sw, l2, &look);
        if !loss.is_finite() {
            return Err(Error::training("logistic regression loss is not finite"));
        }
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < 1e-10 {
            theta = look;
            break;
        }
        let next: Vec<f64> = look.iter().zip(&g).zip(&step).map(|((a, b), s)| a - s * b).collect();
        // momentum restart when the step opposes the gradient direction
        let progress: f64 = g.iter().zip(next.iter().zip(&theta)).map(|(gi, (a, b))| gi * (a - b)).sum();
        let t_next = if progress > 0.0 { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()) };
        let beta = if progress > 0.0 { 0.0 } else { (t - 1.0) / t_next };
        look = next.iter().zip(&theta).map(|(a, b)| a + beta * (a - b)).collect();
        theta = next;
        t = t_next;
    }
    let bias = theta[d];
    theta.truncate(d);
    Ok(LinearModel {
        weights: theta,
        bias,
        input_scale: 1.0,
    })
}

/// Minimizes `(1/N) Σ (y - w·x - b)² + l2 ‖w‖²` in closed form.
pub fn fit_ridge(xs: &[&[f64]], y: &[f64], l2: f64) -> Result<LinearModel> {
    let d = xs[0].len();
    let n = xs.len() as f64;
    let mut mx = vec![0.0; d];
    for x in xs {
        for (m, v) in mx.iter_mut().zip(x.iter()) {
            *m += v;
        }
    }
    for m in &mut mx {
        *m /= n;
    }
    let my = y.iter().sum::<f64>() / n;
    let mut gram = vec![0.0; d * d];
    let mut rhs = vec![0.0; d];
    let mut c = vec![0.0; d];
    for (x, &t) in xs.iter().zip(y) {
        for j in 0..d {
            c[j] = x[j] - mx[j];
        }
        let ty = t - my;
        for i in 0..d {
            rhs[i] += c[i] * ty;
            let row = &mut gram[i * d..i * d + d];
            let ci = c[i];
            for j in 0..=i {
                row[j] += ci * c[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let v = gram[i * d + j] / n;
            gram[i * d + j] = v;
            gram[j * d + i] = v;
        }
        gram[i * d + i] += l2;
        rhs[i] /= n;
    }
    let w = cholesky_solve(&gram, &rhs, d)
        .map_err(|e| e.context("ridge regression system is singular; increase l2"))?;
    let bias = my - dot(&w, &mx);
    Ok(LinearModel {
        weights: w,
        bias,
        input_scale: 1.0,
    })
}
