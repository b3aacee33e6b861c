//! Single-layer LSTM over a `T × F` sequence. The hidden states are
//! mean-pooled over time and mapped to a scalar by a linear head.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::neural::{glorot, Dropout, Net};
use crate::linalg::{sigmoid, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct LstmNet {
    input: usize,
    hidden: usize,
    /// W (4H×F), U (4H×H), b (4H), v (H), c; gate blocks ordered i, f, g, o
    theta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LstmTensors {
    pub w: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub v: Vec<f64>,
    pub c: f64,
}

struct Layout {
    w: usize,
    u: usize,
    b: usize,
    v: usize,
    c: usize,
    len: usize,
}

fn layout(f: usize, h: usize) -> Layout {
    let w = 0;
    let u = w + 4 * h * f;
    let b = u + 4 * h * h;
    let v = b + 4 * h;
    let c = v + h;
    Layout { w, u, b, v, c, len: c + 1 }
}

impl LstmNet {
    /// Uniform `±1/sqrt(H)` recurrent and input weights, forget-gate bias 1.
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let l = layout(input, hidden);
        let mut theta = vec![0.0; l.len];
        let a = 1.0 / (hidden as f64).sqrt();
        for v in &mut theta[l.w..l.b] {
            *v = rng.random_range(-a..a);
        }
        for v in &mut theta[l.b + hidden..l.b + 2 * hidden] {
            *v = 1.0;
        }
        for v in &mut theta[l.v..l.c] {
            *v = glorot(rng, hidden, 1);
        }
        LstmNet { input, hidden, theta }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmNet {
            input,
            hidden,
            theta: vec![0.0; layout(input, hidden).len],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn layout(&self) -> Layout {
        layout(self.input, self.hidden)
    }

    /// Raw (pre-link) output.
    pub fn output(&self, x: &Matrix) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.forward(x))
    }

    pub fn tensors(&self) -> LstmTensors {
        let l = self.layout();
        let (f, h) = (self.input, self.hidden);
        let rows = |start: usize, w: usize| -> Vec<Vec<f64>> {
            (0..4 * h).map(|j| self.theta[start + j * w..start + (j + 1) * w].to_vec()).collect()
        };
        LstmTensors {
            w: rows(l.w, f),
            u: rows(l.u, h),
            b: self.theta[l.b..l.v].to_vec(),
            v: self.theta[l.v..l.c].to_vec(),
            c: self.theta[l.c],
        }
    }

    pub fn from_tensors(t: LstmTensors) -> Result<Self> {
        let h = t.v.len();
        let f = t.w.first().map_or(0, Vec::len);
        let ok = h > 0
            && f > 0
            && t.w.len() == 4 * h
            && t.w.iter().all(|r| r.len() == f)
            && t.u.len() == 4 * h
            && t.u.iter().all(|r| r.len() == h)
            && t.b.len() == 4 * h;
        if !ok {
            return Err(Error::data("lstm parameters have inconsistent shapes"));
        }
        let mut theta = Vec::with_capacity(layout(f, h).len);
        t.w.iter().for_each(|r| theta.extend_from_slice(r));
        t.u.iter().for_each(|r| theta.extend_from_slice(r));
        theta.extend_from_slice(&t.b);
        theta.extend_from_slice(&t.v);
        theta.push(t.c);
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("lstm parameters contain non-finite values"));
        }
        Ok(LstmNet {
            input: f,
            hidden: h,
            theta,
        })
    }

    /// Runs the recurrence; returns per-step activated gates (T×4H), cell
    /// states (T×H) and hidden states (T×H).
    fn run(&self, x: &Matrix) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let l = self.layout();
        let (f, h) = (self.input, self.hidden);
        let steps = x.rows();
        let th = &self.theta;
        let mut gates = vec![0.0; steps * 4 * h];
        let mut cells = vec![0.0; steps * h];
        let mut hs = vec![0.0; steps * h];
        let mut a = vec![0.0; 4 * h];
        for t in 0..steps {
            let xt = x.row(t);
            a.copy_from_slice(&th[l.b..l.v]);
            for (j, aj) in a.iter_mut().enumerate() {
                let wrow = &th[l.w + j * f..l.w + (j + 1) * f];
                *aj += wrow.iter().zip(xt).map(|(w, x)| w * x).sum::<f64>();
                if t > 0 {
                    let urow = &th[l.u + j * h..l.u + (j + 1) * h];
                    let hprev = &hs[(t - 1) * h..t * h];
                    *aj += urow.iter().zip(hprev).map(|(u, x)| u * x).sum::<f64>();
                }
            }
            let g = &mut gates[t * 4 * h..(t + 1) * 4 * h];
            for k in 0..h {
                let i = sigmoid(a[k]);
                let fg = sigmoid(a[h + k]);
                let gg = a[2 * h + k].tanh();
                let o = sigmoid(a[3 * h + k]);
                g[k] = i;
                g[h + k] = fg;
                g[2 * h + k] = gg;
                g[3 * h + k] = o;
                let cprev = if t > 0 { cells[(t - 1) * h + k] } else { 0.0 };
                let c = fg * cprev + i * gg;
                cells[t * h + k] = c;
                hs[t * h + k] = o * c.tanh();
            }
        }
        (gates, cells, hs)
    }

    fn pooled(&self, hs: &[f64], steps: usize) -> Vec<f64> {
        let h = self.hidden;
        let mut p = vec![0.0; h];
        for t in 0..steps {
            for k in 0..h {
                p[k] += hs[t * h + k];
            }
        }
        p.iter_mut().for_each(|v| *v /= steps as f64);
        p
    }
}

impl Net for LstmNet {
    type Input = Matrix;

    fn theta(&self) -> &[f64] {
        &self.theta
    }

    fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn penalized(&self) -> Vec<Range<usize>> {
        let l = self.layout();
        vec![l.w..l.b, l.v..l.c]
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input {
            return Err(Error::invalid(format!(
                "lstm expects {} channels, got {}",
                self.input,
                x.cols()
            )));
        }
        if x.rows() == 0 {
            return Err(Error::invalid("empty sequence"));
        }
        Ok(())
    }

    fn forward(&self, x: &Matrix) -> f64 {
        let l = self.layout();
        let (_, _, hs) = self.run(x);
        let p = self.pooled(&hs, x.rows());
        self.theta[l.c] + p.iter().zip(&self.theta[l.v..l.c]).map(|(a, b)| a * b).sum::<f64>()
    }

    fn backprop(&self, x: &Matrix, drop: &mut Dropout<'_>, head: &mut dyn FnMut(f64) -> (f64, f64), grad: &mut [f64]) -> f64 {
        let l = self.layout();
        let (f, h) = (self.input, self.hidden);
        let steps = x.rows();
        let th = &self.theta;
        let (gates, cells, hs) = self.run(x);
        let p = self.pooled(&hs, steps);
        let mask: Vec<f64> = (0..h).map(|_| drop.mask()).collect();
        let z = th[l.c] + (0..h).map(|k| th[l.v + k] * p[k] * mask[k]).sum::<f64>();
        let (loss, dz) = head(z);

        grad[l.c] += dz;
        let mut dpool = vec![0.0; h];
        for k in 0..h {
            grad[l.v + k] += dz * p[k] * mask[k];
            dpool[k] = dz * th[l.v + k] * mask[k] / steps as f64;
        }
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut da = vec![0.0; 4 * h];
        for t in (0..steps).rev() {
            let g = &gates[t * 4 * h..(t + 1) * 4 * h];
            for k in 0..h {
                let (i, fg, gg, o) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
                let c = cells[t * h + k];
                let cprev = if t > 0 { cells[(t - 1) * h + k] } else { 0.0 };
                let tc = c.tanh();
                let dh = dpool[k] + dh_next[k];
                let d_o = dh * tc;
                let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                da[k] = dc * gg * i * (1.0 - i);
                da[h + k] = dc * cprev * fg * (1.0 - fg);
                da[2 * h + k] = dc * i * (1.0 - gg * gg);
                da[3 * h + k] = d_o * o * (1.0 - o);
                dc_next[k] = dc * fg;
            }
            let xt = x.row(t);
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for (j, &dj) in da.iter().enumerate() {
                if dj == 0.0 {
                    continue;
                }
                grad[l.b + j] += dj;
                for (gw, &xv) in grad[l.w + j * f..l.w + (j + 1) * f].iter_mut().zip(xt) {
                    *gw += dj * xv;
                }
                if t > 0 {
                    let hprev = &hs[(t - 1) * h..t * h];
                    for (gu, &hv) in grad[l.u + j * h..l.u + (j + 1) * h].iter_mut().zip(hprev) {
                        *gu += dj * hv;
                    }
                    let urow = &th[l.u + j * h..l.u + (j + 1) * h];
                    for (dn, &u) in dh_next.iter_mut().zip(urow) {
                        *dn += dj * u;
                    }
                }
            }
        }
        loss
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::neural::{gradient_check, train, Objective};
    use crate::learners::TrainConfig;
    use crate::rng;
    use rand_distr::StandardNormal;

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut r = rng::seeded(11);
        let net = LstmNet::new(2, 4, &mut r);
        let xs: Vec<Matrix> = (0..3)
            .map(|_| Matrix::from_fn(3, 2, |_, _| r.random_range(-1.5..1.5)))
            .collect();
        let refs: Vec<&Matrix> = xs.iter().collect();
        for obj in [Objective::Bce, Objective::Mse] {
            let e = gradient_check(&net, &refs, &[1.0, 0.0, 0.6], &[1.0, 1.5, 1.0], obj, 1e-3, 1e-5);
            assert!(e < 1e-4, "{obj:?}: {e}");
        }
    }

    #[test]
    fn zero_weights_score_one_half() {
        let net = LstmNet::zeros(3, 5);
        let x = Matrix::from_fn(7, 3, |i, j| (i * j) as f64 - 2.0);
        assert_eq!(sigmoid(net.output(&x).unwrap()), 0.5);
        assert!(net.output(&Matrix::zeros(7, 2)).is_err());
    }

    #[test]
    fn tensors_roundtrip() {
        let mut r = rng::seeded(2);
        let net = LstmNet::new(3, 2, &mut r);
        let t = net.tensors();
        assert_eq!((t.w.len(), t.w[0].len(), t.u[0].len()), (8, 3, 2));
        assert_eq!(t.b[2..4], [1.0, 1.0]);
        assert_eq!(LstmNet::from_tensors(t).unwrap(), net);
    }

    fn mean_task(n: usize, seed: u64) -> (Vec<Matrix>, Vec<f64>) {
        let mut r = rng::seeded(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let y = if r.random::<bool>() { 1.0 } else { 0.0 };
            let shift = if y > 0.5 { 1.0 } else { -1.0 };
            xs.push(Matrix::from_fn(10, 2, |_, c| {
                let e: f64 = r.sample(StandardNormal);
                if c == 0 {
                    shift + e
                } else {
                    e
                }
            }));
            ys.push(y);
        }
        (xs, ys)
    }

    #[test]
    fn learns_sign_of_channel_mean() {
        let (xs, ys) = mean_task(200, 5);
        let refs: Vec<&Matrix> = xs.iter().collect();
        let cfg = TrainConfig {
            epochs: 60,
            learning_rate: 0.01,
            dropout_rate: 0.0,
            target_noise_sd: 0.0,
            ..TrainConfig::default()
        };
        let mut net = LstmNet::new(2, 4, &mut rng::seeded(0));
        train(&mut net, &refs, &ys, &vec![1.0; ys.len()], Objective::Bce, &cfg, None, &mut rng::seeded(1)).unwrap();
        let (tx, ty) = mean_task(200, 6);
        let correct = tx
            .iter()
            .zip(&ty)
            .filter(|(x, &y)| (sigmoid(net.output(x).unwrap()) >= 0.5) == (y > 0.5))
            .count();
        assert!(correct as f64 / 200.0 >= 0.95, "accuracy {correct}/200");
    }
}
