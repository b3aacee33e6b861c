//! Two-hidden-layer ReLU perceptron with a scalar output.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::neural::{he, Dropout, Net};
use crate::linalg::dot;

#[derive(Clone, Debug, PartialEq)]
pub struct MlpNet {
    input: usize,
    hidden1: usize,
    hidden2: usize,
    /// w1 (h1×d), b1, w2 (h2×h1), b2, w3 (h2), b3
    theta: Vec<f64>,
}

/// Named, nested form of the parameters used for persistence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpTensors {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: f64,
}

struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    len: usize,
}

fn layout(d: usize, h1: usize, h2: usize) -> Layout {
    let w1 = 0;
    let b1 = w1 + h1 * d;
    let w2 = b1 + h1;
    let b2 = w2 + h2 * h1;
    let w3 = b2 + h2;
    let b3 = w3 + h2;
    Layout {
        w1,
        b1,
        w2,
        b2,
        w3,
        b3,
        len: b3 + 1,
    }
}

impl MlpNet {
    /// He-uniform weights, zero biases.
    pub fn new<R: Rng>(input: usize, hidden1: usize, hidden2: usize, rng: &mut R) -> Self {
        let l = layout(input, hidden1, hidden2);
        let mut theta = vec![0.0; l.len];
        for v in &mut theta[l.w1..l.b1] {
            *v = he(rng, input);
        }
        for v in &mut theta[l.w2..l.b2] {
            *v = he(rng, hidden1);
        }
        for v in &mut theta[l.w3..l.b3] {
            *v = he(rng, hidden2);
        }
        MlpNet {
            input,
            hidden1,
            hidden2,
            theta,
        }
    }

    /// All parameters zero: the output is 0 for every input.
    pub fn zeros(input: usize, hidden1: usize, hidden2: usize) -> Self {
        MlpNet {
            input,
            hidden1,
            hidden2,
            theta: vec![0.0; layout(input, hidden1, hidden2).len],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden(&self) -> (usize, usize) {
        (self.hidden1, self.hidden2)
    }

    fn layout(&self) -> Layout {
        layout(self.input, self.hidden1, self.hidden2)
    }

    /// Raw (pre-link) output.
    pub fn output(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.forward(x))
    }

    pub fn tensors(&self) -> MlpTensors {
        let l = self.layout();
        let rows = |start: usize, n: usize, w: usize| -> Vec<Vec<f64>> {
            (0..n).map(|j| self.theta[start + j * w..start + (j + 1) * w].to_vec()).collect()
        };
        MlpTensors {
            w1: rows(l.w1, self.hidden1, self.input),
            b1: self.theta[l.b1..l.w2].to_vec(),
            w2: rows(l.w2, self.hidden2, self.hidden1),
            b2: self.theta[l.b2..l.w3].to_vec(),
            w3: self.theta[l.w3..l.b3].to_vec(),
            b3: self.theta[l.b3],
        }
    }

    pub fn from_tensors(t: MlpTensors) -> Result<Self> {
        let h1 = t.w1.len();
        let h2 = t.w2.len();
        let d = t.w1.first().map_or(0, Vec::len);
        let shape_ok = h1 > 0
            && h2 > 0
            && d > 0
            && t.w1.iter().all(|r| r.len() == d)
            && t.b1.len() == h1
            && t.w2.iter().all(|r| r.len() == h1)
            && t.b2.len() == h2
            && t.w3.len() == h2;
        if !shape_ok {
            return Err(Error::data("mlp parameters have inconsistent shapes"));
        }
        let mut theta = Vec::with_capacity(layout(d, h1, h2).len);
        t.w1.iter().for_each(|r| theta.extend_from_slice(r));
        theta.extend_from_slice(&t.b1);
        t.w2.iter().for_each(|r| theta.extend_from_slice(r));
        theta.extend_from_slice(&t.b2);
        theta.extend_from_slice(&t.w3);
        theta.push(t.b3);
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("mlp parameters contain non-finite values"));
        }
        Ok(MlpNet {
            input: d,
            hidden1: h1,
            hidden2: h2,
            theta,
        })
    }
}

impl Net for MlpNet {
    type Input = [f64];

    fn theta(&self) -> &[f64] {
        &self.theta
    }

    fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn penalized(&self) -> Vec<Range<usize>> {
        let l = self.layout();
        vec![l.w1..l.b1, l.w2..l.b2, l.w3..l.b3]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input {
            return Err(Error::invalid(format!(
                "mlp expects {} features, got {}",
                self.input,
                x.len()
            )));
        }
        Ok(())
    }

    fn forward(&self, x: &[f64]) -> f64 {
        let l = self.layout();
        let th = &self.theta;
        let a1: Vec<f64> = (0..self.hidden1)
            .map(|j| (dot(&th[l.w1 + j * self.input..l.w1 + (j + 1) * self.input], x) + th[l.b1 + j]).max(0.0))
            .collect();
        let mut z = th[l.b3];
        for k in 0..self.hidden2 {
            let a2 = (dot(&th[l.w2 + k * self.hidden1..l.w2 + (k + 1) * self.hidden1], &a1) + th[l.b2 + k]).max(0.0);
            z += th[l.w3 + k] * a2;
        }
        z
    }

    fn backprop(&self, x: &[f64], drop: &mut Dropout<'_>, head: &mut dyn FnMut(f64) -> (f64, f64), grad: &mut [f64]) -> f64 {
        let l = self.layout();
        let th = &self.theta;
        let (d, h1, h2) = (self.input, self.hidden1, self.hidden2);
        // a = relu(pre) * mask
        let mut a1 = vec![0.0; h1];
        let mut m1 = vec![0.0; h1];
        for j in 0..h1 {
            let pre = dot(&th[l.w1 + j * d..l.w1 + (j + 1) * d], x) + th[l.b1 + j];
            m1[j] = if pre > 0.0 { drop.mask() } else { 0.0 };
            a1[j] = pre * m1[j];
        }
        let mut a2 = vec![0.0; h2];
        let mut m2 = vec![0.0; h2];
        for k in 0..h2 {
            let pre = dot(&th[l.w2 + k * h1..l.w2 + (k + 1) * h1], &a1) + th[l.b2 + k];
            m2[k] = if pre > 0.0 { drop.mask() } else { 0.0 };
            a2[k] = pre * m2[k];
        }
        let z = th[l.b3] + dot(&th[l.w3..l.b3], &a2);
        let (loss, dz) = head(z);

        grad[l.b3] += dz;
        let mut da1 = vec![0.0; h1];
        for k in 0..h2 {
            grad[l.w3 + k] += dz * a2[k];
            let dpre = dz * th[l.w3 + k] * m2[k];
            if dpre == 0.0 {
                continue;
            }
            grad[l.b2 + k] += dpre;
            let wrow = &th[l.w2 + k * h1..l.w2 + (k + 1) * h1];
            let grow = &mut grad[l.w2 + k * h1..l.w2 + (k + 1) * h1];
            for j in 0..h1 {
                grow[j] += dpre * a1[j];
                da1[j] += dpre * wrow[j];
            }
        }
        for j in 0..h1 {
            let dpre = da1[j] * m1[j];
            if dpre == 0.0 {
                continue;
            }
            grad[l.b1 + j] += dpre;
            let grow = &mut grad[l.w1 + j * d..l.w1 + (j + 1) * d];
            for (g, &xi) in grow.iter_mut().zip(x) {
                *g += dpre * xi;
            }
        }
        loss
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::neural::{gradient_check, Objective};
    use crate::linalg::sigmoid;
    use crate::rng;

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut r = rng::seeded(3);
        let net = MlpNet::new(5, 7, 4, &mut r);
        let xs: Vec<Vec<f64>> = (0..6).map(|_| (0..5).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let t = [1.0, 0.0, 1.0, 1.0, 0.0, 0.3];
        let w = [1.0, 2.0, 1.0, 0.5, 1.0, 1.0];
        for obj in [Objective::Bce, Objective::Mse] {
            let e = gradient_check(&net, &refs, &t, &w, obj, 1e-3, 1e-5);
            assert!(e < 1e-4, "{obj:?}: {e}");
        }
    }

    #[test]
    fn zero_network_scores_one_half() {
        let net = MlpNet::zeros(4, 3, 2);
        assert_eq!(sigmoid(net.output(&[1.0, -2.0, 3.0, 0.5]).unwrap()), 0.5);
        assert!(net.output(&[1.0]).is_err());
    }

    #[test]
    fn tensors_roundtrip() {
        let mut r = rng::seeded(1);
        let net = MlpNet::new(3, 4, 2, &mut r);
        let t = net.tensors();
        assert_eq!(t.w1.len(), 4);
        assert_eq!(t.w1[0].len(), 3);
        let back = MlpNet::from_tensors(t).unwrap();
        assert_eq!(back, net);
        let mut bad = net.tensors();
        bad.b2.pop();
        assert!(MlpNet::from_tensors(bad).is_err());
    }
}
