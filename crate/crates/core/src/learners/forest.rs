//! Bagged CART forests. Classification trees split on class-weighted Gini
//! impurity and vote 0/1 at the leaves; regression trees split on squared
//! error and average their leaf targets. Each split considers `⌊√D⌋`
//! randomly chosen features (more if none of them can split the node). Ties
//! go to the lowest feature index, then the lowest threshold.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForestTask {
    Classification,
    Regression,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub bootstrap: bool,
    pub task: ForestTask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Forest {
    pub task: ForestTask,
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

impl Forest {
    /// Mean tree output: the positive-vote fraction for classification.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::invalid(format!(
                "dimension mismatch: forest expects {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok(sum / self.trees.len() as f64)
    }
}

struct Builder<'a> {
    xs: &'a [&'a [f64]],
    y: &'a [f64],
    sw: &'a [f64],
    params: &'a ForestParams,
    mtry: usize,
}

struct Best {
    score: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn leaf_value(&self, idx: &[usize]) -> f64 {
        match self.params.task {
            ForestTask::Classification => {
                let (mut pos, mut neg) = (0.0, 0.0);
                for &i in idx {
                    if self.y[i] >= 0.5 {
                        pos += self.sw[i];
                    } else {
                        neg += self.sw[i];
                    }
                }
                if pos > neg {
                    1.0
                } else {
                    0.0
                }
            }
            ForestTask::Regression => idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64,
        }
    }

    fn is_pure(&self, idx: &[usize]) -> bool {
        match self.params.task {
            ForestTask::Classification => {
                let first = self.y[idx[0]] >= 0.5;
                idx.iter().all(|&i| (self.y[i] >= 0.5) == first)
            }
            ForestTask::Regression => {
                let first = self.y[idx[0]];
                idx.iter().all(|&i| self.y[i] == first)
            }
        }
    }

    /// Best split of `idx` on `feature`, scored so that larger is better:
    /// Σ_children (Σ_k w_k²)/W for Gini, (Σy)²/n for squared error.
    fn best_on_feature(&self, idx: &[usize], feature: usize, sorted: &mut Vec<(f64, usize)>) -> Option<(f64, f64)> {
        sorted.clear();
        sorted.extend(idx.iter().map(|&i| (self.xs[i][feature], i)));
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let n = sorted.len();
        let min_leaf = self.params.min_leaf;
        if sorted[0].0 == sorted[n - 1].0 {
            return None;
        }
        let mut best: Option<(f64, f64)> = None;
        match self.params.task {
            ForestTask::Classification => {
                let (mut tp, mut tn) = (0.0, 0.0);
                for &(_, i) in sorted.iter() {
                    if self.y[i] >= 0.5 {
                        tp += self.sw[i];
                    } else {
                        tn += self.sw[i];
                    }
                }
                let (mut lp, mut ln) = (0.0, 0.0);
                for k in 0..n - 1 {
                    let i = sorted[k].1;
                    if self.y[i] >= 0.5 {
                        lp += self.sw[i];
                    } else {
                        ln += self.sw[i];
                    }
                    if sorted[k].0 == sorted[k + 1].0 || k + 1 < min_leaf || n - k - 1 < min_leaf {
                        continue;
                    }
                    let (rp, rn) = (tp - lp, tn - ln);
                    let wl = lp + ln;
                    let wr = rp + rn;
                    if wl <= 0.0 || wr <= 0.0 {
                        continue;
                    }
                    let score = (lp * lp + ln * ln) / wl + (rp * rp + rn * rn) / wr;
                    if best.is_none_or(|b| score > b.0) {
                        best = Some((score, 0.5 * (sorted[k].0 + sorted[k + 1].0)));
                    }
                }
            }
            ForestTask::Regression => {
                let total: f64 = sorted.iter().map(|&(_, i)| self.y[i]).sum();
                let mut left = 0.0;
                for k in 0..n - 1 {
                    left += self.y[sorted[k].1];
                    if sorted[k].0 == sorted[k + 1].0 || k + 1 < min_leaf || n - k - 1 < min_leaf {
                        continue;
                    }
                    let nl = (k + 1) as f64;
                    let nr = (n - k - 1) as f64;
                    let right = total - left;
                    let score = left * left / nl + right * right / nr;
                    if best.is_none_or(|b| score > b.0) {
                        best = Some((score, 0.5 * (sorted[k].0 + sorted[k + 1].0)));
                    }
                }
            }
        }
        best
    }

    fn find_split<R: Rng>(&self, idx: &[usize], rng: &mut R, features: &mut [usize], sorted: &mut Vec<(f64, usize)>) -> Option<Best> {
        features.shuffle(rng);
        let d = features.len();
        let mut first: Vec<usize> = features[..self.mtry].to_vec();
        first.sort_unstable();
        let mut best: Option<Best> = None;
        for &f in &first {
            if let Some((score, threshold)) = self.best_on_feature(idx, f, sorted) {
                if best.as_ref().is_none_or(|b| score > b.score) {
                    best = Some(Best { score, feature: f, threshold });
                }
            }
        }
        // none of the sampled features varies here: keep drawing
        let mut k = self.mtry;
        while best.is_none() && k < d {
            let f = features[k];
            if let Some((score, threshold)) = self.best_on_feature(idx, f, sorted) {
                best = Some(Best { score, feature: f, threshold });
            }
            k += 1;
        }
        best
    }

    fn build<R: Rng>(&self, root: Vec<usize>, rng: &mut R) -> Tree {
        let d = self.xs[0].len();
        let mut features: Vec<usize> = (0..d).collect();
        let mut sorted = Vec::with_capacity(root.len());
        let mut nodes = vec![Node::Leaf(0.0)];
        let mut stack = vec![(0usize, root, 0usize)];
        while let Some((slot, idx, depth)) = stack.pop() {
            let can_split = idx.len() >= 2 * self.params.min_leaf
                && self.params.max_depth.is_none_or(|m| depth < m)
                && !self.is_pure(&idx);
            let split = if can_split {
                self.find_split(&idx, rng, &mut features, &mut sorted)
            } else {
                None
            };
            match split {
                None => nodes[slot] = Node::Leaf(self.leaf_value(&idx)),
                Some(b) => {
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        idx.iter().partition(|&&i| self.xs[i][b.feature] <= b.threshold);
                    let left = nodes.len();
                    nodes.push(Node::Leaf(0.0));
                    let right = nodes.len();
                    nodes.push(Node::Leaf(0.0));
                    nodes[slot] = Node::Split {
                        feature: b.feature,
                        threshold: b.threshold,
                        left,
                        right,
                    };
                    stack.push((right, r, depth + 1));
                    stack.push((left, l, depth + 1));
                }
            }
        }
        Tree { nodes }
    }
}

/// Tree `t` draws from its own stream `(seed, "tree/t")`, so a forest's
/// first trees do not depend on how many trees follow.
pub fn fit_forest(xs: &[&[f64]], y: &[f64], sample_weights: &[f64], params: &ForestParams, seed: u64) -> Result<Forest> {
    if xs.is_empty() || xs.len() != y.len() || y.len() != sample_weights.len() {
        return Err(Error::invalid("forest inputs, targets and weights must be non-empty and aligned"));
    }
    if params.trees == 0 || params.min_leaf == 0 {
        return Err(Error::invalid("forest needs at least one tree and min_leaf >= 1"));
    }
    let d = xs[0].len();
    if d == 0 {
        return Err(Error::invalid("forest needs at least one feature"));
    }
    let mtry = ((d as f64).sqrt().floor() as usize).clamp(1, d);
    let builder = Builder {
        xs,
        y,
        sw: sample_weights,
        params,
        mtry,
    };
    let n = xs.len();
    let trees = (0..params.trees)
        .map(|t| {
            let mut rng = rng::stream(seed, &format!("tree/{t}"));
            let idx: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            builder.build(idx, &mut rng)
        })
        .collect();
    Ok(Forest {
        task: params.task,
        n_features: d,
        trees,
    })
}
