//! Base binary classifiers and their traditional regression counterparts.
//!
//! Five learner families share one hyperparameter enum ([`Hyper`]) and one
//! fitted-parameter enum ([`Model`]). The same family trained on binary
//! threshold labels is a [`BinaryClassifier`] emitting scores in `[0, 1]`;
//! trained on raw scores it is a [`Regressor`].

pub mod forest;
pub mod linear;
pub mod lstm;
pub mod mlp;
pub mod neural;
pub mod optim;
pub mod svm;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::linalg::{sigmoid, Matrix};

pub use forest::{Forest, ForestTask};
pub use linear::LinearModel;
pub use lstm::LstmNet;
pub use mlp::MlpNet;

pub const SCHEMA_VERSION: u32 = 1;
const BCE_EPS: f64 = 1e-12;

/// Learner family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Lr,
    Svm,
    Rf,
    Mlp,
    Lstm,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 5] = [
        LearnerKind::Lr,
        LearnerKind::Svm,
        LearnerKind::Rf,
        LearnerKind::Mlp,
        LearnerKind::Lstm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LearnerKind::Lr => "lr",
            LearnerKind::Svm => "svm",
            LearnerKind::Rf => "rf",
            LearnerKind::Mlp => "mlp",
            LearnerKind::Lstm => "lstm",
        }
    }

    /// Name of the regression counterpart.
    pub fn regressor_name(self) -> &'static str {
        match self {
            LearnerKind::Lr => "linear_regression",
            LearnerKind::Svm => "linear_svr",
            LearnerKind::Rf => "random_forest_reg",
            LearnerKind::Mlp => "mlp_reg",
            LearnerKind::Lstm => "lstm_reg",
        }
    }

    pub fn view(self) -> View {
        match self {
            LearnerKind::Lstm => View::Sequence,
            _ => View::Vector,
        }
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LearnerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown learner kind {s:?}")))
    }
}

/// Which feature view a model consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Vector,
    Sequence,
}

#[derive(Clone, Copy, Debug)]
pub enum Input<'a> {
    Vector(&'a [f64]),
    Sequence(&'a Matrix),
}

impl<'a> Input<'a> {
    pub fn vector(self) -> Result<&'a [f64]> {
        match self {
            Input::Vector(v) => Ok(v),
            Input::Sequence(_) => Err(Error::invalid("model expects a feature vector, got a sequence")),
        }
    }

    pub fn sequence(self) -> Result<&'a Matrix> {
        match self {
            Input::Sequence(m) => Ok(m),
            Input::Vector(_) => Err(Error::invalid("model expects a sequence, got a feature vector")),
        }
    }
}

impl crate::features::Example {
    pub fn input(&self, view: View) -> Input<'_> {
        match view {
            View::Vector => Input::Vector(&self.vector),
            View::Sequence => Input::Sequence(&self.sequence),
        }
    }
}

fn default_epsilon() -> f64 {
    0.1
}
fn default_min_leaf() -> usize {
    1
}
fn yes() -> bool {
    true
}

/// One hyperparameter setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Hyper {
    /// l2 strength on the weights (intercept unpenalized)
    Lr { l2: f64 },
    /// box constraint `c`, input scale, and the ε of the regression loss
    Svm {
        c: f64,
        scale: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    Rf {
        trees: usize,
        #[serde(default)]
        max_depth: Option<usize>,
        #[serde(default = "default_min_leaf")]
        min_leaf: usize,
        #[serde(default = "yes")]
        bootstrap: bool,
    },
    /// two ReLU hidden layers; shrunk to 100/10 when the input has fewer
    /// than 500 features and `shrink_small_inputs` is set
    Mlp {
        hidden1: usize,
        hidden2: usize,
        #[serde(default = "yes")]
        shrink_small_inputs: bool,
    },
    Lstm { hidden: usize },
}

impl Hyper {
    pub fn kind(&self) -> LearnerKind {
        match self {
            Hyper::Lr { .. } => LearnerKind::Lr,
            Hyper::Svm { .. } => LearnerKind::Svm,
            Hyper::Rf { .. } => LearnerKind::Rf,
            Hyper::Mlp { .. } => LearnerKind::Mlp,
            Hyper::Lstm { .. } => LearnerKind::Lstm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Hyper::Lr { l2 } => l2.is_finite() && *l2 >= 0.0,
            Hyper::Svm { c, scale, epsilon } => {
                *c > 0.0 && c.is_finite() && *scale > 0.0 && scale.is_finite() && *epsilon >= 0.0
            }
            Hyper::Rf { trees, min_leaf, max_depth, .. } => {
                *trees > 0 && *min_leaf > 0 && max_depth.is_none_or(|d| d > 0)
            }
            Hyper::Mlp { hidden1, hidden2, .. } => *hidden1 > 0 && *hidden2 > 0,
            Hyper::Lstm { hidden } => *hidden > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid hyperparameters {self:?}")))
        }
    }
}

/// Optimization settings shared by the learners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// l2 penalty for the neural learners
    pub l2: f64,
    pub dropout_rate: f64,
    pub target_noise_sd: f64,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    /// iterations of accelerated gradient descent for logistic regression
    pub linear_iters: usize,
    /// passes over the data for the primal SVM solvers
    pub svm_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 1e-3,
            l2: 1e-4,
            dropout_rate: 0.2,
            target_noise_sd: 0.1,
            batch_size: 32,
            early_stop_patience: 20,
            linear_iters: 500,
            svm_epochs: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train config: {m}")));
        if self.epochs == 0 || self.batch_size == 0 || self.linear_iters == 0 || self.svm_epochs == 0 {
            return bad("epochs, batch_size, linear_iters and svm_epochs must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if !(self.target_noise_sd >= 0.0 && self.target_noise_sd.is_finite()) {
            return bad("target_noise_sd must be non-negative");
        }
        if self.early_stop_patience == 0 {
            return bad("early_stop_patience must be positive");
        }
        Ok(())
    }
}

/// Minority class up-weighted by `n_majority / n_minority`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w_pos: f64,
    pub w_neg: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl ClassWeights {
    pub fn unit(n_pos: usize, n_neg: usize) -> Self {
        ClassWeights {
            w_pos: 1.0,
            w_neg: 1.0,
            n_pos,
            n_neg,
        }
    }

    /// Weight of a sample by its (pre-noise) class.
    pub fn of(&self, label: f64) -> f64 {
        if label >= 0.5 {
            self.w_pos
        } else {
            self.w_neg
        }
    }
}

pub fn class_weights(labels: &[f64]) -> Result<ClassWeights> {
    if labels.is_empty() {
        return Err(Error::invalid("no labels"));
    }
    let n_pos = labels.iter().filter(|&&y| y >= 0.5).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::training("degenerate class: labels contain a single class"));
    }
    let (w_pos, w_neg) = if n_pos < n_neg {
        (n_neg as f64 / n_pos as f64, 1.0)
    } else {
        (1.0, n_pos as f64 / n_neg as f64)
    };
    Ok(ClassWeights {
        w_pos,
        w_neg,
        n_pos,
        n_neg,
    })
}

/// Mean of `-w_i [y log s + (1-y) log(1-s)]`, scores clamped to `[ε, 1-ε]`;
/// each sample is weighted by its class.
pub fn weighted_bce(scores: &[f64], labels: &[f64], weights: &ClassWeights) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} scores, {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let s = s.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -weights.of(y) * (y * s.ln() + (1.0 - y) * (1.0 - s).ln())
        })
        .sum();
    Ok(total / scores.len() as f64)
}

/// Area under the ROC curve (ties get half credit); `None` when only one
/// class is present.
pub fn roc_auc(scores: &[f64], labels: &[f64]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = labels.iter().filter(|&&y| y >= 0.5).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // average ranks over tied groups
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] >= 0.5 {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Validation metric for base classifiers: ROC AUC, or negative unweighted
/// log-loss when the validation labels hold a single class.
pub fn classifier_metric(scores: &[f64], labels: &[f64]) -> f64 {
    match roc_auc(scores, labels) {
        Some(a) => a,
        None => {
            let unit = ClassWeights::unit(0, 0);
            weighted_bce(scores, labels, &unit).map_or(f64::NEG_INFINITY, |l| -l)
        }
    }
}

/// Fitted parameters of any learner family.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Linear(LinearModel),
    Forest(Forest),
    Mlp(MlpNet),
    Lstm(LstmNet),
    /// fixed output, used for thresholds whose training labels hold one class
    Constant(f64),
}

impl Model {
    pub fn view(&self) -> Option<View> {
        match self {
            Model::Linear(_) | Model::Forest(_) | Model::Mlp(_) => Some(View::Vector),
            Model::Lstm(_) => Some(View::Sequence),
            Model::Constant(_) => None,
        }
    }

    /// Pre-link output: margin / logit for the linear and neural models, tree
    /// average for forests.
    pub fn raw(&self, x: Input<'_>) -> Result<f64> {
        match self {
            Model::Linear(m) => m.raw(x.vector()?),
            Model::Forest(f) => f.predict(x.vector()?),
            Model::Mlp(n) => n.output(x.vector()?),
            Model::Lstm(n) => n.output(x.sequence()?),
            Model::Constant(c) => Ok(*c),
        }
    }

    fn parameters(&self) -> Result<Value> {
        Ok(match self {
            Model::Linear(m) => serde_json::to_value(m)?,
            Model::Forest(f) => serde_json::to_value(f)?,
            Model::Mlp(n) => serde_json::to_value(n.tensors())?,
            Model::Lstm(n) => serde_json::to_value(n.tensors())?,
            Model::Constant(c) => serde_json::json!({ "value": c }),
        })
    }

    fn from_parameters(family: &str, v: Value) -> Result<Model> {
        Ok(match family {
            "linear" => Model::Linear(serde_json::from_value(v)?),
            "forest" => Model::Forest(serde_json::from_value(v)?),
            "mlp" => Model::Mlp(MlpNet::from_tensors(serde_json::from_value(v)?)?),
            "lstm" => Model::Lstm(LstmNet::from_tensors(serde_json::from_value(v)?)?),
            "constant" => {
                #[derive(Deserialize)]
                struct C {
                    value: f64,
                }
                Model::Constant(serde_json::from_value::<C>(v)?.value)
            }
            other => return Err(Error::data(format!("unknown parameter family {other}"))),
        })
    }
}

/// Versioned on-disk model document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub schema_version: u32,
    pub kind: String,
    pub hyperparams: Value,
    pub parameters: Value,
}

impl ModelDocument {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(s)?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::data(format!(
                "unsupported model schema version {}",
                doc.schema_version
            )));
        }
        Ok(doc)
    }
}

fn family_of(kind: LearnerKind) -> &'static str {
    match kind {
        LearnerKind::Lr | LearnerKind::Svm => "linear",
        LearnerKind::Rf => "forest",
        LearnerKind::Mlp => "mlp",
        LearnerKind::Lstm => "lstm",
    }
}

/// Base model deciding whether a sample's score exceeds a threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryClassifier {
    /// `None` for the constant scorer
    pub hyper: Option<Hyper>,
    pub model: Model,
}

impl BinaryClassifier {
    pub fn constant(score: f64) -> Self {
        BinaryClassifier {
            hyper: None,
            model: Model::Constant(score.clamp(0.0, 1.0)),
        }
    }

    pub fn kind(&self) -> Option<LearnerKind> {
        self.hyper.as_ref().map(Hyper::kind)
    }

    pub fn view(&self) -> Option<View> {
        self.model.view()
    }

    /// Score in `[0, 1]`: sigmoid probability for LR/MLP/LSTM, logistic of
    /// the margin for the SVM, positive-vote fraction for the forest.
    pub fn predict_score(&self, x: Input<'_>) -> Result<f64> {
        let raw = self.model.raw(x)?;
        Ok(match self.model {
            Model::Linear(_) | Model::Mlp(_) | Model::Lstm(_) => sigmoid(raw),
            Model::Forest(_) | Model::Constant(_) => raw,
        })
    }

    pub fn to_document(&self) -> Result<ModelDocument> {
        let (kind, hyperparams) = match &self.hyper {
            Some(h) => (h.kind().as_str().to_string(), serde_json::to_value(h)?),
            None => ("constant".to_string(), Value::Null),
        };
        Ok(ModelDocument {
            schema_version: SCHEMA_VERSION,
            kind,
            hyperparams,
            parameters: self.model.parameters()?,
        })
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        if doc.kind == "constant" {
            return Ok(BinaryClassifier {
                hyper: None,
                model: Model::from_parameters("constant", doc.parameters.clone())?,
            });
        }
        let kind: LearnerKind = doc.kind.parse()?;
        let hyper: Hyper = serde_json::from_value(doc.hyperparams.clone())?;
        if hyper.kind() != kind {
            return Err(Error::data("model kind does not match its hyperparameters"));
        }
        Ok(BinaryClassifier {
            hyper: Some(hyper),
            model: Model::from_parameters(family_of(kind), doc.parameters.clone())?,
        })
    }
}

/// Traditional regression counterpart of a learner family.
#[derive(Clone, Debug, PartialEq)]
pub struct Regressor {
    pub hyper: Hyper,
    pub model: Model,
}

impl Regressor {
    pub fn kind(&self) -> LearnerKind {
        self.hyper.kind()
    }

    pub fn view(&self) -> View {
        self.kind().view()
    }

    pub fn predict(&self, x: Input<'_>) -> Result<f64> {
        self.model.raw(x)
    }

    pub fn to_document(&self) -> Result<ModelDocument> {
        Ok(ModelDocument {
            schema_version: SCHEMA_VERSION,
            kind: self.kind().regressor_name().to_string(),
            hyperparams: serde_json::to_value(&self.hyper)?,
            parameters: self.model.parameters()?,
        })
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        let hyper: Hyper = serde_json::from_value(doc.hyperparams.clone())?;
        if hyper.kind().regressor_name() != doc.kind {
            return Err(Error::data(format!(
                "regressor kind {} does not match its hyperparameters",
                doc.kind
            )));
        }
        let model = Model::from_parameters(family_of(hyper.kind()), doc.parameters.clone())?;
        Ok(Regressor { hyper, model })
    }
}

/// Training inputs with targets (0/1 labels or raw scores).
pub struct LabeledData<'a> {
    pub inputs: Vec<Input<'a>>,
    pub targets: Vec<f64>,
}

/// Held-out inputs plus a higher-is-better metric over their predictions
/// (scores for classifiers, raw outputs for regressors).
pub struct Validation<'a> {
    pub inputs: Vec<Input<'a>>,
    pub metric: &'a (dyn Fn(&[f64]) -> f64 + Sync),
}

fn check_data(data: &LabeledData<'_>) -> Result<()> {
    if data.inputs.len() != data.targets.len() {
        return Err(Error::invalid("inputs and targets differ in length"));
    }
    if data.inputs.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    if data.targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("non-finite training target"));
    }
    Ok(())
}

fn vectors<'a>(inputs: &[Input<'a>]) -> Result<Vec<&'a [f64]>> {
    let v: Vec<&[f64]> = inputs.iter().map(|x| x.vector()).collect::<Result<_>>()?;
    let d = v[0].len();
    if v.iter().any(|x| x.len() != d) {
        return Err(Error::invalid("feature vectors differ in length"));
    }
    Ok(v)
}

/// Trains one base classifier on 0/1 labels with class weights derived from
/// those labels.
pub fn fit_classifier(
    hyper: &Hyper,
    cfg: &TrainConfig,
    data: &LabeledData<'_>,
    val: Option<&Validation<'_>>,
    seed: u64,
) -> Result<BinaryClassifier> {
    hyper.validate()?;
    check_data(data)?;
    let weights = class_weights(&data.targets)?;
    let model = match hyper {
        Hyper::Lr { l2 } => Model::Linear(linear::fit_logistic(
            &vectors(&data.inputs)?,
            &data.targets,
            &weights,
            *l2,
            cfg.linear_iters,
        )?),
        Hyper::Svm { c, scale, .. } => Model::Linear(svm::fit_svm(
            &vectors(&data.inputs)?,
            &data.targets,
            &weights,
            *c,
            *scale,
            cfg.svm_epochs,
            seed,
        )?),
        Hyper::Rf {
            trees,
            max_depth,
            min_leaf,
            bootstrap,
        } => {
            let sw: Vec<f64> = data.targets.iter().map(|&y| weights.of(y)).collect();
            Model::Forest(forest::fit_forest(
                &vectors(&data.inputs)?,
                &data.targets,
                &sw,
                &forest::ForestParams {
                    trees: *trees,
                    max_depth: *max_depth,
                    min_leaf: *min_leaf,
                    bootstrap: *bootstrap,
                    task: ForestTask::Classification,
                },
                seed,
            )?)
        }
        Hyper::Mlp { .. } | Hyper::Lstm { .. } => {
            let sw: Vec<f64> = data.targets.iter().map(|&y| weights.of(y)).collect();
            neural::fit(hyper, cfg, data, &sw, neural::Objective::Bce, val, seed)?
        }
    };
    Ok(BinaryClassifier {
        hyper: Some(hyper.clone()),
        model,
    })
}

/// Inverse-frequency weights over integer score bins, normalized to mean 1.
pub fn score_bin_weights(targets: &[f64]) -> Vec<f64> {
    let bin = |t: f64| t.round().max(0.0) as usize;
    let nbins = targets.iter().map(|&t| bin(t)).max().unwrap_or(0) + 1;
    let mut counts = vec![0usize; nbins];
    for &t in targets {
        counts[bin(t)] += 1;
    }
    let raw: Vec<f64> = targets.iter().map(|&t| 1.0 / counts[bin(t)] as f64).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    raw.into_iter().map(|w| w / mean).collect()
}

/// Trains the regression counterpart of `hyper`'s family on raw scores.
pub fn fit_regressor(
    hyper: &Hyper,
    cfg: &TrainConfig,
    data: &LabeledData<'_>,
    val: Option<&Validation<'_>>,
    seed: u64,
) -> Result<Regressor> {
    hyper.validate()?;
    check_data(data)?;
    let model = match hyper {
        Hyper::Lr { l2 } => Model::Linear(linear::fit_ridge(&vectors(&data.inputs)?, &data.targets, *l2)?),
        Hyper::Svm { c, scale, epsilon } => Model::Linear(svm::fit_svr(
            &vectors(&data.inputs)?,
            &data.targets,
            *c,
            *scale,
            *epsilon,
            cfg.svm_epochs,
            seed,
        )?),
        Hyper::Rf {
            trees,
            max_depth,
            min_leaf,
            bootstrap,
        } => Model::Forest(forest::fit_forest(
            &vectors(&data.inputs)?,
            &data.targets,
            &vec![1.0; data.targets.len()],
            &forest::ForestParams {
                trees: *trees,
                max_depth: *max_depth,
                min_leaf: *min_leaf,
                bootstrap: *bootstrap,
                task: ForestTask::Regression,
            },
            seed,
        )?),
        Hyper::Mlp { .. } | Hyper::Lstm { .. } => {
            let sw = score_bin_weights(&data.targets);
            neural::fit(hyper, cfg, data, &sw, neural::Objective::Mse, val, seed)?
        }
    };
    Ok(Regressor {
        hyper: hyper.clone(),
        model,
    })
}

/// Result of a grid search.
#[derive(Debug)]
pub struct GridOutcome<M> {
    pub index: usize,
    pub model: M,
    pub metric: f64,
    /// `(grid index, error message)` for settings that failed to train
    pub failures: Vec<(usize, String)>,
}

/// Trains one model per setting, scores each with `eval`, and keeps the
/// highest metric (first occurrence wins ties; NaN ranks lowest). Settings
/// that fail are skipped; an error is returned only if all fail.
pub fn grid_search<S, M>(
    grid: &[S],
    mut train: impl FnMut(usize, &S) -> Result<M>,
    mut eval: impl FnMut(&M) -> Result<f64>,
) -> Result<GridOutcome<M>> {
    if grid.is_empty() {
        return Err(Error::invalid("empty hyperparameter grid"));
    }
    let mut best: Option<(usize, M, f64)> = None;
    let mut failures = Vec::new();
    for (i, setting) in grid.iter().enumerate() {
        let scored = train(i, setting).and_then(|m| eval(&m).map(|s| (m, s)));
        match scored {
            Ok((m, s)) => {
                let s = if s.is_nan() { f64::NEG_INFINITY } else { s };
                if best.as_ref().is_none_or(|b| s > b.2) {
                    best = Some((i, m, s));
                }
            }
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    match best {
        Some((index, model, metric)) => Ok(GridOutcome {
            index,
            model,
            metric,
            failures,
        }),
        None => Err(Error::training(format!(
            "every grid setting failed: {}",
            failures
                .iter()
                .map(|(i, e)| format!("[{i}] {e}"))
                .collect::<Vec<_>>()
                .join("; ")
        ))),
    }
}
