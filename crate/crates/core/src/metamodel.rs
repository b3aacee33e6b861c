//! The threshold-classifier metamodel: ordinal label decomposition, the bank
//! of base classifiers, the 4-node meta-level network, prediction, the two
//! ways of carrying a trained model to new data, and the traditional
//! regression baselines trained on the same splits.

use std::collections::BTreeMap;
use std::fs;
use std::ops::Range;
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{aggregate_by_subject, Recording, Split};
use crate::error::{Error, Result};
use crate::features::{Example, FeaturePrep};
use crate::learners::neural::{self, glorot, Dropout, Net, Objective};
use crate::learners::{
    classifier_metric, fit_classifier, fit_regressor, grid_search, BinaryClassifier, Hyper, LabeledData,
    LearnerKind, ModelDocument, Regressor, TrainConfig, Validation, View,
};
use crate::linalg::{dot, sigmoid};
use crate::rng;
use crate::stats::{corr_significance, pearson, summarize, CorrelationResult, EvalReport, FoldResult, TestRecord};

pub const META_HIDDEN: usize = 4;
const META_FILE: &str = "meta.json";
const META_SCHEMA_VERSION: u32 = 1;

/// Sorted ordinal cut points; label `k` is `score > thresholds[k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ThresholdSet(Vec<f64>);

impl ThresholdSet {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::Config("threshold set is empty".into()));
        }
        if thresholds.iter().any(|t| !t.is_finite() || t.fract() == 0.0) {
            return Err(Error::Config(
                "thresholds must be finite and must not coincide with an integer score".into(),
            ));
        }
        if thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("thresholds must be strictly increasing".into()));
        }
        Ok(ThresholdSet(thresholds))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for ThresholdSet {
    fn default() -> Self {
        ThresholdSet((0..7).map(|k| k as f64 + 0.5).collect())
    }
}

impl TryFrom<Vec<f64>> for ThresholdSet {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        ThresholdSet::new(v)
    }
}

impl From<ThresholdSet> for Vec<f64> {
    fn from(t: ThresholdSet) -> Self {
        t.0
    }
}

/// `bit_k = 1` iff `score > thresholds[k]`.
pub fn threshold_labels(score: f64, thresholds: &ThresholdSet) -> Vec<f64> {
    thresholds
        .values()
        .iter()
        .map(|&t| if score > t { 1.0 } else { 0.0 })
        .collect()
}

/// Meta-level network: `w2 · sigmoid(W1 s + b1) + b2` with 4 hidden units.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaNet {
    inputs: usize,
    /// W1 (4×n), b1 (4), w2 (4), b2
    theta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaTensors {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MetaNet {
    /// Glorot-uniform weights; the output bias starts at `bias`.
    pub fn new<R: rand::Rng>(inputs: usize, bias: f64, rng: &mut R) -> Self {
        let mut net = MetaNet::constant(inputs, bias);
        let b1 = net.b1();
        for v in &mut net.theta[..b1] {
            *v = glorot(rng, inputs, META_HIDDEN);
        }
        let w2 = net.w2();
        for v in &mut net.theta[w2..w2 + META_HIDDEN] {
            *v = glorot(rng, META_HIDDEN, 1);
        }
        net
    }

    /// All weights zero: outputs `c` everywhere.
    pub fn constant(inputs: usize, c: f64) -> Self {
        let mut theta = vec![0.0; META_HIDDEN * inputs + 2 * META_HIDDEN + 1];
        *theta.last_mut().unwrap() = c;
        MetaNet { inputs, theta }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    fn b1(&self) -> usize {
        META_HIDDEN * self.inputs
    }

    fn w2(&self) -> usize {
        self.b1() + META_HIDDEN
    }

    fn b2(&self) -> usize {
        self.w2() + META_HIDDEN
    }

    fn hidden(&self, s: &[f64]) -> [f64; META_HIDDEN] {
        let n = self.inputs;
        let b1 = self.b1();
        let mut h = [0.0; META_HIDDEN];
        for (j, hj) in h.iter_mut().enumerate() {
            *hj = sigmoid(dot(&self.theta[j * n..(j + 1) * n], s) + self.theta[b1 + j]);
        }
        h
    }

    pub fn output(&self, s: &[f64]) -> Result<f64> {
        self.check_input(s)?;
        Ok(self.forward(s))
    }

    pub fn tensors(&self) -> MetaTensors {
        let n = self.inputs;
        MetaTensors {
            w1: (0..META_HIDDEN).map(|j| self.theta[j * n..(j + 1) * n].to_vec()).collect(),
            b1: self.theta[self.b1()..self.w2()].to_vec(),
            w2: self.theta[self.w2()..self.b2()].to_vec(),
            b2: self.theta[self.b2()],
        }
    }

    pub fn from_tensors(t: MetaTensors) -> Result<Self> {
        let n = t.w1.first().map_or(0, Vec::len);
        let ok = n > 0
            && t.w1.len() == META_HIDDEN
            && t.w1.iter().all(|r| r.len() == n)
            && t.b1.len() == META_HIDDEN
            && t.w2.len() == META_HIDDEN;
        if !ok {
            return Err(Error::data(format!(
                "meta-level network must have {META_HIDDEN} hidden units and consistent shapes"
            )));
        }
        let mut theta: Vec<f64> = t.w1.concat();
        theta.extend_from_slice(&t.b1);
        theta.extend_from_slice(&t.w2);
        theta.push(t.b2);
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("meta-level parameters contain non-finite values"));
        }
        Ok(MetaNet { inputs: n, theta })
    }
}

impl Net for MetaNet {
    type Input = [f64];

    fn theta(&self) -> &[f64] {
        &self.theta
    }

    fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn penalized(&self) -> Vec<Range<usize>> {
        vec![0..self.b1(), self.w2()..self.b2()]
    }

    fn check_input(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.inputs {
            return Err(Error::invalid(format!(
                "meta-level network expects {} scores, got {}",
                self.inputs,
                s.len()
            )));
        }
        Ok(())
    }

    fn forward(&self, s: &[f64]) -> f64 {
        let h = self.hidden(s);
        self.theta[self.b2()] + dot(&self.theta[self.w2()..self.b2()], &h)
    }

    fn backprop(&self, s: &[f64], _drop: &mut Dropout<'_>, head: &mut dyn FnMut(f64) -> (f64, f64), grad: &mut [f64]) -> f64 {
        let n = self.inputs;
        let (b1, w2, b2) = (self.b1(), self.w2(), self.b2());
        let h = self.hidden(s);
        let z = self.theta[b2] + dot(&self.theta[w2..b2], &h);
        let (loss, dz) = head(z);
        grad[b2] += dz;
        for j in 0..META_HIDDEN {
            grad[w2 + j] += dz * h[j];
            let da = dz * self.theta[w2 + j] * h[j] * (1.0 - h[j]);
            grad[b1 + j] += da;
            for (g, &si) in grad[j * n..(j + 1) * n].iter_mut().zip(s) {
                *g += da * si;
            }
        }
        loss
    }
}

/// Meta-level training settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub l2: f64,
    /// clamp subject predictions to the score range
    pub clip_predictions: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            epochs: 2000,
            learning_rate: 0.05,
            patience: 100,
            l2: 0.0,
            clip_predictions: false,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.patience == 0 {
            return Err(Error::Config("meta: epochs and patience must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("meta: learning_rate must be positive".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config("meta: l2 must be non-negative".into()));
        }
        Ok(())
    }
}

/// Hyperparameter grids per learner family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grids {
    pub lr: Vec<Hyper>,
    pub svm: Vec<Hyper>,
    pub rf: Vec<Hyper>,
    pub mlp: Vec<Hyper>,
    pub lstm: Vec<Hyper>,
    /// grid for the LSTM regression baseline
    pub lstm_regression: Vec<Hyper>,
}

impl Default for Grids {
    fn default() -> Self {
        let mut svm = Vec::new();
        for c in [0.1, 1.0, 10.0] {
            for scale in [0.5, 1.0, 2.0] {
                svm.push(Hyper::Svm { c, scale, epsilon: 0.1 });
            }
        }
        let rf = |trees| Hyper::Rf {
            trees,
            max_depth: None,
            min_leaf: 1,
            bootstrap: true,
        };
        Grids {
            lr: [1e-3, 1e-2, 1e-1, 1.0].into_iter().map(|l2| Hyper::Lr { l2 }).collect(),
            svm,
            rf: [50, 100, 200, 400].into_iter().map(rf).collect(),
            mlp: vec![Hyper::Mlp {
                hidden1: 1000,
                hidden2: 100,
                shrink_small_inputs: true,
            }],
            lstm: vec![Hyper::Lstm { hidden: 16 }, Hyper::Lstm { hidden: 32 }],
            lstm_regression: vec![Hyper::Lstm { hidden: 16 }],
        }
    }
}

impl Grids {
    pub fn classifier(&self, kind: LearnerKind) -> &[Hyper] {
        match kind {
            LearnerKind::Lr => &self.lr,
            LearnerKind::Svm => &self.svm,
            LearnerKind::Rf => &self.rf,
            LearnerKind::Mlp => &self.mlp,
            LearnerKind::Lstm => &self.lstm,
        }
    }

    pub fn regressor(&self, kind: LearnerKind) -> &[Hyper] {
        match kind {
            LearnerKind::Lstm => &self.lstm_regression,
            k => self.classifier(k),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, grid: &[Hyper], kind: LearnerKind| -> Result<()> {
            if grid.is_empty() {
                return Err(Error::Config(format!("grid {name} is empty")));
            }
            for h in grid {
                if h.kind() != kind {
                    return Err(Error::Config(format!("grid {name} holds a {} setting", h.kind())));
                }
                h.validate().map_err(|e| Error::Config(format!("grid {name}: {e}")))?;
            }
            Ok(())
        };
        check("lr", &self.lr, LearnerKind::Lr)?;
        check("svm", &self.svm, LearnerKind::Svm)?;
        check("rf", &self.rf, LearnerKind::Rf)?;
        check("mlp", &self.mlp, LearnerKind::Mlp)?;
        check("lstm", &self.lstm, LearnerKind::Lstm)?;
        check("lstm_regression", &self.lstm_regression, LearnerKind::Lstm)
    }
}

/// Everything the training pipeline needs besides data.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PipelineConfig {
    pub thresholds: ThresholdSet,
    pub train: TrainConfig,
    pub grids: Grids,
    pub meta: MetaConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.grids.validate()?;
        self.meta.validate()
    }
}

/// Which learner sits at each threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct BankPlan {
    pub base_kind: LearnerKind,
    pub kinds: Vec<LearnerKind>,
}

impl BankPlan {
    pub fn homogeneous(kind: LearnerKind, n: usize) -> Self {
        BankPlan {
            base_kind: kind,
            kinds: vec![kind; n],
        }
    }
}

/// Trained bank plus meta-level network.
#[derive(Clone, Debug, PartialEq)]
pub struct Metamodel {
    pub bank: Vec<BinaryClassifier>,
    pub meta: MetaNet,
    pub thresholds: ThresholdSet,
    pub base_kind: LearnerKind,
    pub prep: FeaturePrep,
    pub clip_predictions: bool,
    pub warnings: Vec<String>,
}

/// Per-window base scores with their subject and true score.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    pub rows: Vec<Vec<f64>>,
    pub subjects: Vec<String>,
    pub targets: Vec<Option<f64>>,
}

impl ScoreTable {
    fn known_targets(&self) -> Result<Vec<f64>> {
        self.targets
            .iter()
            .map(|t| t.ok_or_else(|| Error::data("sample without a true score")))
            .collect()
    }
}

fn targets_of(examples: &[Example]) -> Result<Vec<f64>> {
    examples
        .iter()
        .map(|e| {
            e.target
                .ok_or_else(|| Error::data(format!("subject {} has no true score", e.subject_id)))
        })
        .collect()
}

/// True score per subject.
pub fn subject_truth(examples: &[Example]) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for e in examples {
        let t = e
            .target
            .ok_or_else(|| Error::data(format!("subject {} has no true score", e.subject_id)))?;
        out.insert(e.subject_id.clone(), t);
    }
    Ok(out)
}

/// Pearson r between subject predictions and true scores, matched by id.
pub fn subject_r(pred: &BTreeMap<String, f64>, truth: &BTreeMap<String, f64>) -> Result<f64> {
    let mut p = Vec::with_capacity(pred.len());
    let mut t = Vec::with_capacity(pred.len());
    for (id, v) in pred {
        let y = truth
            .get(id)
            .ok_or_else(|| Error::data(format!("no true score for subject {id}")))?;
        p.push(*v);
        t.push(*y);
    }
    pearson(&p, &t)
}

/// Maps window rows to subject groups for fast subject-level metrics.
struct SubjectIndex {
    group: Vec<usize>,
    truth: Vec<f64>,
}

impl SubjectIndex {
    fn new(subjects: &[String], targets: &[f64]) -> Self {
        let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
        for s in subjects {
            let n = ids.len();
            ids.entry(s.as_str()).or_insert(n);
        }
        let mut truth = vec![0.0; ids.len()];
        let group: Vec<usize> = subjects.iter().map(|s| ids[s.as_str()]).collect();
        for (&g, &t) in group.iter().zip(targets) {
            truth[g] = t;
        }
        SubjectIndex { group, truth }
    }

    /// Subject-level r of window predictions; NaN when undefined.
    fn r(&self, preds: &[f64]) -> f64 {
        let mut sum = vec![0.0; self.truth.len()];
        let mut cnt = vec![0usize; self.truth.len()];
        for (&g, &p) in self.group.iter().zip(preds) {
            sum[g] += p;
            cnt[g] += 1;
        }
        let means: Vec<f64> = sum.iter().zip(&cnt).map(|(s, &c)| s / c as f64).collect();
        pearson(&means, &self.truth).unwrap_or(f64::NAN)
    }
}

fn tagged<T>(r: Result<T>, ctx: impl std::fmt::Display) -> Result<T> {
    r.map_err(|e| e.context(ctx))
}

/// Trains one base classifier per threshold with its own grid search.
/// Thresholds whose training labels hold a single class get a constant
/// scorer at the class prior and a warning.
pub fn train_bank(
    tr: &[Example],
    vs: &[Example],
    plan: &BankPlan,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<(Vec<BinaryClassifier>, Vec<String>)> {
    let thresholds = cfg.thresholds.values();
    if plan.kinds.len() != thresholds.len() {
        return Err(Error::Config(format!(
            "{} learner kinds for {} thresholds",
            plan.kinds.len(),
            thresholds.len()
        )));
    }
    let tr_scores = targets_of(tr)?;
    let vs_scores = targets_of(vs)?;
    let results: Vec<Result<(BinaryClassifier, Option<String>)>> = (0..thresholds.len())
        .into_par_iter()
        .map(|k| {
            let t = thresholds[k];
            let kind = plan.kinds[k];
            let labels: Vec<f64> = tr_scores.iter().map(|&s| if s > t { 1.0 } else { 0.0 }).collect();
            let pos = labels.iter().sum::<f64>();
            if pos == 0.0 || pos == labels.len() as f64 {
                let prior = pos / labels.len() as f64;
                let msg = format!("threshold {t}: training labels hold a single class; using constant score {prior}");
                return Ok((BinaryClassifier::constant(prior), Some(msg)));
            }
            let vs_labels: Vec<f64> = vs_scores.iter().map(|&s| if s > t { 1.0 } else { 0.0 }).collect();
            let view = kind.view();
            let data = LabeledData {
                inputs: tr.iter().map(|e| e.input(view)).collect(),
                targets: labels,
            };
            let metric = |scores: &[f64]| classifier_metric(scores, &vs_labels);
            let val = Validation {
                inputs: vs.iter().map(|e| e.input(view)).collect(),
                metric: &metric,
            };
            let grid = cfg.grids.classifier(kind);
            let outcome = grid_search(
                grid,
                |i, h| fit_classifier(h, &cfg.train, &data, Some(&val), rng::derive_seed(seed, &format!("base/{k}/{i}"))),
                |m: &BinaryClassifier| {
                    let s = val.inputs.iter().map(|x| m.predict_score(*x)).collect::<Result<Vec<_>>>()?;
                    Ok(metric(&s))
                },
            );
            let outcome = tagged(outcome, format!("threshold {t} ({kind})"))?;
            for (i, msg) in &outcome.failures {
                warn!("threshold {t}: grid setting {i} failed: {msg}");
            }
            info!("threshold {t}: {kind} setting {} selected (metric {:.4})", outcome.index, outcome.metric);
            Ok((outcome.model, None))
        })
        .collect();
    let mut bank = Vec::with_capacity(results.len());
    let mut warnings = Vec::new();
    for r in results {
        let (b, w) = r?;
        if let Some(w) = w {
            warn!("{w}");
            warnings.push(w);
        }
        bank.push(b);
    }
    Ok((bank, warnings))
}

/// Feeds every example through every bank member: row `i`, column `k` is
/// the score of base model `k` on example `i`.
pub fn score_table(bank: &[BinaryClassifier], examples: &[Example]) -> Result<ScoreTable> {
    let rows = examples
        .par_iter()
        .map(|e| {
            bank.iter()
                .map(|b| b.predict_score(e.input(b.view().unwrap_or(View::Vector))))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreTable {
        rows,
        subjects: examples.iter().map(|e| e.subject_id.clone()).collect(),
        targets: examples.iter().map(|e| e.target).collect(),
    })
}

/// Full-batch Adam on squared error against the raw score, early-stopped on
/// the subject-level Pearson r of `vs`.
pub fn fit_meta(tr: &ScoreTable, vs: &ScoreTable, cfg: &MetaConfig, seed: u64) -> Result<MetaNet> {
    cfg.validate()?;
    if tr.rows.is_empty() || vs.rows.is_empty() {
        return Err(Error::training("meta-level stage needs training and validation samples"));
    }
    let n = tr.rows[0].len();
    let y = tr.known_targets()?;
    let vy = vs.known_targets()?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let mut net = MetaNet::new(n, mean, &mut rng::stream(seed, "meta/init"));
    let xs: Vec<&[f64]> = tr.rows.iter().map(Vec::as_slice).collect();
    for x in &xs {
        net.check_input(x)?;
    }
    let vx: Vec<&[f64]> = vs.rows.iter().map(Vec::as_slice).collect();
    let index = SubjectIndex::new(&vs.subjects, &vy);
    let metric = |p: &[f64]| index.r(p);
    let tc = TrainConfig {
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        l2: cfg.l2,
        dropout_rate: 0.0,
        target_noise_sd: 0.0,
        batch_size: xs.len(),
        early_stop_patience: cfg.patience,
        ..TrainConfig::default()
    };
    neural::train(
        &mut net,
        &xs,
        &y,
        &vec![1.0; y.len()],
        Objective::Mse,
        &tc,
        Some((&vx, &metric)),
        &mut rng::stream(seed, "meta/train"),
    )?;
    Ok(net)
}

/// Trains the bank on `tr`, then the meta-level network on the bank's `tr`
/// scores, early-stopping on `vs`.
pub fn train_metamodel(
    tr: &[Example],
    vs: &[Example],
    prep: &FeaturePrep,
    plan: &BankPlan,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Metamodel> {
    cfg.validate()?;
    let (bank, warnings) = train_bank(tr, vs, plan, cfg, seed)?;
    let tr_scores = score_table(&bank, tr)?;
    let vs_scores = score_table(&bank, vs)?;
    let meta = tagged(
        fit_meta(&tr_scores, &vs_scores, &cfg.meta, rng::derive_seed(seed, "meta")),
        "meta-level",
    )?;
    Ok(Metamodel {
        bank,
        meta,
        thresholds: cfg.thresholds.clone(),
        base_kind: plan.base_kind,
        prep: prep.clone(),
        clip_predictions: cfg.meta.clip_predictions,
        warnings,
    })
}

fn finish(pred: BTreeMap<String, f64>, clip: bool) -> BTreeMap<String, f64> {
    if clip {
        let max = f64::from(crate::dataset::MAX_SCORE);
        pred.into_iter().map(|(k, v)| (k, v.clamp(0.0, max))).collect()
    } else {
        pred
    }
}

/// Applies an already trained meta-level network to a score table.
pub fn predict_scores(meta: &MetaNet, table: &ScoreTable, clip: bool) -> Result<BTreeMap<String, f64>> {
    let preds = table
        .rows
        .iter()
        .zip(&table.subjects)
        .map(|(r, s)| Ok((s.as_str(), meta.output(r)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(aggregate_by_subject(&preds)?, clip))
}

impl Metamodel {
    /// Subject-level predictions for prepared examples.
    pub fn predict(&self, examples: &[Example]) -> Result<BTreeMap<String, f64>> {
        let table = score_table(&self.bank, examples)?;
        predict_scores(&self.meta, &table, self.clip_predictions)
    }

    /// Builds examples with the stored preparation, then predicts.
    pub fn predict_recordings(&self, recordings: &[Recording]) -> Result<BTreeMap<String, f64>> {
        self.predict(&self.prep.build(recordings)?)
    }

    /// Writes `meta.json` and `base_<k>.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (k, b) in self.bank.iter().enumerate() {
            let p = dir.join(format!("base_{k}.json"));
            fs::write(&p, b.to_document()?.to_json()?).map_err(|e| Error::io(&p, e))?;
        }
        let doc = MetaDocument {
            schema_version: META_SCHEMA_VERSION,
            thresholds: self.thresholds.clone(),
            base_kind: self.base_kind,
            meta: self.meta.tensors(),
            prep: self.prep.clone(),
            clip_predictions: self.clip_predictions,
            warnings: self.warnings.clone(),
            manifest: ModelManifest {
                crate_version: env!("CARGO_PKG_VERSION").to_string(),
                bank_size: self.bank.len(),
                bank_kinds: self
                    .bank
                    .iter()
                    .map(|b| b.kind().map_or("constant".to_string(), |k| k.to_string()))
                    .collect(),
            },
        };
        let p = dir.join(META_FILE);
        fs::write(&p, serde_json::to_string_pretty(&doc)?).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(META_FILE);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let doc: MetaDocument = serde_json::from_str(&text)?;
        if doc.schema_version != META_SCHEMA_VERSION {
            return Err(Error::data(format!("unsupported metamodel schema version {}", doc.schema_version)));
        }
        let n = doc.thresholds.len();
        let mut bank = Vec::with_capacity(n);
        for k in 0..n {
            let p = dir.join(format!("base_{k}.json"));
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            bank.push(tagged(BinaryClassifier::from_document(&ModelDocument::from_json(&text)?), p.display())?);
        }
        let meta = MetaNet::from_tensors(doc.meta)?;
        if meta.inputs() != n {
            return Err(Error::data(format!(
                "meta-level network takes {} scores but {n} thresholds are stored",
                meta.inputs()
            )));
        }
        Ok(Metamodel {
            bank,
            meta,
            thresholds: doc.thresholds,
            base_kind: doc.base_kind,
            prep: doc.prep,
            clip_predictions: doc.clip_predictions,
            warnings: doc.warnings,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaDocument {
    schema_version: u32,
    thresholds: ThresholdSet,
    base_kind: LearnerKind,
    meta: MetaTensors,
    prep: FeaturePrep,
    clip_predictions: bool,
    warnings: Vec<String>,
    manifest: ModelManifest,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelManifest {
    crate_version: String,
    bank_size: usize,
    bank_kinds: Vec<String>,
}

/// Traditional regressor with the preparation it was trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct Baseline {
    pub regressor: Regressor,
    pub prep: FeaturePrep,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BaselineDocument {
    prep: FeaturePrep,
    model: ModelDocument,
}

impl Baseline {
    pub fn predict(&self, examples: &[Example]) -> Result<BTreeMap<String, f64>> {
        let view = self.regressor.view();
        let preds = examples
            .par_iter()
            .map(|e| Ok((e.subject_id.as_str(), self.regressor.predict(e.input(view))?)))
            .collect::<Result<Vec<_>>>()?;
        aggregate_by_subject(&preds)
    }

    pub fn predict_recordings(&self, recordings: &[Recording]) -> Result<BTreeMap<String, f64>> {
        self.predict(&self.prep.build(recordings)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = BaselineDocument {
            prep: self.prep.clone(),
            model: self.regressor.to_document()?,
        };
        fs::write(path, serde_json::to_string_pretty(&doc)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: BaselineDocument = serde_json::from_str(&text)?;
        if doc.model.schema_version != crate::learners::SCHEMA_VERSION {
            return Err(Error::data(format!(
                "unsupported model schema version {}",
                doc.model.schema_version
            )));
        }
        Ok(Baseline {
            regressor: Regressor::from_document(&doc.model)?,
            prep: doc.prep,
        })
    }
}

/// Traditional regression counterpart of `kind`, grid-searched on the
/// subject-level r of `vs`.
pub fn train_baseline(
    kind: LearnerKind,
    tr: &[Example],
    vs: &[Example],
    prep: &FeaturePrep,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Baseline> {
    cfg.validate()?;
    let view = kind.view();
    let data = LabeledData {
        inputs: tr.iter().map(|e| e.input(view)).collect(),
        targets: targets_of(tr)?,
    };
    let vs_subjects: Vec<String> = vs.iter().map(|e| e.subject_id.clone()).collect();
    let index = SubjectIndex::new(&vs_subjects, &targets_of(vs)?);
    let metric = |p: &[f64]| index.r(p);
    let val = Validation {
        inputs: vs.iter().map(|e| e.input(view)).collect(),
        metric: &metric,
    };
    let outcome = grid_search(
        cfg.grids.regressor(kind),
        |i, h| fit_regressor(h, &cfg.train, &data, Some(&val), rng::derive_seed(seed, &format!("baseline/{i}"))),
        |m: &Regressor| {
            let p = val.inputs.iter().map(|x| m.predict(*x)).collect::<Result<Vec<_>>>()?;
            Ok(metric(&p))
        },
    );
    let outcome = tagged(outcome, format!("{} baseline", kind.regressor_name()))?;
    Ok(Baseline {
        regressor: outcome.model,
        prep: prep.clone(),
    })
}

/// Subject-level r, recorded as missing when undefined (e.g. constant
/// predictions).
pub fn fold_r(pred: &BTreeMap<String, f64>, truth: &BTreeMap<String, f64>) -> Option<f64> {
    match subject_r(pred, truth) {
        Ok(r) => Some(r),
        Err(e) => {
            warn!("correlation undefined: {e}");
            None
        }
    }
}

fn truth_of(recordings: &[Recording]) -> Result<BTreeMap<String, f64>> {
    recordings
        .iter()
        .map(|r| {
            r.score
                .map(|s| (r.id.clone(), f64::from(s)))
                .ok_or_else(|| Error::data(format!("subject {} has no true score", r.id)))
        })
        .collect()
}

/// Method 1: every stored model predicts the whole new dataset unchanged.
/// Row `i` of the report carries model `i`'s subject-level r under `tag`.
pub fn generalize_direct(models: &[Metamodel], recordings: &[Recording], tag: &str) -> Result<EvalReport> {
    if models.is_empty() {
        return Err(Error::invalid("no models to apply"));
    }
    let truth = truth_of(recordings)?;
    let mut rows = Vec::with_capacity(models.len());
    for (i, m) in models.iter().enumerate() {
        let pred = tagged(m.predict_recordings(recordings), format!("model {i}"))?;
        rows.push(FoldResult {
            fold: i,
            tag: tag.to_string(),
            r: fold_r(&pred, &truth),
        });
    }
    Ok(summarize(&rows))
}

/// Outcome of Method 2.
#[derive(Clone, Debug)]
pub struct RetrainOutcome {
    pub report: EvalReport,
    /// subject predictions concatenated over the fold test sets
    pub predictions: BTreeMap<String, f64>,
    pub pooled: Option<CorrelationResult>,
}

/// Method 2: the bank of `source` is frozen; for each split of the new data
/// a fresh meta-level network is trained on the bank's scores for the
/// split's training subjects and early-stopped on its validation subjects.
pub fn generalize_retrain_meta(
    source: &Metamodel,
    splits: &[Split],
    recordings: &[Recording],
    meta_cfg: &MetaConfig,
    seed: u64,
    tag: &str,
) -> Result<RetrainOutcome> {
    if splits.is_empty() {
        return Err(Error::invalid("no splits"));
    }
    let by_id: BTreeMap<&str, &Recording> = recordings.iter().map(|r| (r.id.as_str(), r)).collect();
    let truth = truth_of(recordings)?;
    let examples = |ids: &[String]| -> Result<Vec<Example>> {
        let recs = ids
            .iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|r| (*r).clone())
                    .ok_or_else(|| Error::data(format!("split names unknown subject {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        source.prep.build(&recs)
    };
    let mut rows = Vec::with_capacity(splits.len());
    let mut pooled_pred = BTreeMap::new();
    for (f, split) in splits.iter().enumerate() {
        let tr = score_table(&source.bank, &examples(&split.train)?)?;
        let vs = score_table(&source.bank, &examples(&split.val)?)?;
        let ts = score_table(&source.bank, &examples(&split.test)?)?;
        let meta = tagged(
            fit_meta(&tr, &vs, meta_cfg, rng::derive_seed(seed, &format!("retrain/{f}"))),
            format!("fold {f}"),
        )?;
        let pred = predict_scores(&meta, &ts, source.clip_predictions)?;
        rows.push(FoldResult {
            fold: f,
            tag: tag.to_string(),
            r: fold_r(&pred, &truth),
        });
        pooled_pred.extend(pred);
    }
    let mut report = summarize(&rows);
    let pooled = match subject_r(&pooled_pred, &truth).and_then(|r| corr_significance(r, pooled_pred.len())) {
        Ok(c) => {
            report.tests.push(TestRecord::Correlation {
                name: format!("{tag}_pooled"),
                result: c.clone(),
            });
            Some(c)
        }
        Err(e) => {
            report.notes.push(format!("pooled correlation undefined: {e}"));
            None
        }
    };
    Ok(RetrainOutcome {
        report,
        predictions: pooled_pred,
        pooled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::PhenotypeStats;
    use crate::learners::Model;
    use crate::linalg::Matrix;

    fn prep() -> FeaturePrep {
        FeaturePrep {
            window_length: 4,
            stride: 2,
            phenotypes: PhenotypeStats {
                age_mean: 0.0,
                age_sd: 1.0,
                fiq_mean: 0.0,
                fiq_sd: 1.0,
            },
        }
    }

    fn example(id: &str, w: usize, score: f64) -> Example {
        Example {
            subject_id: id.to_string(),
            window_index: w,
            vector: vec![score],
            sequence: Matrix::zeros(2, 2),
            target: Some(score),
        }
    }

    #[test]
    fn labels_for_score_three() {
        let t = ThresholdSet::default();
        assert_eq!(threshold_labels(3.0, &t), vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(threshold_labels(0.0, &t), vec![0.0; 7]);
        assert_eq!(threshold_labels(8.0, &t), vec![1.0; 7]);
    }

    #[test]
    fn threshold_set_validation() {
        assert!(ThresholdSet::new(vec![0.5, 0.5]).is_err());
        assert!(ThresholdSet::new(vec![1.5, 0.5]).is_err());
        assert!(ThresholdSet::new(vec![1.0, 2.5]).is_err());
        assert!(ThresholdSet::new(vec![]).is_err());
        assert!(serde_json::from_str::<ThresholdSet>("[2.5, 1.5]").is_err());
        let t: ThresholdSet = serde_json::from_str("[0.5, 3.5]").unwrap();
        assert_eq!(t.values(), &[0.5, 3.5]);
    }

    #[test]
    fn constant_net_predicts_constant() {
        let net = MetaNet::constant(7, 2.75);
        let table = ScoreTable {
            rows: vec![vec![0.1; 7], vec![0.9; 7], vec![0.3; 7]],
            subjects: vec!["a".into(), "a".into(), "b".into()],
            targets: vec![None; 3],
        };
        let p = predict_scores(&net, &table, false).unwrap();
        assert_eq!(p.values().copied().collect::<Vec<_>>(), vec![2.75, 2.75]);
    }

    #[test]
    fn forward_matches_definition() {
        let net = MetaNet::from_tensors(MetaTensors {
            w1: vec![vec![1.0, -1.0], vec![0.5, 0.5], vec![0.0, 2.0], vec![-1.0, 0.0]],
            b1: vec![0.1, -0.2, 0.0, 0.3],
            w2: vec![1.0, 2.0, -1.0, 0.5],
            b2: 0.25,
        })
        .unwrap();
        let s = [0.3, 0.8];
        let h = [
            sigmoid(0.3 - 0.8 + 0.1),
            sigmoid(0.15 + 0.4 - 0.2),
            sigmoid(1.6),
            sigmoid(-0.3 + 0.3),
        ];
        let want = 0.25 + h[0] + 2.0 * h[1] - h[2] + 0.5 * h[3];
        assert!((net.output(&s).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn two_windows_average() {
        // w2 = 0 except bias; use a net whose output equals its first input.
        let table = ScoreTable {
            rows: vec![vec![1.0], vec![2.0]],
            subjects: vec!["s".into(), "s".into()],
            targets: vec![None; 2],
        };
        let mut net = MetaNet::constant(1, 0.0);
        // tiny slope keeps sigmoid linear: output ≈ s
        let eps = 1e-4;
        net.theta[0] = eps;
        let (w2, b2) = (net.w2(), net.b2());
        net.theta[w2] = 4.0 / eps;
        net.theta[b2] = -2.0 / eps;
        let p = predict_scores(&net, &table, false).unwrap();
        assert!((p["s"] - 1.5).abs() < 1e-6);
    }

    #[test]
    fn stub_bits_recover_scores() {
        let t = ThresholdSet::default();
        let mut rows = Vec::new();
        let mut subjects = Vec::new();
        let mut targets = Vec::new();
        for rep in 0..5 {
            for s in 0..=8u8 {
                rows.push(threshold_labels(f64::from(s), &t));
                subjects.push(format!("s{s}_{rep}"));
                targets.push(Some(f64::from(s)));
            }
        }
        let table = ScoreTable { rows, subjects, targets };
        let net = fit_meta(&table, &table, &MetaConfig::default(), 0).unwrap();
        let mae = table
            .rows
            .iter()
            .zip(&table.targets)
            .map(|(r, y)| (net.output(r).unwrap() - y.unwrap()).abs())
            .sum::<f64>()
            / table.rows.len() as f64;
        assert!(mae < 0.25, "mae {mae}");
    }

    #[test]
    fn score_columns_follow_bank_order() {
        let bank: Vec<BinaryClassifier> = (0..7).map(|k| BinaryClassifier::constant(k as f64 / 10.0)).collect();
        let ex = vec![example("a", 0, 1.0), example("b", 0, 5.0)];
        let table = score_table(&bank, &ex).unwrap();
        for row in &table.rows {
            for (k, v) in row.iter().enumerate() {
                assert_eq!(*v, k as f64 / 10.0);
            }
        }
    }

    #[test]
    fn degenerate_thresholds_become_constant() {
        // every score is at most 4, so thresholds 4.5..6.5 see one class
        let mut tr = Vec::new();
        let mut vs = Vec::new();
        for i in 0..30 {
            let s = (i % 5) as f64;
            tr.push(example(&format!("t{i}"), 0, s));
            if i < 10 {
                vs.push(example(&format!("v{i}"), 0, s));
            }
        }
        let cfg = PipelineConfig::default();
        let m = train_metamodel(&tr, &vs, &prep(), &BankPlan::homogeneous(LearnerKind::Lr, 7), &cfg, 1).unwrap();
        assert_eq!(m.bank.len(), 7);
        assert_eq!(m.warnings.len(), 3);
        for b in &m.bank[4..] {
            assert_eq!(b.model, Model::Constant(0.0));
        }
        for b in &m.bank[..4] {
            assert_eq!(b.kind(), Some(LearnerKind::Lr));
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let mut tr = Vec::new();
        for i in 0..27 {
            tr.push(example(&format!("t{i}"), 0, (i % 9) as f64));
        }
        let cfg = PipelineConfig::default();
        let m = train_metamodel(&tr, &tr, &prep(), &BankPlan::homogeneous(LearnerKind::Lr, 7), &cfg, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        assert!(dir.path().join("base_6.json").exists());
        let back = Metamodel::load(dir.path()).unwrap();
        assert_eq!(back.predict(&tr).unwrap(), m.predict(&tr).unwrap());
        assert_eq!(back, m);
    }
}
