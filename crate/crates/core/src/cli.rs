//! Command-line front end: `synth`, `crossval`, `generalize`, `predict`,
//! `describe`.
//!
//! Output directories carry a `manifest.json` (config hash, seed, version)
//! and a `.partial` marker while a command runs; the marker is removed only
//! on success. Files are written to `<name>.partial` and renamed into place.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dataset::{self, Dataset, Recording, Split};
use crate::error::{Error, Result};
use crate::features::{FeaturePrep, PhenotypeStats};
use crate::learners::LearnerKind;
use crate::metamodel::{self, fold_r, subject_truth, Baseline, Metamodel};
use crate::rng;
use crate::stats::{self, summarize, EvalReport, FoldResult, TestRecord};
use crate::synth;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARTIAL_MARKER: &str = ".partial";
pub const CROSSVAL_CSV: &str = "crossval.csv";
pub const GENERALIZE_CSV: &str = "generalize.csv";
pub const SUMMARY_JSON: &str = "summary.json";
const MODELS_DIR: &str = "models";
const INDEX_FILE: &str = "index.json";

pub const METAMODEL: &str = "metamodel";
pub const TRADITIONAL: &str = "traditional";

#[derive(Debug, Parser)]
#[command(name = "ordmeta", version, about = "Threshold-classifier metamodel for ordinal score regression")]
pub struct Cli {
    /// experiment configuration (JSON)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// worker threads
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: u16,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset
    Synth {
        /// dataset directory to create (defaults to the config's `data`)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validate metamodel and traditional regression
    Crossval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Carry stored cross-validation models to a new dataset
    Generalize {
        /// output directory of a previous `crossval` run
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        method: u8,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict scores with a stored metamodel
    Predict {
        /// metamodel directory (holding meta.json)
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a dataset per site
    Describe {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
}

/// Writes `path.partial`, then renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Marks an output directory as incomplete until `finish`.
struct RunMarker {
    path: PathBuf,
}

impl RunMarker {
    fn start(dir: &Path, cfg: &ExperimentConfig, command: &str) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(PARTIAL_MARKER);
        fs::write(&path, format!("{command} in progress\n")).map_err(|e| Error::io(&path, e))?;
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_sha256: cfg.sha256()?,
            seed: cfg.seed,
        };
        write_atomic(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        Ok(RunMarker { path })
    }

    fn fail(&self, err: &Error) {
        let _ = fs::write(&self.path, format!("failed: {err}\n"));
    }

    fn finish(self) -> Result<()> {
        fs::remove_file(&self.path).map_err(|e| Error::io(&self.path, e))
    }
}

fn guarded(dir: &Path, cfg: &ExperimentConfig, command: &str, body: impl FnOnce() -> Result<()>) -> Result<()> {
    let marker = RunMarker::start(dir, cfg, command)?;
    match body() {
        Ok(()) => marker.finish(),
        Err(e) => {
            marker.fail(&e);
            Err(e)
        }
    }
}

fn required(p: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    p.ok_or_else(|| Error::invalid(format!("no {what} given (flag or config)")))
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    match cli.command {
        Command::Synth { out } => cmd_synth(&cfg, &required(out.or(cfg.data.clone()), "output directory")?),
        Command::Crossval { data, out } => cmd_crossval(
            &cfg,
            &required(data.or(cfg.data.clone()), "dataset directory")?,
            &required(out.or(cfg.output.clone()), "output directory")?,
        ),
        Command::Generalize {
            models,
            data,
            method,
            out,
        } => cmd_generalize(
            &cfg,
            &models,
            &required(data.or(cfg.generalize.data.clone()), "new dataset directory")?,
            method,
            &required(out.or(cfg.output.clone()), "output directory")?,
        ),
        Command::Predict { models, data, out } => cmd_predict(&models, &data, &out),
        Command::Describe { data, out } => {
            cmd_describe(&required(data.or(cfg.data.clone()), "dataset directory")?, out.as_deref())
        }
    }
}

pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    guarded(out, cfg, "synth", || {
        let ds = synth::generate(&cfg.synth)?;
        dataset::write_dataset(&ds, out)?;
        print!("{}", synth::describe(&ds));
        Ok(())
    })
}

pub fn cmd_describe(data: &Path, out: Option<&Path>) -> Result<()> {
    let ds = dataset::load_dir(data)?;
    let table = synth::describe(&ds).to_string();
    print!("{table}");
    if let Some(out) = out {
        write_atomic(out, table.as_bytes())?;
    }
    Ok(())
}

/// One row of a cross-validation or generalization report.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub fold: usize,
    pub kind: LearnerKind,
    pub pipeline: &'static str,
    pub r: Option<f64>,
}

fn rows_csv(first: &str, rows: &[RunRow]) -> String {
    let mut s = format!("{first},base_kind,pipeline,r\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.fold,
            r.kind,
            r.pipeline,
            r.r.map(|v| v.to_string()).unwrap_or_default()
        );
    }
    s
}

fn tag(kind: LearnerKind, pipeline: &str) -> String {
    format!("{kind}/{pipeline}")
}

/// Summary with a paired t-test per kind and, for two or more kinds, the
/// method × algorithm repeated-measures ANOVA over folds.
pub fn summarize_rows(rows: &[RunRow], kinds: &[LearnerKind]) -> EvalReport {
    let per_fold: Vec<FoldResult> = rows
        .iter()
        .map(|r| FoldResult {
            fold: r.fold,
            tag: tag(r.kind, r.pipeline),
            r: r.r,
        })
        .collect();
    let mut report = summarize(&per_fold);
    let pairs = |kind: LearnerKind| -> Vec<(usize, f64, f64)> {
        let get = |p: &str| -> BTreeMap<usize, Option<f64>> {
            rows.iter()
                .filter(|r| r.kind == kind && r.pipeline == p)
                .map(|r| (r.fold, r.r))
                .collect()
        };
        let (m, t) = (get(METAMODEL), get(TRADITIONAL));
        m.iter()
            .filter_map(|(f, a)| Some((*f, (*a)?, (*t.get(f)?)?)))
            .collect()
    };
    for &kind in kinds {
        let p = pairs(kind);
        let a: Vec<f64> = p.iter().map(|x| x.1).collect();
        let b: Vec<f64> = p.iter().map(|x| x.2).collect();
        match stats::paired_ttest(&a, &b) {
            Ok(result) => report.tests.push(TestRecord::PairedT {
                name: format!("{kind}: metamodel vs traditional"),
                a: tag(kind, METAMODEL),
                b: tag(kind, TRADITIONAL),
                result,
            }),
            Err(e) => report.notes.push(format!("{kind}: paired t-test skipped: {e}")),
        }
    }
    if kinds.len() >= 2 {
        let folds: Vec<usize> = {
            let mut f: Vec<usize> = rows.iter().map(|r| r.fold).collect();
            f.sort_unstable();
            f.dedup();
            f
        };
        let lookup: BTreeMap<(usize, LearnerKind, &str), Option<f64>> =
            rows.iter().map(|r| ((r.fold, r.kind, r.pipeline), r.r)).collect();
        let tensor: Option<Vec<Vec<Vec<f64>>>> = folds
            .iter()
            .map(|&f| {
                [TRADITIONAL, METAMODEL]
                    .iter()
                    .map(|&p| kinds.iter().map(|&k| lookup.get(&(f, k, p)).copied().flatten()).collect())
                    .collect()
            })
            .collect();
        match tensor.map(|t| stats::rm_anova_2way(&t)) {
            Some(Ok(effects)) => report.tests.extend(effects.into_iter().map(TestRecord::Anova)),
            Some(Err(e)) => report.notes.push(format!("ANOVA skipped: {e}")),
            None => report.notes.push("ANOVA skipped: missing correlations".into()),
        }
    }
    report
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelIndex {
    folds: usize,
    kinds: Vec<LearnerKind>,
    rois: usize,
}

fn fold_dir(models: &Path, fold: usize, kind: LearnerKind) -> PathBuf {
    models.join(format!("fold_{fold}")).join(kind.as_str())
}

fn prep_for(cfg: &ExperimentConfig, train: &[&dataset::Subject]) -> FeaturePrep {
    FeaturePrep {
        window_length: cfg.window_length,
        stride: cfg.stride,
        phenotypes: PhenotypeStats::fit(train),
    }
}

fn fold_rows(cfg: &ExperimentConfig, ds: &Dataset, split: &Split, fold: usize, models: &Path) -> Result<Vec<RunRow>> {
    let ctx = |e: Error| e.context(format!("fold {fold}"));
    let train = ds.select(&split.train).map_err(ctx)?;
    let prep = prep_for(cfg, &train);
    let tr = prep.build_subjects(&train).map_err(ctx)?;
    let vs = prep.build_subjects(&ds.select(&split.val)?).map_err(ctx)?;
    let ts = prep.build_subjects(&ds.select(&split.test)?).map_err(ctx)?;
    let truth = subject_truth(&ts)?;
    let pipeline = cfg.pipeline();
    let mut rows = Vec::new();
    for &kind in &cfg.base_kinds {
        let ctx = |e: Error| e.context(format!("fold {fold}, {kind}"));
        let seed = rng::derive_seed(cfg.seed, &format!("fold/{fold}/{kind}"));
        let mm = metamodel::train_metamodel(&tr, &vs, &prep, &cfg.plan(kind), &pipeline, rng::derive_seed(seed, METAMODEL))
            .map_err(ctx)?;
        let base = metamodel::train_baseline(kind, &tr, &vs, &prep, &pipeline, rng::derive_seed(seed, TRADITIONAL))
            .map_err(ctx)?;
        let dir = fold_dir(models, fold, kind);
        mm.save(&dir.join(METAMODEL))?;
        base.save(&dir.join("baseline.json"))?;
        let m_r = fold_r(&mm.predict(&ts)?, &truth);
        let t_r = fold_r(&base.predict(&ts)?, &truth);
        info!("fold {fold} {kind}: metamodel r = {m_r:?}, traditional r = {t_r:?}");
        rows.push(RunRow {
            fold,
            kind,
            pipeline: METAMODEL,
            r: m_r,
        });
        rows.push(RunRow {
            fold,
            kind,
            pipeline: TRADITIONAL,
            r: t_r,
        });
    }
    Ok(rows)
}

/// Trains both pipelines for every fold and kind; returns the report rows.
pub fn cmd_crossval(cfg: &ExperimentConfig, data: &Path, out: &Path) -> Result<()> {
    guarded(out, cfg, "crossval", || {
        let ds = dataset::load_dir(data)?;
        let splits = dataset::kfold_split(&ds, cfg.k_folds, cfg.val_fraction, cfg.seed)?;
        write_atomic(&out.join("splits.json"), serde_json::to_string_pretty(&splits)?.as_bytes())?;
        let models = out.join(MODELS_DIR);
        let results: Vec<Result<Vec<RunRow>>> = splits
            .par_iter()
            .enumerate()
            .map(|(f, s)| fold_rows(cfg, &ds, s, f, &models))
            .collect();
        let mut rows = Vec::new();
        let mut failure = None;
        for r in results {
            match r {
                Ok(v) => rows.extend(v),
                Err(e) => {
                    failure.get_or_insert(e);
                }
            }
        }
        if let Some(e) = failure {
            // completed folds stay behind the partial suffix
            let p = out.join(format!("{CROSSVAL_CSV}.partial"));
            let _ = fs::write(&p, rows_csv("fold", &rows));
            return Err(e);
        }
        let index = ModelIndex {
            folds: splits.len(),
            kinds: cfg.base_kinds.clone(),
            rois: ds.rois(),
        };
        write_atomic(&models.join(INDEX_FILE), serde_json::to_string_pretty(&index)?.as_bytes())?;
        write_atomic(&out.join(CROSSVAL_CSV), rows_csv("fold", &rows).as_bytes())?;
        let report = summarize_rows(&rows, &cfg.base_kinds);
        write_atomic(&out.join(SUMMARY_JSON), serde_json::to_string_pretty(&report)?.as_bytes())?;
        print!("{}", summary_table(&report));
        Ok(())
    })
}

/// `tag,n,mean,sd` lines for the terminal.
pub fn summary_table(report: &EvalReport) -> String {
    let mut s = String::from("tag,n,mean,sd\n");
    for t in &report.summary {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{}", t.tag, t.n, f(t.mean), f(t.sd));
    }
    s
}

fn load_index(models: &Path) -> Result<ModelIndex> {
    let p = models.join(MODELS_DIR).join(INDEX_FILE);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn cmd_generalize(cfg: &ExperimentConfig, models: &Path, data: &Path, method: u8, out: &Path) -> Result<()> {
    if !(1..=2).contains(&method) {
        return Err(Error::invalid(format!("method must be 1 or 2, got {method}")));
    }
    let index = load_index(models)?;
    guarded(out, cfg, &format!("generalize --method {method}"), || {
        let ds = dataset::load_dir(data)?;
        if ds.rois() != index.rois {
            return Err(Error::data(format!(
                "new dataset has {} ROIs, stored models expect {}",
                ds.rois(),
                index.rois
            )));
        }
        let recordings: Vec<Recording> = ds.subjects().iter().map(Recording::from).collect();
        let root = models.join(MODELS_DIR);
        let mut rows = Vec::new();
        let mut pooled = Vec::new();
        if method == 1 {
            let truth: BTreeMap<String, f64> = recordings
                .iter()
                .map(|r| (r.id.clone(), f64::from(r.score.unwrap_or_default())))
                .collect();
            for &kind in &index.kinds {
                let mms = (0..index.folds)
                    .map(|f| Metamodel::load(&fold_dir(&root, f, kind).join(METAMODEL)))
                    .collect::<Result<Vec<_>>>()?;
                let report = metamodel::generalize_direct(&mms, &recordings, METAMODEL)?;
                for fr in report.per_fold {
                    rows.push(RunRow {
                        fold: fr.fold,
                        kind,
                        pipeline: METAMODEL,
                        r: fr.r,
                    });
                }
                for f in 0..index.folds {
                    let b = Baseline::load(&fold_dir(&root, f, kind).join("baseline.json"))?;
                    rows.push(RunRow {
                        fold: f,
                        kind,
                        pipeline: TRADITIONAL,
                        r: fold_r(&b.predict_recordings(&recordings)?, &truth),
                    });
                }
            }
        } else {
            let bank_fold = cfg.generalize.bank_fold;
            if bank_fold >= index.folds {
                return Err(Error::Config(format!(
                    "bank_fold {bank_fold} not among the {} stored folds",
                    index.folds
                )));
            }
            let splits = dataset::kfold_split(
                &ds,
                cfg.generalize.k_folds,
                cfg.val_fraction,
                rng::derive_seed(cfg.seed, "generalize/splits"),
            )?;
            write_atomic(&out.join("splits.json"), serde_json::to_string_pretty(&splits)?.as_bytes())?;
            let by_id: BTreeMap<&str, &Recording> = recordings.iter().map(|r| (r.id.as_str(), r)).collect();
            let truth: BTreeMap<String, f64> = recordings
                .iter()
                .map(|r| (r.id.clone(), f64::from(r.score.unwrap_or_default())))
                .collect();
            for &kind in &index.kinds {
                let dir = fold_dir(&root, bank_fold, kind);
                let source = Metamodel::load(&dir.join(METAMODEL))?;
                let outcome = metamodel::generalize_retrain_meta(
                    &source,
                    &splits,
                    &recordings,
                    &cfg.meta,
                    rng::derive_seed(cfg.seed, &format!("generalize/{kind}")),
                    METAMODEL,
                )?;
                for fr in &outcome.report.per_fold {
                    rows.push(RunRow {
                        fold: fr.fold,
                        kind,
                        pipeline: METAMODEL,
                        r: fr.r,
                    });
                }
                if let Some(c) = outcome.pooled {
                    pooled.push(TestRecord::Correlation {
                        name: format!("{}: pooled", tag(kind, METAMODEL)),
                        result: c,
                    });
                }
                // the stored baseline of the same fold, scored on the same test folds
                let base = Baseline::load(&dir.join("baseline.json"))?;
                let mut all = BTreeMap::new();
                for (f, s) in splits.iter().enumerate() {
                    let recs: Vec<Recording> = s.test.iter().map(|id| by_id[id.as_str()].clone()).collect();
                    let pred = base.predict_recordings(&recs)?;
                    rows.push(RunRow {
                        fold: f,
                        kind,
                        pipeline: TRADITIONAL,
                        r: fold_r(&pred, &truth),
                    });
                    all.extend(pred);
                }
                if let Ok(c) = metamodel::subject_r(&all, &truth).and_then(|r| stats::corr_significance(r, all.len())) {
                    pooled.push(TestRecord::Correlation {
                        name: format!("{}: pooled", tag(kind, TRADITIONAL)),
                        result: c,
                    });
                }
            }
        }
        rows.sort_by(|a, b| (a.kind.as_str(), a.pipeline, a.fold).cmp(&(b.kind.as_str(), b.pipeline, b.fold)));
        let first = if method == 1 { "model" } else { "fold" };
        write_atomic(&out.join(GENERALIZE_CSV), rows_csv(first, &rows).as_bytes())?;
        let mut report = summarize_rows(&rows, &index.kinds);
        report.tests.extend(pooled);
        write_atomic(&out.join(SUMMARY_JSON), serde_json::to_string_pretty(&report)?.as_bytes())?;
        print!("{}", summary_table(&report));
        Ok(())
    })
}

/// `subject_id,predicted_score` sorted by id; subjects without phenotype
/// rows are still predicted.
pub fn cmd_predict(models: &Path, data: &Path, out: &Path) -> Result<()> {
    if !models.join("meta.json").is_file() {
        return Err(Error::invalid(format!(
            "{} is not a metamodel directory (no meta.json)",
            models.display()
        )));
    }
    let mm = Metamodel::load(models)?;
    let recordings = dataset::load_recordings(data)?;
    let pred = mm.predict_recordings(&recordings)?;
    write_atomic(out, predictions_csv(&pred).as_bytes())
}

pub fn predictions_csv(pred: &BTreeMap<String, f64>) -> String {
    let mut s = String::from("subject_id,predicted_score\n");
    for (id, v) in pred {
        let _ = writeln!(s, "{id},{v}");
    }
    s
}
