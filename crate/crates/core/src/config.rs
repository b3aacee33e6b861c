//! Experiment configuration: one JSON document drives every subcommand.
//! Unknown keys are rejected and every field is validated up front.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::learners::{LearnerKind, TrainConfig};
use crate::metamodel::{BankPlan, Grids, MetaConfig, PipelineConfig, ThresholdSet};
use crate::synth::SynthConfig;

/// Generalization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneralizeConfig {
    /// new dataset directory
    pub data: Option<PathBuf>,
    /// folds of the new data for method 2
    pub k_folds: usize,
    /// which stored fold's bank is frozen for method 2
    pub bank_fold: usize,
}

impl Default for GeneralizeConfig {
    fn default() -> Self {
        GeneralizeConfig {
            data: None,
            k_folds: 5,
            bank_fold: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// dataset directory (`phenotypes.csv` + `series/`)
    pub data: Option<PathBuf>,
    /// output directory
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub base_kinds: Vec<LearnerKind>,
    /// optional learner per threshold, overriding the base kind
    pub threshold_kinds: Option<Vec<LearnerKind>>,
    pub thresholds: ThresholdSet,
    pub window_length: usize,
    pub stride: usize,
    pub k_folds: usize,
    /// fraction of all subjects held out for validation in each fold
    pub val_fraction: f64,
    pub train: TrainConfig,
    pub grids: Grids,
    pub meta: MetaConfig,
    pub synth: SynthConfig,
    pub generalize: GeneralizeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: None,
            output: None,
            seed: 0,
            base_kinds: vec![LearnerKind::Lr],
            threshold_kinds: None,
            thresholds: ThresholdSet::default(),
            window_length: 90,
            stride: 10,
            k_folds: 8,
            val_fraction: 0.088,
            train: TrainConfig::default(),
            grids: Grids::default(),
            meta: MetaConfig::default(),
            synth: SynthConfig::default(),
            generalize: GeneralizeConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates `path`; relative paths inside are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        resolve(&mut cfg.data);
        resolve(&mut cfg.output);
        resolve(&mut cfg.generalize.data);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.base_kinds.is_empty() {
            return bad("base_kinds is empty".into());
        }
        let mut seen = self.base_kinds.clone();
        seen.sort_by_key(|k| k.as_str());
        seen.dedup();
        if seen.len() != self.base_kinds.len() {
            return bad("base_kinds lists a kind twice".into());
        }
        if let Some(k) = &self.threshold_kinds {
            if k.len() != self.thresholds.len() {
                return bad(format!(
                    "threshold_kinds has {} entries for {} thresholds",
                    k.len(),
                    self.thresholds.len()
                ));
            }
            if self.base_kinds.len() != 1 {
                return bad("threshold_kinds requires exactly one base kind".into());
            }
        }
        if self.window_length < 3 || self.stride == 0 {
            return bad("window_length must be at least 3 and stride positive".into());
        }
        if self.k_folds < 2 || self.generalize.k_folds < 2 {
            return bad("k_folds must be at least 2".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)".into());
        }
        if self.generalize.bank_fold >= self.k_folds {
            return bad(format!(
                "generalize.bank_fold {} is not a fold of a {}-fold run",
                self.generalize.bank_fold, self.k_folds
            ));
        }
        self.synth.validate().map_err(|e| Error::Config(format!("synth: {e}")))?;
        self.pipeline().validate()
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            thresholds: self.thresholds.clone(),
            train: self.train.clone(),
            grids: self.grids.clone(),
            meta: self.meta.clone(),
        }
    }

    pub fn plan(&self, kind: LearnerKind) -> BankPlan {
        match &self.threshold_kinds {
            Some(kinds) => BankPlan {
                base_kind: kind,
                kinds: kinds.clone(),
            },
            None => BankPlan::homogeneous(kind, self.thresholds.len()),
        }
    }

    /// SHA-256 of the canonical JSON form, as lowercase hex.
    pub fn sha256(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        let digest = Sha256::digest(&bytes);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"seed": 1, "colour": "red"}"#).unwrap();
        assert!(matches!(ExperimentConfig::load(&p), Err(Error::Config(_))));
        fs::write(&p, r#"{"train": {"epochs": 3, "momentum": 0.9}}"#).unwrap();
        assert!(ExperimentConfig::load(&p).is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"data": "d", "output": "/abs/out", "base_kinds": ["lr", "rf"]}"#).unwrap();
        let c = ExperimentConfig::load(&p).unwrap();
        assert_eq!(c.data.unwrap(), dir.path().join("d"));
        assert_eq!(c.output.unwrap(), PathBuf::from("/abs/out"));
        assert_eq!(c.base_kinds, vec![LearnerKind::Lr, LearnerKind::Rf]);
    }

    #[test]
    fn invalid_values_fail_validation() {
        let mut c = ExperimentConfig::default();
        assert!(c.validate().is_ok());
        c.k_folds = 1;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.threshold_kinds = Some(vec![LearnerKind::Lr; 3]);
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.grids.lr = vec![crate::learners::Hyper::Lstm { hidden: 4 }];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.base_kinds = vec![LearnerKind::Lr, LearnerKind::Lr];
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.sha256().unwrap(), b.sha256().unwrap());
        b.seed = 9;
        assert_ne!(a.sha256().unwrap(), b.sha256().unwrap());
        assert_eq!(a.sha256().unwrap().len(), 64);
    }
}
