//! Threshold-classifier metamodel for regression on ordinal severity scores.
//!
//! A regression target with integer levels `0..=8` is decomposed into a bank of
//! binary "score above threshold" classifiers. Their scores feed a small
//! fully-connected meta-level network that emits the real-valued prediction.
//! The crate also carries the data plumbing (ROI time-series ingestion,
//! subject-level splits, window augmentation, connectivity features), the
//! base learners, the traditional regression baselines, and the evaluation
//! statistics used to compare the two pipelines.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod features;
pub mod learners;
pub mod linalg;
pub mod metamodel;
pub mod rng;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use linalg::Matrix;
