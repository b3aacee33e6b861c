//! Synthetic ROI time series whose connectivity at designated ROI pairs
//! grows with the subject's severity score.
//!
//! Each signal pair `(i, j)` shares a latent Gaussian factor `z`. With mixing
//! coefficient `m = signal_strength · score / 8`, both channels are
//! `noise_sd · (m·z + sqrt(1 - m²)·e)`, so their population correlation is
//! `m²`. All other channels are white noise.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Subject, MAX_SCORE};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;
use crate::stats::mean_sample_sd;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub rois: usize,
    pub time_points: usize,
    /// probability of each score 0..=8
    pub score_distribution: Vec<f64>,
    pub signal_pairs: Vec<(usize, usize)>,
    pub signal_strength: f64,
    pub noise_sd: f64,
    /// age slope (years per score point); FIQ gets the negated slope
    pub phenotype_effect: f64,
    pub sites: usize,
    pub seed: u64,
}

/// Discrete triangular distribution over 0..=8 with its mode at 2.
pub fn triangular_scores() -> Vec<f64> {
    let w: Vec<f64> = (0..=8)
        .map(|s: i32| {
            if s <= 2 {
                f64::from(s + 1) / 3.0
            } else {
                f64::from(9 - s) / 7.0
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 120,
            rois: 20,
            time_points: 200,
            score_distribution: triangular_scores(),
            signal_pairs: (0..8).map(|p| (2 * p, 2 * p + 1)).collect(),
            signal_strength: 0.8,
            noise_sd: 1.0,
            phenotype_effect: 0.5,
            sites: 2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_subjects == 0 {
            return bad("n_subjects must be positive".into());
        }
        if self.rois < 2 {
            return bad("rois must be at least 2".into());
        }
        if self.time_points == 0 {
            return bad("time_points must be positive".into());
        }
        if self.sites == 0 {
            return bad("sites must be positive".into());
        }
        if self.score_distribution.len() != usize::from(MAX_SCORE) + 1 {
            return bad("score_distribution needs 9 probabilities".into());
        }
        if self.score_distribution.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return bad("score_distribution entries must be non-negative".into());
        }
        let total: f64 = self.score_distribution.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("score_distribution sums to {total}, not 1"));
        }
        let mut used = BTreeSet::new();
        for &(i, j) in &self.signal_pairs {
            if i == j || i >= self.rois || j >= self.rois {
                return bad(format!("invalid signal pair ({i}, {j})"));
            }
            if !used.insert(i) || !used.insert(j) {
                return bad(format!("ROI reused across signal pairs at ({i}, {j})"));
            }
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return bad("signal_strength must lie in [0, 1]".into());
        }
        if !(self.noise_sd.is_finite() && self.noise_sd > 0.0) {
            return bad("noise_sd must be positive".into());
        }
        if !self.phenotype_effect.is_finite() {
            return bad("phenotype_effect must be finite".into());
        }
        Ok(())
    }
}

fn draw_score(dist: &[f64], u: f64) -> u8 {
    let mut acc = 0.0;
    for (s, p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return s as u8;
        }
    }
    // u landed in the rounding slack above the last cumulative value
    dist.iter().rposition(|p| *p > 0.0).unwrap_or(0) as u8
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn generate(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut partner = vec![None; config.rois];
    for (p, &(i, j)) in config.signal_pairs.iter().enumerate() {
        partner[i] = Some(p);
        partner[j] = Some(p);
    }
    let subjects = (0..config.n_subjects)
        .map(|k| {
            let mut rng = rng::stream(config.seed, &format!("synth/subject/{k}"));
            let score = draw_score(&config.score_distribution, rng.random::<f64>());
            let m = config.signal_strength * f64::from(score) / f64::from(MAX_SCORE);
            let own = (1.0 - m * m).sqrt();
            let mut series = Matrix::zeros(config.time_points, config.rois);
            let mut latent = vec![0.0; config.signal_pairs.len()];
            for t in 0..config.time_points {
                for z in latent.iter_mut() {
                    *z = normal(&mut rng);
                }
                let row = series.row_mut(t);
                for (r, v) in row.iter_mut().enumerate() {
                    let e = normal(&mut rng);
                    *v = config.noise_sd
                        * match partner[r] {
                            Some(p) => m * latent[p] + own * e,
                            None => e,
                        };
                }
            }
            let centered = f64::from(score) - 4.0;
            let age = 20.0 + config.phenotype_effect * centered + 5.0 * normal(&mut rng);
            let fiq = 105.0 - config.phenotype_effect * centered + 15.0 * normal(&mut rng);
            Subject {
                id: format!("sub{k:04}"),
                site: format!("site{}", k % config.sites),
                series,
                age,
                fiq: Some(fiq),
                score,
            }
        })
        .collect();
    Dataset::new(subjects)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteRow {
    pub site: String,
    pub n: usize,
    /// longest per-subject series at the site
    pub time_points: usize,
    pub age_mean: f64,
    pub age_sd: f64,
    pub fiq_mean: Option<f64>,
    pub fiq_sd: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Description {
    pub sites: Vec<SiteRow>,
    pub score_histogram: Vec<usize>,
}

pub const DESCRIBE_COLUMNS: [&str; 7] = [
    "site",
    "n",
    "time_points",
    "age_mean",
    "age_sd",
    "fiq_mean",
    "fiq_sd",
];

/// Per-site summary (sample SDs) and score histogram.
pub fn describe(dataset: &Dataset) -> Description {
    let mut by_site: BTreeMap<&str, Vec<&Subject>> = BTreeMap::new();
    for s in dataset.subjects() {
        by_site.entry(s.site.as_str()).or_default().push(s);
    }
    let sites = by_site
        .into_iter()
        .map(|(site, subs)| {
            let ages: Vec<f64> = subs.iter().map(|s| s.age).collect();
            let fiqs: Vec<f64> = subs.iter().filter_map(|s| s.fiq).collect();
            let (age_mean, age_sd) = mean_sample_sd(&ages).unwrap_or((f64::NAN, f64::NAN));
            let fiq = mean_sample_sd(&fiqs);
            SiteRow {
                site: site.to_string(),
                n: subs.len(),
                time_points: subs.iter().map(|s| s.series.rows()).max().unwrap_or(0),
                age_mean,
                age_sd,
                fiq_mean: fiq.map(|f| f.0),
                fiq_sd: fiq.map(|f| f.1),
            }
        })
        .collect();
    let mut score_histogram = vec![0; usize::from(MAX_SCORE) + 1];
    for s in dataset.subjects() {
        score_histogram[usize::from(s.score)] += 1;
    }
    Description {
        sites,
        score_histogram,
    }
}

impl fmt::Display for Description {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", DESCRIBE_COLUMNS.join(","))?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
        for r in &self.sites {
            writeln!(
                f,
                "{},{},{},{:.2},{:.2},{},{}",
                r.site,
                r.n,
                r.time_points,
                r.age_mean,
                r.age_sd,
                opt(r.fiq_mean),
                opt(r.fiq_sd)
            )?;
        }
        let hist: Vec<String> = self.score_histogram.iter().map(|c| c.to_string()).collect();
        write!(f, "score_histogram(0..8),{}", hist.join(","))
    }
}
