//! Subject-level data: ingestion of ROI time series and phenotypes,
//! reproducible k-fold splits, and sliding-window augmentation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;

pub const MAX_SCORE: u8 = 8;
pub const PHENOTYPE_FILE: &str = "phenotypes.csv";
pub const SERIES_DIR: &str = "series";

/// One participant.
#[derive(Clone, Debug, PartialEq)]
pub struct Subject {
    pub id: String,
    pub site: String,
    /// time × ROI
    pub series: Matrix,
    pub age: f64,
    pub fiq: Option<f64>,
    pub score: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    subjects: Vec<Subject>,
    rois: usize,
}

impl Dataset {
    /// Validates the collection invariants: unique ids, a shared ROI count of
    /// at least two, non-empty finite series, and scores in `0..=8`.
    pub fn new(subjects: Vec<Subject>) -> Result<Self> {
        let first = subjects
            .first()
            .ok_or_else(|| Error::data("dataset has no subjects"))?;
        let rois = first.series.cols();
        let mut seen = BTreeSet::new();
        for s in &subjects {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::data(format!("duplicate subject id {}", s.id)));
            }
            if s.series.cols() != rois {
                return Err(Error::data(format!(
                    "ROI count mismatch: subject {} has {} columns, expected {rois}",
                    s.id,
                    s.series.cols()
                )));
            }
            check_subject(s)?;
        }
        Ok(Dataset { subjects, rois })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn rois(&self) -> usize {
        self.rois
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Subject> {
        self.subjects.iter().find(|s| s.id == id)
    }

    /// Subjects whose ids are listed, in the order given.
    pub fn select(&self, ids: &[String]) -> Result<Vec<&Subject>> {
        let index: HashMap<&str, &Subject> =
            self.subjects.iter().map(|s| (s.id.as_str(), s)).collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::data(format!("unknown subject id {id}")))
            })
            .collect()
    }
}

fn check_subject(s: &Subject) -> Result<()> {
    if s.series.rows() == 0 {
        return Err(Error::data(format!("subject {} has no time points", s.id)));
    }
    if s.series.cols() < 2 {
        return Err(Error::data(format!("subject {} has fewer than 2 ROIs", s.id)));
    }
    if !s.series.is_finite() {
        return Err(Error::data(format!(
            "subject {} has non-finite series values",
            s.id
        )));
    }
    if s.score > MAX_SCORE {
        return Err(Error::data(format!(
            "score out of range for subject {}: {}",
            s.id, s.score
        )));
    }
    if !s.age.is_finite() || s.fiq.is_some_and(|f| !f.is_finite()) {
        return Err(Error::data(format!(
            "subject {} has non-finite phenotypes",
            s.id
        )));
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct PhenotypeRow {
    id: String,
    site: String,
    age: String,
    fiq: String,
    score: String,
}

/// Phenotype record for one id; every field but the id may be absent when
/// loading data for prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct Phenotype {
    pub site: String,
    pub age: Option<f64>,
    pub fiq: Option<f64>,
    pub score: Option<u8>,
}

fn parse_opt_f64(field: &str, what: &str, id: &str) -> Result<Option<f64>> {
    let t = field.trim();
    if t.is_empty() {
        return Ok(None);
    }
    let v: f64 = t
        .parse()
        .map_err(|_| Error::data(format!("subject {id}: cannot parse {what} {t:?}")))?;
    if !v.is_finite() {
        return Err(Error::data(format!("subject {id}: non-finite {what}")));
    }
    Ok(Some(v))
}

fn parse_score(field: &str, id: &str) -> Result<Option<u8>> {
    let Some(v) = parse_opt_f64(field, "score", id)? else {
        return Ok(None);
    };
    if v.fract() != 0.0 {
        return Err(Error::data(format!("subject {id}: score {v} is not an integer")));
    }
    if !(0.0..=f64::from(MAX_SCORE)).contains(&v) {
        return Err(Error::data(format!("score out of range for subject {id}: {v}")));
    }
    Ok(Some(v as u8))
}

/// Reads `phenotypes.csv` (header `id,site,age,fiq,score`) keyed by id, in
/// file order.
pub fn read_phenotypes(path: &Path) -> Result<Vec<(String, Phenotype)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_to_io(path, e))?;
    let headers = rdr.headers()?.clone();
    let expected = ["id", "site", "age", "fiq", "score"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::data(format!(
            "{}: expected header id,site,age,fiq,score",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: PhenotypeRow = row?;
        let p = Phenotype {
            site: row.site.clone(),
            age: parse_opt_f64(&row.age, "age", &row.id)?,
            fiq: parse_opt_f64(&row.fiq, "fiq", &row.id)?,
            score: parse_score(&row.score, &row.id)?,
        };
        out.push((row.id, p));
    }
    Ok(out)
}

fn csv_to_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::data(format!("{}: {other:?}", path.display())),
    }
}

/// Reads one headerless numeric CSV (rows = time points, columns = ROIs).
pub fn read_series(path: &Path) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_to_io(path, e))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                let v: f64 = f.parse().map_err(|_| {
                    Error::data(format!("{}: cannot parse value {f:?}", path.display()))
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::data(format!("{}: non-finite value", path.display())))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Matrix::from_rows(&rows).map_err(|e| e.context(path.display()))
}

pub fn series_path(series_dir: &Path, id: &str) -> PathBuf {
    series_dir.join(format!("{id}.csv"))
}

/// Loads a labelled dataset: every phenotype row needs a site, age and score
/// (FIQ may be empty) and a matching `<series_dir>/<id>.csv`.
pub fn load_dataset(phenotype_file: &Path, series_dir: &Path) -> Result<Dataset> {
    let rows = read_phenotypes(phenotype_file)?;
    let mut subjects = Vec::with_capacity(rows.len());
    for (id, p) in rows {
        let path = series_path(series_dir, &id);
        if !path.is_file() {
            return Err(Error::data(format!(
                "missing series file for subject {id}: {}",
                path.display()
            )));
        }
        let series = read_series(&path)?;
        let age = p
            .age
            .ok_or_else(|| Error::data(format!("subject {id}: missing age")))?;
        let score = p
            .score
            .ok_or_else(|| Error::data(format!("subject {id}: missing score")))?;
        subjects.push(Subject {
            id,
            site: p.site,
            series,
            age,
            fiq: p.fiq,
            score,
        });
    }
    Dataset::new(subjects)
}

/// `load_dataset(dir/phenotypes.csv, dir/series)`.
pub fn load_dir(dir: &Path) -> Result<Dataset> {
    load_dataset(&dir.join(PHENOTYPE_FILE), &dir.join(SERIES_DIR))
}

/// A recording to score: series plus whatever phenotypes are known.
#[derive(Clone, Debug)]
pub struct Recording {
    pub id: String,
    pub series: Matrix,
    pub age: Option<f64>,
    pub fiq: Option<f64>,
    pub score: Option<u8>,
}

impl From<&Subject> for Recording {
    fn from(s: &Subject) -> Self {
        Recording {
            id: s.id.clone(),
            series: s.series.clone(),
            age: Some(s.age),
            fiq: s.fiq,
            score: Some(s.score),
        }
    }
}

/// Loads every `series/*.csv` under `dir`, attaching phenotypes when
/// `phenotypes.csv` lists the id. Ids without phenotype rows are kept. Sorted
/// by id.
pub fn load_recordings(dir: &Path) -> Result<Vec<Recording>> {
    let pheno_path = dir.join(PHENOTYPE_FILE);
    let pheno: BTreeMap<String, Phenotype> = if pheno_path.is_file() {
        read_phenotypes(&pheno_path)?.into_iter().collect()
    } else {
        BTreeMap::new()
    };
    let series_dir = dir.join(SERIES_DIR);
    let entries = fs::read_dir(&series_dir).map_err(|e| Error::io(&series_dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&series_dir, e))?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            paths.push(path);
        }
    }
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    let mut rois = None;
    for path in paths {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::data(format!("bad series file name {}", path.display())))?
            .to_string();
        let series = read_series(&path)?;
        if series.rows() == 0 || series.cols() < 2 {
            return Err(Error::data(format!("subject {id}: empty series")));
        }
        match rois {
            None => rois = Some(series.cols()),
            Some(r) if r != series.cols() => {
                return Err(Error::data(format!(
                    "ROI count mismatch: subject {id} has {} columns, expected {r}",
                    series.cols()
                )))
            }
            _ => {}
        }
        let p = pheno.get(&id);
        out.push(Recording {
            id,
            series,
            age: p.and_then(|p| p.age),
            fiq: p.and_then(|p| p.fiq),
            score: p.and_then(|p| p.score),
        });
    }
    if out.is_empty() {
        return Err(Error::data(format!(
            "no series files under {}",
            series_dir.display()
        )));
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the on-disk layout `load_dir` reads.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    let series_dir = dir.join(SERIES_DIR);
    fs::create_dir_all(&series_dir).map_err(|e| Error::io(&series_dir, e))?;
    let pheno_path = dir.join(PHENOTYPE_FILE);
    let mut w = csv::Writer::from_path(&pheno_path).map_err(|e| csv_to_io(&pheno_path, e))?;
    w.write_record(["id", "site", "age", "fiq", "score"])?;
    for s in dataset.subjects() {
        w.write_record([
            s.id.clone(),
            s.site.clone(),
            s.age.to_string(),
            fmt_opt(s.fiq),
            s.score.to_string(),
        ])?;
        write_series(&series_path(&series_dir, &s.id), &s.series)?;
    }
    w.flush().map_err(|e| Error::io(&pheno_path, e))?;
    Ok(())
}

pub fn write_series(path: &Path, series: &Matrix) -> Result<()> {
    let mut out = String::with_capacity(series.rows() * series.cols() * 20);
    for r in 0..series.rows() {
        for (j, v) in series.row(r).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Subject-level partition for one fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

/// `k` folds whose test sets partition the ids. Ids are sorted, shuffled with
/// `seed` and dealt round-robin into the test buckets; each fold then draws
/// `round(val_fraction · n)` validation ids from its own shuffled non-test
/// remainder. Id lists inside a split are sorted.
pub fn kfold_split(dataset: &Dataset, k: usize, val_fraction: f64, seed: u64) -> Result<Vec<Split>> {
    kfold_split_ids(&dataset.ids(), k, val_fraction, seed)
}

pub fn kfold_split_ids(ids: &[String], k: usize, val_fraction: f64, seed: u64) -> Result<Vec<Split>> {
    let n = ids.len();
    if k < 2 {
        return Err(Error::invalid(format!("k must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::invalid(format!(
            "k = {k} exceeds subject count {n}"
        )));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "val_fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    let mut order: Vec<String> = ids.to_vec();
    order.sort();
    order.dedup();
    if order.len() != n {
        return Err(Error::invalid("subject ids are not unique"));
    }
    order.shuffle(&mut rng::stream(seed, "kfold/order"));

    let n_val = ((val_fraction * n as f64).round() as usize).max(1);
    let mut splits = Vec::with_capacity(k);
    for fold in 0..k {
        let mut test = Vec::new();
        let mut rest = Vec::new();
        for (i, id) in order.iter().enumerate() {
            if i % k == fold {
                test.push(id.clone());
            } else {
                rest.push(id.clone());
            }
        }
        if n_val >= rest.len() {
            return Err(Error::invalid(format!(
                "fold {fold}: validation size {n_val} leaves no training subjects"
            )));
        }
        rest.shuffle(&mut rng::stream(seed, &format!("kfold/val/{fold}")));
        let mut val: Vec<String> = rest[..n_val].to_vec();
        let mut train: Vec<String> = rest[n_val..].to_vec();
        test.sort();
        val.sort();
        train.sort();
        splits.push(Split {
            train,
            val,
            test,
            seed,
        });
    }
    Ok(splits)
}

/// Number of windows `window` yields for a series of `t` rows.
pub fn window_count(t: usize, length: usize, stride: usize) -> Result<usize> {
    if length == 0 || stride == 0 {
        return Err(Error::invalid("window length and stride must be positive"));
    }
    if t < length {
        return Err(Error::data(format!(
            "series shorter than window: {t} time points < {length}"
        )));
    }
    Ok((t - length) / stride + 1)
}

/// Overlapping windows of `length` rows taken every `stride` rows; window `i`
/// covers rows `[i·stride, i·stride + length)`.
pub fn window(series: &Matrix, length: usize, stride: usize) -> Result<Vec<Matrix>> {
    let count = window_count(series.rows(), length, stride)?;
    Ok((0..count)
        .map(|i| series.row_range(i * stride, length))
        .collect())
}

/// One augmented window.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub subject_id: String,
    pub window_index: usize,
    pub series: Matrix,
    pub label: f64,
}

/// Windows every listed subject; labels are the raw scores.
pub fn augment(subjects: &[&Subject], length: usize, stride: usize) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for s in subjects {
        let windows = window(&s.series, length, stride).map_err(|e| e.context(&s.id))?;
        for (i, w) in windows.into_iter().enumerate() {
            out.push(Sample {
                subject_id: s.id.clone(),
                window_index: i,
                series: w,
                label: f64::from(s.score),
            });
        }
    }
    Ok(out)
}

/// Per-subject arithmetic mean of sample predictions, keyed (and therefore
/// ordered) by subject id.
pub fn aggregate_by_subject<S: AsRef<str>>(predictions: &[(S, f64)]) -> Result<BTreeMap<String, f64>> {
    if predictions.is_empty() {
        return Err(Error::invalid("no predictions to aggregate"));
    }
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (id, p) in predictions {
        let e = acc.entry(id.as_ref().to_string()).or_insert((0.0, 0));
        e.0 += p;
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(id, (sum, n))| (id, sum / n as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:03}")).collect()
    }

    fn subject(id: &str, t: usize, r: usize, score: u8) -> Subject {
        Subject {
            id: id.into(),
            site: "X".into(),
            series: Matrix::from_fn(t, r, |i, j| (i * r + j) as f64),
            age: 20.0,
            fiq: None,
            score,
        }
    }

    #[test]
    fn window_count_matches_enumeration() {
        let m = Matrix::zeros(235, 2);
        let ws = window(&m, 90, 10).unwrap();
        let brute = (0..235usize).filter(|s| s % 10 == 0 && s + 90 <= 235).count();
        assert_eq!(ws.len(), brute);
        assert_eq!(ws.len(), 15);
    }

    #[test]
    fn window_boundaries() {
        let m = Matrix::from_fn(90, 3, |i, j| (i * 3 + j) as f64);
        let ws = window(&m, 90, 10).unwrap();
        assert_eq!(ws.len(), 1);
        assert_eq!(ws[0], m);
        let short = Matrix::zeros(89, 3);
        let err = window(&short, 90, 10).unwrap_err();
        assert!(err.to_string().contains("series shorter than window"));
    }

    #[test]
    fn window_starts_follow_stride() {
        let m = Matrix::from_fn(50, 2, |i, _| i as f64);
        let ws = window(&m, 7, 3).unwrap();
        for (i, w) in ws.iter().enumerate() {
            assert_eq!(w.rows(), 7);
            assert_eq!(w.get(0, 0), (i * 3) as f64);
        }
    }

    #[test]
    fn kfold_sizes_80_subjects() {
        let splits = kfold_split_ids(&ids(80), 8, 0.10, 7).unwrap();
        assert_eq!(splits.len(), 8);
        let all: BTreeSet<String> = ids(80).into_iter().collect();
        let mut tests_union = BTreeSet::new();
        for s in &splits {
            assert_eq!((s.test.len(), s.val.len(), s.train.len()), (10, 8, 62));
            let t: BTreeSet<_> = s.test.iter().cloned().collect();
            let v: BTreeSet<_> = s.val.iter().cloned().collect();
            let r: BTreeSet<_> = s.train.iter().cloned().collect();
            assert!(t.is_disjoint(&v) && t.is_disjoint(&r) && v.is_disjoint(&r));
            let u: BTreeSet<_> = t.union(&v).chain(r.iter()).cloned().collect();
            assert_eq!(u, all);
            for id in &s.test {
                assert!(tests_union.insert(id.clone()), "test sets overlap");
            }
        }
        assert_eq!(tests_union, all);
    }

    #[test]
    fn kfold_is_deterministic_and_seed_sensitive() {
        let a = kfold_split_ids(&ids(30), 5, 0.1, 3).unwrap();
        let b = kfold_split_ids(&ids(30), 5, 0.1, 3).unwrap();
        let c = kfold_split_ids(&ids(30), 5, 0.1, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        // input order does not matter
        let mut rev = ids(30);
        rev.reverse();
        assert_eq!(kfold_split_ids(&rev, 5, 0.1, 3).unwrap(), a);
    }

    #[test]
    fn kfold_eighth_is_test_fraction() {
        let splits = kfold_split_ids(&ids(200), 8, 0.088, 0).unwrap();
        for s in splits {
            assert_eq!(s.test.len() as f64 / 200.0, 0.125);
        }
    }

    #[test]
    fn kfold_rejects_bad_arguments() {
        assert!(kfold_split_ids(&ids(5), 8, 0.1, 0).is_err());
        assert!(kfold_split_ids(&ids(10), 1, 0.1, 0).is_err());
        assert!(kfold_split_ids(&ids(10), 2, 0.0, 0).is_err());
        assert!(kfold_split_ids(&ids(10), 2, 1.0, 0).is_err());
    }

    #[test]
    fn aggregation() {
        let m = aggregate_by_subject(&[("s1", 2.0), ("s1", 4.0), ("s2", 5.0)]).unwrap();
        assert_eq!(m["s1"], 3.0);
        assert_eq!(m["s2"], 5.0);
        let c: Vec<(&str, f64)> = (0..15).map(|_| ("a", 1.2)).collect();
        assert!((aggregate_by_subject(&c).unwrap()["a"] - 1.2).abs() < 1e-15);
        assert!(aggregate_by_subject::<&str>(&[]).is_err());
    }

    #[test]
    fn dataset_invariants() {
        assert!(Dataset::new(vec![subject("a", 5, 3, 1), subject("a", 5, 3, 1)]).is_err());
        assert!(Dataset::new(vec![subject("a", 5, 3, 1), subject("b", 5, 4, 1)]).is_err());
        assert!(Dataset::new(vec![subject("a", 5, 3, 9)]).is_err());
        assert!(Dataset::new(vec![subject("a", 5, 1, 1)]).is_err());
        let d = Dataset::new(vec![subject("a", 5, 3, 1), subject("b", 6, 3, 8)]).unwrap();
        assert_eq!(d.rois(), 3);
    }

    #[test]
    fn augmentation_keeps_subjects_apart() {
        let d = Dataset::new(vec![subject("a", 30, 3, 1), subject("b", 30, 3, 2)]).unwrap();
        let split = Split {
            train: vec!["a".into()],
            val: vec![],
            test: vec!["b".into()],
            seed: 0,
        };
        let tr = augment(&d.select(&split.train).unwrap(), 10, 5).unwrap();
        let ts = augment(&d.select(&split.test).unwrap(), 10, 5).unwrap();
        assert!(tr.iter().all(|s| s.subject_id == "a" && s.label == 1.0));
        assert!(ts.iter().all(|s| s.subject_id == "b"));
        assert_eq!(tr.len(), 5);
    }
}
