//! Feature views for the base learners.
//!
//! Tabular learners see the strict upper triangle of each window's Pearson
//! connectivity matrix. Sequence learners see the window itself with the
//! z-scored phenotypes (age, FIQ) appended as constant channels.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{self, Recording, Subject};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Population mean and standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// `(x - mean) / sd`, or all zeros when `sd == 0`.
pub fn znorm(values: &[f64], mean: f64, sd: f64) -> Vec<f64> {
    if sd == 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|x| (x - mean) / sd).collect()
}

/// Pearson correlation between every pair of columns. Columns with zero
/// variance correlate 0 with everything else; the diagonal is always 1.
pub fn connectivity(series: &Matrix) -> Result<Matrix> {
    let t = series.rows();
    let r = series.cols();
    if t < 3 {
        return Err(Error::invalid(format!(
            "connectivity needs at least 3 time points, got {t}"
        )));
    }
    let mut means = vec![0.0; r];
    for i in 0..t {
        for (m, v) in means.iter_mut().zip(series.row(i)) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= t as f64;
    }
    // centered, column-major copy for contiguous pair products
    let mut centered = vec![0.0; r * t];
    for i in 0..t {
        for (j, v) in series.row(i).iter().enumerate() {
            centered[j * t + i] = v - means[j];
        }
    }
    let col = |j: usize| &centered[j * t..(j + 1) * t];
    let norms: Vec<f64> = (0..r)
        .map(|j| col(j).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut out = Matrix::zeros(r, r);
    for a in 0..r {
        out.set(a, a, 1.0);
        for b in a + 1..r {
            let c = if norms[a] == 0.0 || norms[b] == 0.0 {
                0.0
            } else {
                let s: f64 = col(a).iter().zip(col(b)).map(|(x, y)| x * y).sum();
                (s / (norms[a] * norms[b])).clamp(-1.0, 1.0)
            };
            out.set(a, b, c);
            out.set(b, a, c);
        }
    }
    Ok(out)
}

/// Strictly-upper-triangular entries in row-major order, `R(R-1)/2` values.
pub fn upper_triangle(mat: &Matrix) -> Result<Vec<f64>> {
    let r = mat.rows();
    if mat.cols() != r {
        return Err(Error::invalid(format!(
            "upper_triangle needs a square matrix, got {}x{}",
            r,
            mat.cols()
        )));
    }
    let mut out = Vec::with_capacity(r * r.saturating_sub(1) / 2);
    for i in 0..r {
        out.extend_from_slice(&mat.row(i)[i + 1..]);
    }
    Ok(out)
}

pub fn connectivity_len(rois: usize) -> usize {
    rois * rois.saturating_sub(1) / 2
}

/// Appends each phenotype value as a constant column after the ROI columns.
pub fn attach_phenotypes(series: &Matrix, phenotypes: &[f64]) -> Matrix {
    let r = series.cols();
    let p = phenotypes.len();
    Matrix::from_fn(series.rows(), r + p, |i, j| {
        if j < r {
            series.get(i, j)
        } else {
            phenotypes[j - r]
        }
    })
}

/// Phenotype normalization statistics, fitted on training subjects only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhenotypeStats {
    pub age_mean: f64,
    pub age_sd: f64,
    pub fiq_mean: f64,
    pub fiq_sd: f64,
}

impl PhenotypeStats {
    pub fn fit(subjects: &[&Subject]) -> Self {
        let ages: Vec<f64> = subjects.iter().map(|s| s.age).collect();
        let fiqs: Vec<f64> = subjects.iter().filter_map(|s| s.fiq).collect();
        let (age_mean, age_sd) = mean_sd(&ages);
        let (fiq_mean, fiq_sd) = mean_sd(&fiqs);
        PhenotypeStats {
            age_mean,
            age_sd,
            fiq_mean,
            fiq_sd,
        }
    }

    /// z-scored `[age, fiq]`; an absent value maps to 0.
    pub fn channels(&self, age: Option<f64>, fiq: Option<f64>) -> [f64; 2] {
        let z = |v: Option<f64>, m: f64, sd: f64| v.map_or(0.0, |x| znorm(&[x], m, sd)[0]);
        [
            z(age, self.age_mean, self.age_sd),
            z(fiq, self.fiq_mean, self.fiq_sd),
        ]
    }
}

/// Everything needed to turn a recording into model inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturePrep {
    pub window_length: usize,
    pub stride: usize,
    pub phenotypes: PhenotypeStats,
}

/// One window in both feature views.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub subject_id: String,
    pub window_index: usize,
    /// connectivity upper triangle
    pub vector: Vec<f64>,
    /// window × (ROIs + phenotype channels)
    pub sequence: Matrix,
    pub target: Option<f64>,
}

impl FeaturePrep {
    pub fn examples_for(&self, rec: &Recording) -> Result<Vec<Example>> {
        let pheno = self.phenotypes.channels(rec.age, rec.fiq);
        let windows = dataset::window(&rec.series, self.window_length, self.stride)
            .map_err(|e| e.context(format!("subject {}", rec.id)))?;
        windows
            .into_iter()
            .enumerate()
            .map(|(i, w)| {
                let vector = upper_triangle(&connectivity(&w)?)?;
                Ok(Example {
                    subject_id: rec.id.clone(),
                    window_index: i,
                    vector,
                    sequence: attach_phenotypes(&w, &pheno),
                    target: rec.score.map(f64::from),
                })
            })
            .collect()
    }

    pub fn build(&self, recordings: &[Recording]) -> Result<Vec<Example>> {
        let mut out = Vec::new();
        for r in recordings {
            out.extend(self.examples_for(r)?);
        }
        Ok(out)
    }

    pub fn build_subjects(&self, subjects: &[&Subject]) -> Result<Vec<Example>> {
        let recs: Vec<Recording> = subjects.iter().map(|s| Recording::from(*s)).collect();
        self.build(&recs)
    }
}

/// Writes `subject_id,window_index,f_0..f_{D-1}` rows.
pub fn write_feature_cache(path: &Path, examples: &[Example]) -> Result<()> {
    let d = examples.first().map_or(0, |e| e.vector.len());
    let mut out = String::from("subject_id,window_index");
    for i in 0..d {
        out.push_str(&format!(",f_{i}"));
    }
    out.push('\n');
    for e in examples {
        if e.vector.len() != d {
            return Err(Error::invalid("feature vectors differ in length"));
        }
        out.push_str(&format!("{},{}", e.subject_id, e.window_index));
        for v in &e.vector {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_feature_cache(path: &Path) -> Result<Vec<(String, usize, Vec<f64>)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or_default().to_string();
        let w: usize = rec
            .get(1)
            .unwrap_or_default()
            .parse()
            .map_err(|_| Error::data("bad window_index in feature cache"))?;
        let vals = rec
            .iter()
            .skip(2)
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::data(format!("bad feature value {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push((id, w, vals));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..x.len() {
            sx += x[i];
            sy += y[i];
            sxx += x[i] * x[i];
            syy += y[i] * y[i];
            sxy += x[i] * y[i];
        }
        (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
    }

    #[test]
    fn znorm_examples() {
        let x = [10.0, 20.0, 30.0];
        let (m, sd) = mean_sd(&x);
        let z = znorm(&x, m, sd);
        let expect = 1.224_744_871_391_589;
        assert!((z[0] + expect).abs() < 1e-12 && z[1].abs() < 1e-15 && (z[2] - expect).abs() < 1e-12);
        assert_eq!(znorm(&[4.0, 4.0], 4.0, 0.0), vec![0.0, 0.0]);
        assert_eq!(znorm(&[m], m, sd), vec![0.0]);
    }

    #[test]
    fn znorm_standardizes() {
        let mut rng = crate::rng::seeded(1);
        let x: Vec<f64> = (0..57).map(|_| rng.random_range(-3.0..9.0)).collect();
        let (m, sd) = mean_sd(&x);
        let (m2, sd2) = mean_sd(&znorm(&x, m, sd));
        assert!(m2.abs() < 1e-10 && (sd2 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn connectivity_matches_textbook_formula() {
        let mut rng = crate::rng::seeded(2);
        for _ in 0..5 {
            let m = Matrix::from_fn(20, 5, |_, _| rng.random_range(-1.0..1.0));
            let c = connectivity(&m).unwrap();
            for a in 0..5 {
                for b in 0..5 {
                    let want = if a == b { 1.0 } else { brute_pearson(&m.column(a), &m.column(b)) };
                    assert!((c.get(a, b) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn connectivity_special_columns() {
        let m = Matrix::from_fn(10, 4, |i, j| match j {
            0 | 1 => (i as f64).sin(),
            2 => -(i as f64).sin(),
            _ => 3.0,
        });
        let c = connectivity(&m).unwrap();
        assert!((c.get(0, 1) - 1.0).abs() < 1e-12);
        assert!((c.get(0, 2) + 1.0).abs() < 1e-12);
        assert_eq!(c.get(0, 3), 0.0);
        assert_eq!(c.get(3, 3), 1.0);
        assert!(connectivity(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn upper_triangle_layout() {
        let m = Matrix::from_rows(&[
            vec![1.0, 0.1, 0.2],
            vec![0.1, 1.0, 0.3],
            vec![0.2, 0.3, 1.0],
        ])
        .unwrap();
        assert_eq!(upper_triangle(&m).unwrap(), vec![0.1, 0.2, 0.3]);
        assert_eq!(upper_triangle(&Matrix::zeros(2, 2)).unwrap().len(), 1);
        assert_eq!(upper_triangle(&Matrix::zeros(116, 116)).unwrap().len(), 6670);
        assert!(upper_triangle(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn relabeling_permutes_pairs() {
        let mut rng = crate::rng::seeded(3);
        let m = Matrix::from_fn(30, 4, |_, _| rng.random_range(-1.0..1.0));
        let perm = [2usize, 0, 3, 1];
        let pm = Matrix::from_fn(30, 4, |i, j| m.get(i, perm[j]));
        let v = upper_triangle(&connectivity(&m).unwrap()).unwrap();
        let pv = upper_triangle(&connectivity(&pm).unwrap()).unwrap();
        let pair_index = |a: usize, b: usize| {
            let (a, b) = if a < b { (a, b) } else { (b, a) };
            (0..a).map(|i| 4 - 1 - i).sum::<usize>() + (b - a - 1)
        };
        let mut k = 0;
        for a in 0..4 {
            for b in a + 1..4 {
                assert!((pv[k] - v[pair_index(perm[a], perm[b])]).abs() < 1e-14);
                k += 1;
            }
        }
    }

    #[test]
    fn phenotype_channels() {
        let m = Matrix::from_fn(7, 116, |i, j| (i + j) as f64);
        let a = attach_phenotypes(&m, &[0.5, -1.0]);
        assert_eq!(a.cols(), 118);
        for i in 0..7 {
            assert_eq!(a.get(i, 116), 0.5);
            assert_eq!(a.get(i, 117), -1.0);
            assert_eq!(&a.row(i)[..116], m.row(i));
        }
        assert_eq!(attach_phenotypes(&m, &[]), m);
    }

    #[test]
    fn missing_fiq_is_zero_channel() {
        let stats = PhenotypeStats {
            age_mean: 20.0,
            age_sd: 5.0,
            fiq_mean: 100.0,
            fiq_sd: 15.0,
        };
        assert_eq!(stats.channels(Some(25.0), None), [1.0, 0.0]);
    }
}
