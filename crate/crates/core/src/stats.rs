//! Evaluation statistics: Pearson correlation and its significance, the
//! paired two-tailed t-test, a two-way repeated-measures ANOVA with folds as
//! subjects, and the Student t / F distribution functions behind them.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BETA_TOL: f64 = 1e-12;
const BETA_MAX_ITER: usize = 300;
const TINY: f64 = 1e-300;

/// Natural log of the gamma function (Lanczos, g = 7, 9 terms), `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=BETA_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < BETA_TOL {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

fn check_df(df: f64, name: &str) -> Result<()> {
    if df.is_finite() && df >= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be >= 1, got {df}")))
    }
}

/// Student t cumulative distribution.
pub fn t_cdf(x: f64, df: f64) -> Result<f64> {
    check_df(df, "df")?;
    if x.is_nan() {
        return Err(Error::invalid("t_cdf of NaN"));
    }
    if x == 0.0 {
        return Ok(0.5);
    }
    if x.is_infinite() {
        return Ok(if x > 0.0 { 1.0 } else { 0.0 });
    }
    let tail = 0.5 * incomplete_beta(0.5 * df, 0.5, df / (df + x * x));
    Ok(if x > 0.0 { 1.0 - tail } else { tail })
}

/// Two-tailed p-value `P(|T| >= |t|)`.
pub fn t_two_tailed(t: f64, df: f64) -> Result<f64> {
    check_df(df, "df")?;
    if t.is_nan() {
        return Err(Error::invalid("t statistic is NaN"));
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    Ok(incomplete_beta(0.5 * df, 0.5, df / (df + t * t)).min(1.0))
}

/// F cumulative distribution.
pub fn f_cdf(x: f64, d1: f64, d2: f64) -> Result<f64> {
    check_df(d1, "d1")?;
    check_df(d2, "d2")?;
    if x.is_nan() {
        return Err(Error::invalid("f_cdf of NaN"));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    Ok(incomplete_beta(0.5 * d1, 0.5 * d2, d1 * x / (d1 * x + d2)))
}

/// Upper tail `1 - F_cdf(x)` evaluated without cancellation.
pub fn f_sf(x: f64, d1: f64, d2: f64) -> Result<f64> {
    check_df(d1, "d1")?;
    check_df(d2, "d2")?;
    if x.is_nan() {
        return Err(Error::invalid("f_sf of NaN"));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(incomplete_beta(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * x)))
}

/// Product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::invalid("pearson needs at least 3 points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::data("zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub r: f64,
    pub n: usize,
    pub df: usize,
    /// `±inf` when `|r| = 1`
    pub t_stat: f64,
    pub p_two_tailed: f64,
}

/// t-test of `H0: rho = 0` with `n - 2` degrees of freedom.
pub fn corr_significance(r: f64, n: usize) -> Result<CorrelationResult> {
    if n < 4 {
        return Err(Error::invalid(format!("need n >= 4, got {n}")));
    }
    if !(-1.0..=1.0).contains(&r) {
        return Err(Error::invalid(format!("correlation {r} outside [-1, 1]")));
    }
    let df = n - 2;
    let (t_stat, p) = if r.abs() == 1.0 {
        (r.signum() * f64::INFINITY, 0.0)
    } else {
        let t = r * (df as f64 / (1.0 - r * r)).sqrt();
        (t, t_two_tailed(t, df as f64)?)
    };
    Ok(CorrelationResult {
        r,
        n,
        df,
        t_stat,
        p_two_tailed: p,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    /// differences had zero variance; `t`/`p` follow the fixed convention
    pub degenerate: bool,
}

/// Paired two-tailed t-test on `a - b`.
///
/// Zero-variance differences are flagged: all-zero gives `t = 0, p = 1`, a
/// constant nonzero shift gives `t = ±inf, p = 0`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid("paired t-test needs at least 2 pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var == 0.0 {
        let (t, p) = if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        };
        return Ok(TTestResult {
            t,
            p,
            df,
            degenerate: true,
        });
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    Ok(TTestResult {
        t,
        p: t_two_tailed(t, df as f64)?,
        df,
        degenerate: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub effect_name: String,
    #[serde(rename = "F")]
    pub f: f64,
    pub df_num: usize,
    pub df_den: usize,
    pub p: f64,
}

/// Sums of squares of the fully within-subject two-factor design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnovaSums {
    pub total: f64,
    pub subjects: f64,
    pub method: f64,
    pub algorithm: f64,
    pub interaction: f64,
    pub method_x_subject: f64,
    pub algorithm_x_subject: f64,
    pub residual: f64,
}

impl AnovaSums {
    pub fn component_sum(&self) -> f64 {
        self.subjects
            + self.method
            + self.algorithm
            + self.interaction
            + self.method_x_subject
            + self.algorithm_x_subject
            + self.residual
    }
}

fn check_design(data: &[Vec<Vec<f64>>]) -> Result<(usize, usize, usize)> {
    let s = data.len();
    if s < 2 {
        return Err(Error::invalid("repeated-measures ANOVA needs at least 2 subjects"));
    }
    let a = data[0].len();
    let b = data[0].first().map_or(0, Vec::len);
    if a < 2 || b < 2 {
        return Err(Error::invalid("each factor needs at least 2 levels"));
    }
    for (k, subj) in data.iter().enumerate() {
        if subj.len() != a || subj.iter().any(|row| row.len() != b) {
            return Err(Error::invalid(format!("subject {k}: unbalanced design")));
        }
        if subj.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("subject {k}: missing cell")));
        }
    }
    Ok((s, a, b))
}

/// Deviation-form decomposition over `data[subject][method][algorithm]`.
pub fn anova_sums(data: &[Vec<Vec<f64>>]) -> Result<AnovaSums> {
    let (s, a, b) = check_design(data)?;
    let n = (s * a * b) as f64;
    let grand = data.iter().flatten().flatten().sum::<f64>() / n;
    let m_s: Vec<f64> = data
        .iter()
        .map(|x| x.iter().flatten().sum::<f64>() / (a * b) as f64)
        .collect();
    let m_a: Vec<f64> = (0..a)
        .map(|i| data.iter().map(|x| x[i].iter().sum::<f64>()).sum::<f64>() / (s * b) as f64)
        .collect();
    let m_b: Vec<f64> = (0..b)
        .map(|j| data.iter().map(|x| (0..a).map(|i| x[i][j]).sum::<f64>()).sum::<f64>() / (s * a) as f64)
        .collect();
    let m_ab = |i: usize, j: usize| data.iter().map(|x| x[i][j]).sum::<f64>() / s as f64;
    let m_as = |k: usize, i: usize| data[k][i].iter().sum::<f64>() / b as f64;
    let m_bs = |k: usize, j: usize| (0..a).map(|i| data[k][i][j]).sum::<f64>() / a as f64;

    let sq = |v: f64| v * v;
    let mut out = AnovaSums {
        total: 0.0,
        subjects: (a * b) as f64 * m_s.iter().map(|m| sq(m - grand)).sum::<f64>(),
        method: (s * b) as f64 * m_a.iter().map(|m| sq(m - grand)).sum::<f64>(),
        algorithm: (s * a) as f64 * m_b.iter().map(|m| sq(m - grand)).sum::<f64>(),
        interaction: 0.0,
        method_x_subject: 0.0,
        algorithm_x_subject: 0.0,
        residual: 0.0,
    };
    for i in 0..a {
        for j in 0..b {
            out.interaction += s as f64 * sq(m_ab(i, j) - m_a[i] - m_b[j] + grand);
        }
    }
    for k in 0..s {
        for i in 0..a {
            out.method_x_subject += b as f64 * sq(m_as(k, i) - m_a[i] - m_s[k] + grand);
        }
        for j in 0..b {
            out.algorithm_x_subject += a as f64 * sq(m_bs(k, j) - m_b[j] - m_s[k] + grand);
        }
        for i in 0..a {
            for j in 0..b {
                let y = data[k][i][j];
                out.total += sq(y - grand);
                out.residual += sq(y - m_ab(i, j) - m_as(k, i) - m_bs(k, j)
                    + m_a[i]
                    + m_b[j]
                    + m_s[k]
                    - grand);
            }
        }
    }
    Ok(out)
}

fn f_test(name: &str, ss: f64, df_num: usize, ss_err: f64, df_den: usize, scale: f64) -> Result<AnovaResult> {
    // effects indistinguishable from zero relative to total variation
    let negligible = |v: f64| v <= 1e-12 * scale;
    let (f, p) = if negligible(ss) {
        (0.0, 1.0)
    } else if negligible(ss_err) {
        (f64::INFINITY, 0.0)
    } else {
        let f = (ss / df_num as f64) / (ss_err / df_den as f64);
        (f, f_sf(f, df_num as f64, df_den as f64)?)
    };
    Ok(AnovaResult {
        effect_name: name.to_string(),
        f,
        df_num,
        df_den,
        p,
    })
}

/// Two-way repeated-measures ANOVA, `data[fold][method][algorithm]`, each
/// effect tested against its own effect-by-subject error term. No sphericity
/// correction. Returns method, algorithm, and interaction effects in that
/// order.
pub fn rm_anova_2way(data: &[Vec<Vec<f64>>]) -> Result<Vec<AnovaResult>> {
    let (s, a, b) = check_design(data)?;
    let ss = anova_sums(data)?;
    let scale = ss.total.max(f64::MIN_POSITIVE);
    Ok(vec![
        f_test("method", ss.method, a - 1, ss.method_x_subject, (a - 1) * (s - 1), scale)?,
        f_test("algorithm", ss.algorithm, b - 1, ss.algorithm_x_subject, (b - 1) * (s - 1), scale)?,
        f_test(
            "method:algorithm",
            ss.interaction,
            (a - 1) * (b - 1),
            ss.residual,
            (a - 1) * (b - 1) * (s - 1),
            scale,
        )?,
    ])
}

/// One fold's correlation for one model tag; `r` is absent when undefined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub tag: String,
    pub r: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagSummary {
    pub tag: String,
    pub n: usize,
    pub missing: usize,
    pub mean: Option<f64>,
    /// sample (n - 1) standard deviation; 0 for a single value
    pub sd: Option<f64>,
    pub singleton: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "test", rename_all = "snake_case")]
pub enum TestRecord {
    PairedT {
        name: String,
        a: String,
        b: String,
        #[serde(flatten)]
        result: TTestResult,
    },
    Anova(AnovaResult),
    Correlation {
        name: String,
        #[serde(flatten)]
        result: CorrelationResult,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_fold: Vec<FoldResult>,
    pub summary: Vec<TagSummary>,
    pub tests: Vec<TestRecord>,
    pub notes: Vec<String>,
}

/// Mean and sample SD of `xs` (SD 0 for one value).
pub fn mean_sample_sd(xs: &[f64]) -> Option<(f64, f64)> {
    match xs.len() {
        0 => None,
        1 => Some((xs[0], 0.0)),
        n => {
            let m = xs.iter().sum::<f64>() / n as f64;
            let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
            Some((m, v.sqrt()))
        }
    }
}

/// Groups fold results by tag (lexicographic) into mean / sample-SD rows.
pub fn summarize(per_fold: &[FoldResult]) -> EvalReport {
    let mut groups: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    for f in per_fold {
        let g = groups.entry(f.tag.as_str()).or_default();
        match f.r {
            Some(r) => g.0.push(r),
            None => g.1 += 1,
        }
    }
    let summary = groups
        .into_iter()
        .map(|(tag, (vals, missing))| {
            let ms = mean_sample_sd(&vals);
            TagSummary {
                tag: tag.to_string(),
                n: vals.len(),
                missing,
                mean: ms.map(|x| x.0),
                sd: ms.map(|x| x.1),
                singleton: vals.len() == 1,
            }
        })
        .collect();
    EvalReport {
        per_fold: per_fold.to_vec(),
        summary,
        tests: Vec::new(),
        notes: Vec::new(),
    }
}

impl EvalReport {
    pub fn tag_values(&self, tag: &str) -> Vec<(usize, Option<f64>)> {
        self.per_fold
            .iter()
            .filter(|f| f.tag == tag)
            .map(|f| (f.fold, f.r))
            .collect()
    }

    pub fn summary_for(&self, tag: &str) -> Option<&TagSummary> {
        self.summary.iter().find(|s| s.tag == tag)
    }

    /// `fold,tag,r` rows; a missing r is written as an empty field.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fold,tag,r\n");
        for f in &self.per_fold {
            out.push_str(&format!(
                "{},{},{}\n",
                f.fold,
                f.tag,
                f.r.map(|r| r.to_string()).unwrap_or_default()
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_cdf_closed_forms() {
        assert_eq!(t_cdf(0.0, 7.0).unwrap(), 0.5);
        // Cauchy: 1/2 + atan(x)/pi
        for x in [-3.0, -0.5, 1.0, 2.5] {
            let want = 0.5 + f64::atan(x) / std::f64::consts::PI;
            assert!((t_cdf(x, 1.0).unwrap() - want).abs() < 1e-12);
        }
        // df = 2: 1/2 + x / (2 sqrt(2 + x^2))
        for x in [-2.0f64, 0.3, 4.0] {
            let want = 0.5 + x / (2.0 * (2.0 + x * x).sqrt());
            assert!((t_cdf(x, 2.0).unwrap() - want).abs() < 1e-12);
        }
        assert!(t_cdf(1.0, 0.0).is_err());
    }

    #[test]
    fn t_cdf_symmetry() {
        for df in [1.0, 3.0, 10.0, 110.0, 1000.0] {
            for x in [0.01, 0.7, 2.0, 5.5] {
                let s = t_cdf(x, df).unwrap() + t_cdf(-x, df).unwrap();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn f_cdf_equal_df_median() {
        for d in [1.0, 2.0, 5.0, 30.0, 400.0] {
            assert!((f_cdf(1.0, d, d).unwrap() - 0.5).abs() < 1e-10);
        }
        // d1 = 2: F_cdf = 1 - (1 + 2x/d2)^(-d2/2)
        let (x, d2) = (1.7f64, 9.0f64);
        let want = 1.0 - (1.0 + 2.0 * x / d2).powf(-d2 / 2.0);
        assert!((f_cdf(x, 2.0, d2).unwrap() - want).abs() < 1e-12);
        assert!((f_sf(x, 2.0, d2).unwrap() - (1.0 - want)).abs() < 1e-12);
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
        let err = pearson(&x, &[2.0; 4]).unwrap_err();
        assert!(err.to_string().contains("zero variance"));
        assert!(pearson(&x, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn correlation_significance() {
        let z = corr_significance(0.0, 10).unwrap();
        assert_eq!((z.t_stat, z.p_two_tailed), (0.0, 1.0));
        let one = corr_significance(1.0, 10).unwrap();
        assert_eq!(one.p_two_tailed, 0.0);
        assert!(one.t_stat.is_infinite());
        let r = corr_significance(0.5, 20).unwrap();
        assert!((r.t_stat - 0.5 * (18.0f64 / 0.75).sqrt()).abs() < 1e-12);
        assert_eq!(r.df, 18);
        assert!(corr_significance(0.5, 3).is_err());
    }

    #[test]
    fn significance_monotone_in_r() {
        let mut prev = 1.1;
        for k in 0..99 {
            let p = corr_significance(k as f64 / 100.0, 30).unwrap().p_two_tailed;
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn paired_ttest_examples() {
        let t = paired_ttest(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap();
        assert!((t.t - 2.0 / (1.0 / 3f64.sqrt())).abs() < 1e-12);
        assert!((t.t - 3.4641).abs() < 1e-4);
        assert!(!t.degenerate);
        let same = paired_ttest(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((same.t, same.p, same.degenerate), (0.0, 1.0, true));
        let shift = paired_ttest(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(shift.degenerate && shift.p == 0.0);
        let a = [0.3, 0.1, 0.5, 0.2];
        let b = [0.2, 0.25, 0.3, 0.1];
        let ab = paired_ttest(&a, &b).unwrap();
        let ba = paired_ttest(&b, &a).unwrap();
        assert_eq!(ab.t, -ba.t);
        assert_eq!(ab.p, ba.p);
    }

    #[test]
    fn anova_identical_methods() {
        let mut rng = crate::rng::seeded(9);
        use rand::Rng;
        let data: Vec<Vec<Vec<f64>>> = (0..5)
            .map(|_| {
                let row: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
                vec![row.clone(), row]
            })
            .collect();
        let res = rm_anova_2way(&data).unwrap();
        assert_eq!(res[0].effect_name, "method");
        assert!(res[0].f.abs() < 1e-9);
        assert_eq!(res[0].p, 1.0);
        assert_eq!((res[0].df_num, res[0].df_den), (1, 4));
        assert_eq!((res[1].df_num, res[1].df_den), (2, 8));
        assert_eq!((res[2].df_num, res[2].df_den), (2, 8));
    }

    #[test]
    fn anova_design_errors() {
        assert!(rm_anova_2way(&[vec![vec![1.0, 2.0], vec![1.0, 2.0]]]).is_err());
        let ragged = vec![vec![vec![1.0, 2.0], vec![1.0]], vec![vec![1.0, 2.0], vec![1.0, 2.0]]];
        assert!(rm_anova_2way(&ragged).is_err());
        let missing = vec![vec![vec![1.0, f64::NAN], vec![1.0, 3.0]], vec![vec![1.0, 2.0], vec![1.0, 2.0]]];
        assert!(rm_anova_2way(&missing).is_err());
    }

    #[test]
    fn summarize_examples() {
        let rep = summarize(&[
            FoldResult { fold: 0, tag: "b".into(), r: Some(0.2) },
            FoldResult { fold: 1, tag: "b".into(), r: Some(0.4) },
            FoldResult { fold: 0, tag: "a".into(), r: Some(0.7) },
            FoldResult { fold: 1, tag: "a".into(), r: None },
        ]);
        assert_eq!(rep.summary[0].tag, "a");
        assert!(rep.summary[0].singleton && rep.summary[0].sd == Some(0.0));
        assert_eq!(rep.summary[0].missing, 1);
        let b = &rep.summary[1];
        assert!((b.mean.unwrap() - 0.3).abs() < 1e-15);
        assert!((b.sd.unwrap() - 0.02f64.sqrt()).abs() < 1e-12);
        assert!(rep.to_csv().contains("1,a,\n"));
    }
}
