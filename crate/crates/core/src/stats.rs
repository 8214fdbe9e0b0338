//! One-sided Welch tests between sets of correlation curves, bin by bin,
//! with Bonferroni-corrected significance.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corr::CorrelationCurve;

/// Default family-wise significance level before Bonferroni division.
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("sample sizes {n_a} and {n_b}: each sample needs at least 2 values")]
    Undersized { n_a: usize, n_b: usize },
    #[error("non-finite sample value")]
    NonFinite,
    #[error("curve set `{0}` is empty")]
    EmptySet(String),
    #[error("scope of {scope} bins is outside 1..={max}")]
    Scope { scope: usize, max: usize },
    #[error("base alpha {0} is outside (0, 1)")]
    Alpha(f64),
}

/// Direction of the one-sided alternative hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// Mean of A exceeds mean of B.
    #[default]
    AGreater,
    BGreater,
}

impl std::str::FromStr for Alternative {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "a_greater" | "a-greater" | "greater" => Ok(Self::AGreater),
            "b_greater" | "b-greater" | "less" => Ok(Self::BGreater),
            other => Err(format!("unknown alternative `{other}` (a_greater | b_greater)")),
        }
    }
}

/// Regularized incomplete beta function `I_x(a, b)`.
///
/// Continued fraction (modified Lentz), evaluated on whichever side of the
/// mean converges fastest.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b)
        + a * libm::log(x)
        + b * libm::log1p(-x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
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
    for m in 1..10_000 {
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
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// `P(T > t)` for Student's t with `df` degrees of freedom.
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    if t.is_nan() || df.is_nan() {
        return f64::NAN;
    }
    if t == f64::INFINITY {
        return 0.0;
    }
    if t == f64::NEG_INFINITY {
        return 1.0;
    }
    let tail = 0.5 * incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// `P(T <= t)` for Student's t with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    student_t_sf(-t, df)
}

/// Mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() < 2 {
        f64::NAN
    } else {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    };
    (mean, var)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom; NaN when both variances vanish.
    pub df: f64,
    /// One-sided p-value in the direction of the alternative.
    pub p: f64,
}

/// One-sided Welch test of `a` against `b`.
///
/// When both samples have zero variance the statistic is degenerate: equal
/// means give `t = 0, p = 0.5`, different means give `t = +-inf` and `p` of
/// 0 or 1 depending on the direction of the alternative.
pub fn welch_bin(a: &[f64], b: &[f64], alternative: Alternative) -> Result<WelchResult, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::Undersized {
            n_a: a.len(),
            n_b: b.len(),
        });
    }
    if !a.iter().chain(b).all(|v| v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let (mean_a, var_a) = mean_var(a);
    let (mean_b, var_b) = mean_var(b);
    let se_a = var_a / a.len() as f64;
    let se_b = var_b / b.len() as f64;
    let diff = mean_a - mean_b;
    let (t, df) = if se_a + se_b == 0.0 {
        let t = if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        };
        (t, f64::NAN)
    } else {
        let t = diff / (se_a + se_b).sqrt();
        let df = (se_a + se_b).powi(2)
            / (se_a * se_a / (a.len() - 1) as f64 + se_b * se_b / (b.len() - 1) as f64);
        (t, df)
    };
    let oriented = match alternative {
        Alternative::AGreater => t,
        Alternative::BGreater => -t,
    };
    let p = if oriented == 0.0 {
        0.5
    } else if oriented.is_infinite() {
        if oriented > 0.0 {
            0.0
        } else {
            1.0
        }
    } else {
        student_t_sf(oriented, df)
    };
    Ok(WelchResult { t, df, p })
}

/// Correlation curves of one image set, one per image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSet {
    pub label: String,
    pub curves: Vec<CorrelationCurve>,
}

impl CurveSet {
    pub fn new(label: impl Into<String>, curves: Vec<CorrelationCurve>) -> Self {
        Self {
            label: label.into(),
            curves,
        }
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    /// Bin means across images, skipping images whose bin is empty.
    pub fn samples(&self, bin: usize) -> Vec<f64> {
        self.curves.iter().filter_map(|c| c.mean(bin)).collect()
    }

    /// Per-bin average over images (`None` where no image has data).
    pub fn mean_curve(&self, bins: usize) -> Vec<Option<f64>> {
        (0..bins)
            .map(|k| {
                let s = self.samples(k);
                (!s.is_empty()).then(|| s.iter().sum::<f64>() / s.len() as f64)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareOptions {
    pub alternative: Alternative,
    /// Significance level before division by the number of bins.
    pub alpha_base: f64,
    /// Bins `0..scope_bins` are tested.
    pub scope_bins: usize,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            alternative: Alternative::AGreater,
            alpha_base: DEFAULT_ALPHA,
            scope_bins: 300,
        }
    }
}

impl CompareOptions {
    pub fn alpha_corrected(&self) -> f64 {
        self.alpha_base / self.scope_bins as f64
    }
}

/// Welch statistics for one distance bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub bin: usize,
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub var_a: f64,
    pub var_b: f64,
    /// `None` when either set has fewer than two samples in this bin.
    pub test: Option<WelchResult>,
    pub significant: bool,
}

impl BinStat {
    pub fn is_tested(&self) -> bool {
        self.test.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinComparison {
    pub label_a: String,
    pub label_b: String,
    pub options: CompareOptions,
    pub alpha_corrected: f64,
    pub bins: Vec<BinStat>,
}

/// Tests bins `0..scope_bins` of two curve sets.
pub fn compare_sets(
    a: &CurveSet,
    b: &CurveSet,
    options: CompareOptions,
) -> Result<BinComparison, StatsError> {
    for set in [a, b] {
        if set.is_empty() {
            return Err(StatsError::EmptySet(set.label.clone()));
        }
    }
    let max = a
        .curves
        .iter()
        .chain(&b.curves)
        .map(|c| c.len())
        .min()
        .unwrap_or(0);
    if options.scope_bins == 0 || options.scope_bins > max {
        return Err(StatsError::Scope {
            scope: options.scope_bins,
            max,
        });
    }
    if !(options.alpha_base > 0.0 && options.alpha_base < 1.0) {
        return Err(StatsError::Alpha(options.alpha_base));
    }
    let alpha_corrected = options.alpha_corrected();
    let bins = (0..options.scope_bins)
        .map(|bin| {
            let sa = a.samples(bin);
            let sb = b.samples(bin);
            let (mean_a, var_a) = summary(&sa);
            let (mean_b, var_b) = summary(&sb);
            let test = welch_bin(&sa, &sb, options.alternative).ok();
            BinStat {
                bin,
                n_a: sa.len(),
                n_b: sb.len(),
                mean_a,
                mean_b,
                var_a,
                var_b,
                test,
                significant: test.is_some_and(|r| r.p < alpha_corrected),
            }
        })
        .collect();
    Ok(BinComparison {
        label_a: a.label.clone(),
        label_b: b.label.clone(),
        options,
        alpha_corrected,
        bins,
    })
}

fn summary(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        mean_var(xs)
    }
}

/// Distance up to which the sets differ: walking bins in order and skipping
/// untested ones, the end (exclusive) of the leading run of significant bins.
/// 0 when the first tested bin is not significant.
pub fn contiguous_significance_prefix(cmp: &BinComparison) -> usize {
    let mut end = 0;
    for stat in cmp.bins.iter().filter(|s| s.is_tested()) {
        if !stat.significant {
            break;
        }
        end = stat.bin + 1;
    }
    // A run reaching the last tested bin covers the whole scope.
    if end > 0 && cmp.bins.iter().skip(end).all(|s| !s.is_tested()) {
        end = cmp.bins.len();
    }
    end
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub label_a: String,
    pub label_b: String,
    pub alternative: Alternative,
    pub alpha_base: f64,
    pub scope_bins: usize,
    pub alpha_corrected: f64,
    pub tested_bins: usize,
    pub significant_bins: usize,
    pub significance_prefix: usize,
}

impl BinComparison {
    pub fn significant_bins(&self) -> usize {
        self.bins.iter().filter(|b| b.significant).count()
    }

    pub fn summary(&self) -> ComparisonSummary {
        ComparisonSummary {
            label_a: self.label_a.clone(),
            label_b: self.label_b.clone(),
            alternative: self.options.alternative,
            alpha_base: self.options.alpha_base,
            scope_bins: self.options.scope_bins,
            alpha_corrected: self.alpha_corrected,
            tested_bins: self.bins.iter().filter(|b| b.is_tested()).count(),
            significant_bins: self.significant_bins(),
            significance_prefix: contiguous_significance_prefix(self),
        }
    }

    /// CSV with columns `bin,nA,nB,meanA,meanB,t,df,p,significant`. Untested
    /// bins leave `t`, `df` and `p` blank.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let fmt = |v: f64| if v.is_nan() { String::new() } else { v.to_string() };
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["bin", "nA", "nB", "meanA", "meanB", "t", "df", "p", "significant"])?;
        for b in &self.bins {
            let (t, df, p) = match b.test {
                Some(r) => (fmt(r.t), fmt(r.df), fmt(r.p)),
                None => Default::default(),
            };
            wtr.write_record([
                b.bin.to_string(),
                b.n_a.to_string(),
                b.n_b.to_string(),
                fmt(b.mean_a),
                fmt(b.mean_b),
                t,
                df,
                p,
                b.significant.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}
