//! Score normalisation, inter-rater agreement and rank-based group tests.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

/// Significance level behind the stars in reports.
pub const STAR_LEVEL: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("zero range")]
    ZeroRange,
    #[error("empty input")]
    Empty,
    #[error("undefined correlation: constant input")]
    UndefinedCorrelation,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} {what}, got {got}")]
    TooFew {
        what: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("ragged ratings matrix: row {row} has {got} columns, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
    #[error("rating {value} at ({row},{col}) outside declared scale [{lo}, {hi}]")]
    OutOfScale {
        row: usize,
        col: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
}

/// Scales to [0, 1] via (x - min) / (max - min).
pub fn min_max_normalize(xs: &[f64]) -> Result<Vec<f64>, StatsError> {
    if xs.is_empty() {
        return Err(StatsError::Empty);
    }
    check_finite(xs)?;
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Err(StatsError::ZeroRange);
    }
    let span = hi - lo;
    Ok(xs.iter().map(|&x| (x - lo) / span).collect())
}

fn check_finite(xs: &[f64]) -> Result<(), StatsError> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(StatsError::NonFinite(i)),
        None => Ok(()),
    }
}

/// Subjects x raters score table with a declared scale.
#[derive(Clone, Debug)]
pub struct RatingsMatrix {
    rows: Vec<Vec<f64>>,
    raters: usize,
}

impl RatingsMatrix {
    pub fn new(rows: Vec<Vec<f64>>, scale: (f64, f64)) -> Result<Self, StatsError> {
        let raters = rows.first().map_or(0, Vec::len);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != raters {
                return Err(StatsError::Ragged {
                    row: r,
                    got: row.len(),
                    expected: raters,
                });
            }
            for (c, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < scale.0 || v > scale.1 {
                    return Err(StatsError::OutOfScale {
                        row: r,
                        col: c,
                        value: v,
                        lo: scale.0,
                        hi: scale.1,
                    });
                }
            }
        }
        Ok(Self { rows, raters })
    }

    /// Builds from rater columns of equal length.
    pub fn from_columns(columns: &[&[f64]], scale: (f64, f64)) -> Result<Self, StatsError> {
        let n = columns.first().map_or(0, |c| c.len());
        if let Some(c) = columns.iter().find(|c| c.len() != n) {
            return Err(StatsError::LengthMismatch(n, c.len()));
        }
        let rows = (0..n).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
        Self::new(rows, scale)
    }

    pub fn subjects(&self) -> usize {
        self.rows.len()
    }

    pub fn raters(&self) -> usize {
        self.raters
    }
}

/// Two-way mixed, consistency, average-measures ICC: (MSR - MSE) / MSR.
///
/// With no between-subject variance the ratio is undefined; the result is
/// then 0 when the residual is also 0 and negative infinity otherwise.
pub fn icc_average_fixed(m: &RatingsMatrix) -> Result<f64, StatsError> {
    let (n, k) = (m.subjects(), m.raters());
    if k < 2 {
        return Err(StatsError::TooFew {
            what: "raters",
            needed: 2,
            got: k,
        });
    }
    if n < 3 {
        return Err(StatsError::TooFew {
            what: "subjects",
            needed: 3,
            got: n,
        });
    }
    let total = (n * k) as f64;
    let grand = m.rows.iter().flatten().sum::<f64>() / total;
    let row_means: Vec<f64> = m.rows.iter().map(|r| r.iter().sum::<f64>() / k as f64).collect();
    let col_means: Vec<f64> = (0..k)
        .map(|j| m.rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let ss_rows = k as f64 * row_means.iter().map(|&r| (r - grand).powi(2)).sum::<f64>();
    // residual computed directly rather than as SST - SSR - SSC
    let mut ss_err = 0.0;
    for (i, row) in m.rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            ss_err += (v - row_means[i] - col_means[j] + grand).powi(2);
        }
    }
    let ms_rows = ss_rows / (n - 1) as f64;
    let ms_err = ss_err / ((n - 1) * (k - 1)) as f64;
    if ms_rows == 0.0 {
        return Ok(if ms_err == 0.0 { 0.0 } else { f64::NEG_INFINITY });
    }
    Ok((ms_rows - ms_err) / ms_rows)
}

/// Mid-ranks (1-based, ties averaged).
pub fn rank_average(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        let mid = (i + j + 1) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = mid;
        }
        i = j;
    }
    ranks
}

/// Sizes of tied runs among the values.
fn tie_groups(xs: &[f64]) -> Vec<usize> {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        if j - i > 1 {
            out.push(j - i);
        }
        i = j;
    }
    out
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(StatsError::Empty);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::UndefinedCorrelation);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Correlation {
    pub rho: f64,
    pub p: f64,
    pub n: usize,
}

/// Spearman's rho with a two-sided p from the t approximation on n - 2 df.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFew {
            what: "observations",
            needed: 3,
            got: x.len(),
        });
    }
    check_finite(x)?;
    check_finite(y)?;
    let rho = pearson(&rank_average(x), &rank_average(y))?;
    let n = x.len();
    let df = (n - 2) as f64;
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(Correlation { rho, p, n })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KwResult {
    pub h: f64,
    pub df: usize,
    pub p: f64,
    pub group_ns: Vec<usize>,
}

/// Kruskal-Wallis H with tie correction; p from chi-square on g - 1 df.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<KwResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFew {
            what: "groups",
            needed: 2,
            got: groups.len(),
        });
    }
    if let Some(g) = groups.iter().find(|g| g.is_empty()) {
        return Err(StatsError::TooFew {
            what: "values per group",
            needed: 1,
            got: g.len(),
        });
    }
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    check_finite(&pooled)?;
    let n = pooled.len();
    if n < 5 {
        return Err(StatsError::TooFew {
            what: "observations",
            needed: 5,
            got: n,
        });
    }
    let group_ns: Vec<usize> = groups.iter().map(Vec::len).collect();
    let df = groups.len() - 1;
    let nf = n as f64;
    let tie_term: f64 = tie_groups(&pooled)
        .iter()
        .map(|&t| (t as f64).powi(3) - t as f64)
        .sum();
    let correction = 1.0 - tie_term / (nf.powi(3) - nf);
    if correction <= 0.0 {
        return Ok(KwResult {
            h: 0.0,
            df,
            p: 1.0,
            group_ns,
        });
    }
    let ranks = rank_average(&pooled);
    let mut offset = 0;
    let mut sum_term = 0.0;
    for &len in &group_ns {
        let r: f64 = ranks[offset..offset + len].iter().sum();
        sum_term += r * r / len as f64;
        offset += len;
    }
    let h = ((12.0 / (nf * (nf + 1.0)) * sum_term - 3.0 * (nf + 1.0)) / correction).max(0.0);
    let p = ChiSquared::new(df as f64).expect("df >= 1").sf(h).clamp(0.0, 1.0);
    Ok(KwResult { h, df, p, group_ns })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub p: f64,
}

/// Two-sided Mann-Whitney U via the tie-corrected normal approximation
/// with continuity correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Empty);
    }
    check_finite(a)?;
    check_finite(b)?;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = rank_average(&pooled);
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let r1: f64 = ranks[..a.len()].iter().sum();
    let u = r1 - n1 * (n1 + 1.0) / 2.0;
    let n = n1 + n2;
    let tie_term: f64 = tie_groups(&pooled)
        .iter()
        .map(|&t| (t as f64).powi(3) - t as f64)
        .sum();
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return Ok(MannWhitney { u, p: 1.0 });
    }
    let z = ((u - n1 * n2 / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::standard();
    let p = (2.0 * normal.sf(z)).min(1.0);
    Ok(MannWhitney { u, p })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    pub u: f64,
    pub p: f64,
    pub p_adjusted: f64,
    pub significant: bool,
}

/// Mann-Whitney U for every pair of groups, Bonferroni-adjusted over the
/// number of pairs. `significant` marks adjusted p below [`STAR_LEVEL`].
pub fn pairwise_group_tests(groups: &[(String, Vec<f64>)]) -> Result<Vec<PairwiseTest>, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFew {
            what: "groups",
            needed: 2,
            got: groups.len(),
        });
    }
    let pairs = groups.len() * (groups.len() - 1) / 2;
    let mut out = Vec::with_capacity(pairs);
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let mw = mann_whitney_u(&groups[i].1, &groups[j].1)?;
            let p_adjusted = (mw.p * pairs as f64).min(1.0);
            out.push(PairwiseTest {
                a: groups[i].0.clone(),
                b: groups[j].0.clone(),
                u: mw.u,
                p: mw.p,
                p_adjusted,
                significant: p_adjusted < STAR_LEVEL,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupSummary {
    pub group: String,
    pub n: usize,
    pub n_missing: usize,
    pub mean: f64,
    /// Sample standard deviation; `None` with fewer than two values.
    pub sd: Option<f64>,
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

/// Mean and sample sd of `values` per group label, in first-appearance
/// order of the labels. Missing values are skipped and counted; groups with
/// no observed values are omitted with a warning.
pub fn group_summary(values: &[Option<f64>], groups: &[&str]) -> Result<Vec<GroupSummary>, StatsError> {
    if values.len() != groups.len() {
        return Err(StatsError::LengthMismatch(values.len(), groups.len()));
    }
    let mut order: Vec<&str> = Vec::new();
    for &g in groups {
        if !order.contains(&g) {
            order.push(g);
        }
    }
    let mut out = Vec::new();
    for label in order {
        let mut observed = Vec::new();
        let mut missing = 0;
        for (v, &g) in values.iter().zip(groups) {
            if g != label {
                continue;
            }
            match v {
                Some(x) if x.is_finite() => observed.push(*x),
                _ => missing += 1,
            }
        }
        match mean(&observed) {
            Some(m) => out.push(GroupSummary {
                group: label.to_string(),
                n: observed.len(),
                n_missing: missing,
                mean: m,
                sd: sample_sd(&observed),
            }),
            None => log::warn!("group {label} has no observed values; omitted"),
        }
    }
    Ok(out)
}

/// Linear-interpolated quantile of sorted data (type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}
