//! Formula-driven regression: parsing, design matrices, random-intercept
//! ML fits, cross-validation, BIC ranking and collinearity checks.

mod cv;
mod design;
mod formula;
mod lmm;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

pub use cv::{cross_validate, r2_about_mean, stratified_folds, CvReport, R2_DEFINITION};
pub use design::{build_design, build_design_rows, complete_rows, Design, Grouping, Scaling, Standardize, INTERCEPT};
pub use formula::{parse_formula, FormulaError, ModelSpec, Term};
pub use lmm::{fit_lmm, predict, FitResult, LAMBDA_MAX};

use crate::stats::STAR_LEVEL;
use crate::table::MetricsTable;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("column {0:?} is not numeric")]
    NonNumeric(String),
    #[error("no complete rows left for the model")]
    EmptyDesign,
    #[error("rank-deficient design")]
    RankDeficient,
    #[error("residual variance is zero")]
    PerfectFit,
    #[error("{n} rows is too few for {p} coefficients")]
    TooFewRows { n: usize, p: usize },
    #[error("design, response and names disagree in shape")]
    Shape,
    #[error("group {0:?} was not seen in training")]
    UnseenGroup(String),
    #[error("stratification impossible: {0}")]
    Stratification(String),
    #[error("collinear predictors (infinite VIF): {0:?}")]
    Collinear(Vec<String>),
}

/// Tolerance on 1 - R^2 below which a column counts as perfectly collinear.
const COLLINEAR_TOL: f64 = 1e-10;

/// Variance inflation factor per column of `x` (no intercept column):
/// 1 / (1 - R^2) from regressing the column on the others plus an intercept.
/// Constant or perfectly explained columns give +inf.
pub fn vif(x: &DMatrix<f64>) -> Result<Vec<f64>, ModelError> {
    let (n, p) = x.shape();
    if n <= p + 1 {
        return Err(ModelError::TooFewRows { n, p: p + 1 });
    }
    let mut out = Vec::with_capacity(p);
    for j in 0..p {
        let y = x.column(j).into_owned();
        let mean = y.mean();
        let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        if ss_tot == 0.0 {
            out.push(f64::INFINITY);
            continue;
        }
        let mut others = DMatrix::from_element(n, p, 1.0);
        let mut c = 1;
        for k in (0..p).filter(|&k| k != j) {
            others.set_column(c, &x.column(k));
            c += 1;
        }
        let svd = others.clone().svd(true, true);
        let coef = svd.solve(&y, 1e-12).expect("svd computed with u and v");
        let resid: DVector<f64> = &y - &others * coef;
        let r2 = (1.0 - resid.norm_squared() / ss_tot).clamp(0.0, 1.0);
        let tol = 1.0 - r2;
        out.push(if tol <= COLLINEAR_TOL { f64::INFINITY } else { 1.0 / tol });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedModel {
    pub formula: String,
    pub bic: f64,
    pub loglik: f64,
    pub n_params: usize,
    pub n: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelComparison {
    /// Ascending BIC; ties keep input order.
    pub ranked: Vec<RankedModel>,
    /// Specs that failed to fit, with the reason.
    pub failed: Vec<(String, String)>,
    pub n_rows: usize,
}

/// Fits every spec by ML on the rows complete for all of them (standardised
/// predictors) and ranks them by BIC.
pub fn compare_models(specs: &[ModelSpec], table: &MetricsTable) -> Result<ModelComparison, ModelError> {
    let mut rows: Vec<usize> = (0..table.len()).collect();
    for s in specs {
        rows = complete_rows(s, table, Some(&rows))?;
    }
    let mut ranked = Vec::new();
    let mut failed = Vec::new();
    for s in specs {
        let fit = build_design_rows(s, table, Some(&rows), Standardize::Fit)
            .and_then(|d| fit_lmm(&d.x, d.groups.as_ref(), &d.y, &d.column_names));
        match fit {
            Ok(f) => ranked.push(RankedModel {
                formula: s.to_string(),
                bic: f.bic,
                loglik: f.loglik,
                n_params: f.n_params,
                n: f.n,
                converged: f.converged,
            }),
            Err(e) => {
                log::warn!("model {s} excluded from ranking: {e}");
                failed.push((s.to_string(), e.to_string()));
            }
        }
    }
    ranked.sort_by(|a, b| a.bic.total_cmp(&b.bic));
    Ok(ModelComparison {
        ranked,
        failed,
        n_rows: rows.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Coefficient {
    pub term: String,
    pub beta: f64,
    pub std_error: f64,
    pub p: f64,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResponseFit {
    pub response: String,
    pub formula: String,
    pub coefficients: Vec<Coefficient>,
    pub tau2: f64,
    pub sigma2: f64,
    pub bic: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CombinedReport {
    pub predictors: Vec<String>,
    pub random_intercept: Option<String>,
    pub n: usize,
    pub fits: Vec<ResponseFit>,
    /// (term, VIF) on the standardised combined design.
    pub vif: Vec<(String, f64)>,
    pub significance_level: f64,
}

/// Fits each response on the same standardised predictor set and row set,
/// optionally with a random intercept, and reports coefficients and VIFs.
pub fn combined_model_report(
    predictors: &[String],
    responses: &[String],
    random_intercept: Option<&str>,
    table: &MetricsTable,
) -> Result<CombinedReport, ModelError> {
    let random = random_intercept.map(|g| format!(" + (1|{g})")).unwrap_or_default();
    let rhs = if predictors.is_empty() { "1".to_string() } else { predictors.join(" + ") };
    let specs = responses
        .iter()
        .map(|r| parse_formula(&format!("{r} ~ {rhs}{random}")))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows: Vec<usize> = (0..table.len()).collect();
    for s in &specs {
        rows = complete_rows(s, table, Some(&rows))?;
    }
    let mut fits = Vec::new();
    let mut vifs = Vec::new();
    let mut n = 0;
    for (i, s) in specs.iter().enumerate() {
        let d = build_design_rows(s, table, Some(&rows), Standardize::Fit)?;
        if i == 0 {
            let v = if d.x.ncols() > 1 { vif(&d.x_without_intercept())? } else { Vec::new() };
            let bad: Vec<String> = d.column_names[1..]
                .iter()
                .zip(&v)
                .filter(|(_, v)| !v.is_finite())
                .map(|(n, _)| n.clone())
                .collect();
            if !bad.is_empty() {
                return Err(ModelError::Collinear(bad));
            }
            vifs = d.column_names[1..].iter().cloned().zip(v).collect();
            n = d.n();
        }
        let f = fit_lmm(&d.x, d.groups.as_ref(), &d.y, &d.column_names)?;
        fits.push(ResponseFit {
            response: s.response.clone(),
            formula: s.to_string(),
            coefficients: (0..f.betas.len())
                .map(|j| Coefficient {
                    term: f.term_names[j].clone(),
                    beta: f.betas[j],
                    std_error: f.std_errors[j],
                    p: f.coef_p[j],
                    significant: f.coef_p[j] < STAR_LEVEL,
                })
                .collect(),
            tau2: f.tau2,
            sigma2: f.sigma2,
            bic: f.bic,
        });
    }
    Ok(CombinedReport {
        predictors: predictors.to_vec(),
        random_intercept: random_intercept.map(str::to_string),
        n,
        fits,
        vif: vifs,
        significance_level: STAR_LEVEL,
    })
}
