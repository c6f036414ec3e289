//! Stratified k-fold cross-validation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::design::{build_design_rows, complete_rows, Standardize};
use super::lmm::{fit_lmm, predict};
use super::{ModelError, ModelSpec};
use crate::stats::spearman;
use crate::table::MetricsTable;

pub const R2_DEFINITION: &str = "1 - SS_res / SS_tot, SS_tot about the test-fold mean";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CvReport {
    pub formula: String,
    pub folds: usize,
    pub seed: u64,
    /// Mean over folds where R^2 is defined.
    pub r2_test: Option<f64>,
    /// Mean Spearman correlation over folds where it is defined.
    pub cor_test: Option<f64>,
    pub fold_r2: Vec<Option<f64>>,
    pub fold_cor: Vec<Option<f64>>,
    /// (drawing_id, fold) for every row used.
    pub fold_assignments: Vec<(String, usize)>,
    pub r2_definition: &'static str,
}

/// Assigns each row to one of `k` folds so every stratum is spread as
/// evenly as possible. Strata are processed in sorted order; each is
/// shuffled and dealt round-robin starting where the previous one stopped.
pub fn stratified_folds(strata: &[String], k: usize, seed: u64) -> Result<Vec<usize>, ModelError> {
    if k < 2 {
        return Err(ModelError::Stratification(format!("need at least 2 folds, got {k}")));
    }
    let mut by: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in strata.iter().enumerate() {
        by.entry(s).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; strata.len()];
    let mut offset = 0;
    for (name, mut rows) in by {
        if rows.len() < k {
            return Err(ModelError::Stratification(format!(
                "stratum {name:?} has {} rows, fewer than {k} folds",
                rows.len()
            )));
        }
        rows.shuffle(&mut rng);
        for (pos, r) in rows.iter().enumerate() {
            folds[*r] = (pos + offset) % k;
        }
        offset = (offset + rows.len()) % k;
    }
    Ok(folds)
}

/// R^2 about the mean of `truth`; `None` when `truth` is constant.
pub fn r2_about_mean(pred: &[f64], truth: &[f64]) -> Option<f64> {
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (t - p).powi(2)).sum();
    (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot)
}

fn mean_defined(v: &[Option<f64>]) -> Option<f64> {
    let d: Vec<f64> = v.iter().flatten().copied().collect();
    (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
}

/// Fits on k-1 folds and predicts the held-out fold (with random
/// intercepts), for each fold. Predictors are standardised with the
/// training fold's mean and sd.
pub fn cross_validate(
    spec: &ModelSpec,
    table: &MetricsTable,
    k: usize,
    stratify_by: &str,
    seed: u64,
) -> Result<CvReport, ModelError> {
    let strata_col = table
        .text(stratify_by)
        .map_err(|_| ModelError::MissingColumn(stratify_by.to_string()))?;
    let candidates: Vec<usize> = (0..table.len()).filter(|&r| strata_col[r].is_some()).collect();
    let rows = complete_rows(spec, table, Some(&candidates))?;
    if rows.is_empty() {
        return Err(ModelError::EmptyDesign);
    }
    let strata: Vec<String> = rows.iter().map(|&r| strata_col[r].clone().expect("filtered")).collect();
    let folds = stratified_folds(&strata, k, seed)?;

    let mut fold_r2 = Vec::with_capacity(k);
    let mut fold_cor = Vec::with_capacity(k);
    for f in 0..k {
        let train: Vec<usize> = rows.iter().zip(&folds).filter(|(_, &g)| g != f).map(|(&r, _)| r).collect();
        let test: Vec<usize> = rows.iter().zip(&folds).filter(|(_, &g)| g == f).map(|(&r, _)| r).collect();
        let dtrain = build_design_rows(spec, table, Some(&train), Standardize::Fit)?;
        let fit = fit_lmm(&dtrain.x, dtrain.groups.as_ref(), &dtrain.y, &dtrain.column_names)?;
        let dtest = build_design_rows(spec, table, Some(&test), Standardize::Apply(&dtrain.scaling))?;
        let labels: Option<Vec<String>> = dtest
            .groups
            .as_ref()
            .map(|g| (0..dtest.n()).map(|i| g.label(i).to_string()).collect());
        let pred = predict(&fit, &dtest.x, labels.as_deref(), true)?;
        let truth: Vec<f64> = dtest.y.iter().copied().collect();
        fold_r2.push(r2_about_mean(&pred, &truth));
        fold_cor.push(spearman(&pred, &truth).ok().map(|c| c.rho));
    }
    Ok(CvReport {
        formula: spec.to_string(),
        folds: k,
        seed,
        r2_test: mean_defined(&fold_r2),
        cor_test: mean_defined(&fold_cor),
        fold_r2,
        fold_cor,
        fold_assignments: rows.iter().zip(&folds).map(|(&r, &f)| (table.ids()[r].clone(), f)).collect(),
        r2_definition: R2_DEFINITION,
    })
}
