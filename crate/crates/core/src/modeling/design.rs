//! Design matrices from a [`ModelSpec`] and a [`MetricsTable`].

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{ModelError, ModelSpec};
use crate::table::{ColumnData, MetricsTable};

pub const INTERCEPT: &str = "(Intercept)";

/// Per-variable centring and scaling applied before products are formed.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct Scaling {
    pub variable: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Standardize<'a> {
    Off,
    /// Estimate mean/sd from the rows being assembled.
    Fit,
    /// Reuse scalings estimated elsewhere (e.g. on a training fold).
    Apply(&'a [Scaling]),
}

/// Group level index per row, with the level names.
#[derive(Clone, Debug, PartialEq)]
pub struct Grouping {
    pub column: String,
    pub levels: Vec<String>,
    pub index: Vec<usize>,
}

impl Grouping {
    pub fn from_labels(column: impl Into<String>, labels: &[String]) -> Self {
        let levels: Vec<String> = {
            let mut l: Vec<String> = labels.to_vec();
            l.sort();
            l.dedup();
            l
        };
        let pos: BTreeMap<&str, usize> = levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let index = labels.iter().map(|l| pos[l.as_str()]).collect();
        Self {
            column: column.into(),
            levels,
            index,
        }
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// One-hot indicator matrix (rows x levels).
    pub fn z(&self) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.index.len(), self.levels.len());
        for (r, &g) in self.index.iter().enumerate() {
            z[(r, g)] = 1.0;
        }
        z
    }

    pub fn label(&self, row: usize) -> &str {
        &self.levels[self.index[row]]
    }
}

#[derive(Clone, Debug)]
pub struct Design {
    /// Intercept first, then the spec's fixed terms in order.
    pub x: DMatrix<f64>,
    pub column_names: Vec<String>,
    pub y: DVector<f64>,
    pub groups: Option<Grouping>,
    /// Table row index of each design row.
    pub rows: Vec<usize>,
    /// Candidate rows left out because a used cell was missing.
    pub dropped: usize,
    pub scaling: Vec<Scaling>,
}

impl Design {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Predictor columns only.
    pub fn x_without_intercept(&self) -> DMatrix<f64> {
        self.x.columns(1, self.x.ncols() - 1).into_owned()
    }
}

fn numeric_column<'t>(table: &'t MetricsTable, name: &str) -> Result<&'t [Option<f64>], ModelError> {
    match table.column(name).map_err(|_| ModelError::MissingColumn(name.to_string()))? {
        ColumnData::Numeric(v) => Ok(v),
        ColumnData::Text(_) => Err(ModelError::NonNumeric(name.to_string())),
    }
}

/// Rows of `candidates` (all rows if `None`) with every variable the spec uses present.
pub fn complete_rows(spec: &ModelSpec, table: &MetricsTable, candidates: Option<&[usize]>) -> Result<Vec<usize>, ModelError> {
    let cols = spec
        .variables()
        .into_iter()
        .map(|v| numeric_column(table, v))
        .collect::<Result<Vec<_>, _>>()?;
    let groups = match &spec.random_intercept {
        Some(g) => Some(table.text(g).map_err(|_| ModelError::MissingColumn(g.clone()))?),
        None => None,
    };
    let all: Vec<usize> = (0..table.len()).collect();
    let rows = candidates.unwrap_or(&all);
    Ok(rows
        .iter()
        .copied()
        .filter(|&r| cols.iter().all(|c| c[r].is_some()) && groups.as_ref().is_none_or(|g| g[r].is_some()))
        .collect())
}

/// Builds X (intercept plus fixed terms), y and the grouping. Rows with a
/// missing value in any used column are dropped and counted. Interactions
/// are products of the (optionally standardised) main-effect columns.
pub fn build_design(spec: &ModelSpec, table: &MetricsTable, standardize: Standardize<'_>) -> Result<Design, ModelError> {
    build_design_rows(spec, table, None, standardize)
}

pub fn build_design_rows(
    spec: &ModelSpec,
    table: &MetricsTable,
    candidates: Option<&[usize]>,
    standardize: Standardize<'_>,
) -> Result<Design, ModelError> {
    let n_candidates = candidates.map_or(table.len(), <[usize]>::len);
    let rows = complete_rows(spec, table, candidates)?;
    if rows.is_empty() {
        return Err(ModelError::EmptyDesign);
    }
    let n = rows.len();

    let predictors = spec.predictors();
    let mut scaling = Vec::new();
    let mut main: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for &v in &predictors {
        let col = numeric_column(table, v)?;
        let mut values: Vec<f64> = rows.iter().map(|&r| col[r].expect("complete row")).collect();
        let s = match &standardize {
            Standardize::Off => None,
            Standardize::Fit => {
                let mean = values.iter().sum::<f64>() / n as f64;
                let var = if n > 1 {
                    values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
                } else {
                    0.0
                };
                Some(Scaling {
                    variable: v.to_string(),
                    mean,
                    sd: var.sqrt(),
                })
            }
            Standardize::Apply(fitted) => Some(
                fitted
                    .iter()
                    .find(|s| s.variable == v)
                    .cloned()
                    .ok_or_else(|| ModelError::MissingColumn(format!("scaling for {v}")))?,
            ),
        };
        if let Some(s) = s {
            if s.sd > 0.0 {
                values.iter_mut().for_each(|x| *x = (*x - s.mean) / s.sd);
            } else {
                log::warn!("{v} is constant; centred but not scaled");
                values.iter_mut().for_each(|x| *x -= s.mean);
            }
            scaling.push(s);
        }
        main.insert(v, values);
    }

    let p = spec.fixed_terms.len() + 1;
    let mut x = DMatrix::from_element(n, p, 1.0);
    let mut column_names = vec![INTERCEPT.to_string()];
    for (j, term) in spec.fixed_terms.iter().enumerate() {
        for f in term.factors() {
            let col = &main[f.as_str()];
            for i in 0..n {
                x[(i, j + 1)] *= col[i];
            }
        }
        column_names.push(term.to_string());
    }

    let ycol = numeric_column(table, &spec.response)?;
    let y = DVector::from_iterator(n, rows.iter().map(|&r| ycol[r].expect("complete row")));
    let groups = match &spec.random_intercept {
        Some(g) => {
            let labels = table.text(g).map_err(|_| ModelError::MissingColumn(g.clone()))?;
            let labels: Vec<String> = rows.iter().map(|&r| labels[r].clone().expect("complete row")).collect();
            Some(Grouping::from_labels(g.clone(), &labels))
        }
        None => None,
    };
    Ok(Design {
        x,
        column_names,
        y,
        groups,
        dropped: n_candidates - n,
        rows,
        scaling,
    })
}
