//! Report bundle built from a metrics table.
//!
//! Each analysis names the columns it needs and fails with
//! [`CliError::MissingColumns`] when they are absent. Numbers that can be
//! non-finite (ICC at its degenerate limit, infinite VIFs) are stored as
//! `null` in JSON.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use creadraw_core::content::{
    build_flexibility_sets, conceptual_diversity, CategoryAnnotation, FlexibilityCandidate, Owner,
};
use creadraw_core::modeling::{
    combined_model_report, compare_models, cross_validate, parse_formula, ModelSpec, R2_DEFINITION,
};
use creadraw_core::stats::{
    group_summary, icc_average_fixed, kruskal_wallis, pairwise_group_tests, quantile_sorted, spearman, RatingsMatrix,
    STAR_LEVEL,
};
use creadraw_core::style::Stimulus;
use creadraw_core::table::MetricsTable;

use crate::config::{Analysis, Config};
use crate::manifest::{Group, Subgroup};
use crate::pipeline::GroupClustering;
use crate::CliError;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Tukey box: quartiles (type 7), whiskers at the most extreme values within
/// 1.5 IQR of the box, everything beyond as outliers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub label: String,
    pub n: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
    pub values: Vec<f64>,
}

impl BoxStats {
    pub fn new(label: impl Into<String>, values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (q1, median, q3) = (
            quantile_sorted(&sorted, 0.25),
            quantile_sorted(&sorted, 0.5),
            quantile_sorted(&sorted, 0.75),
        );
        let iqr = q3 - q1;
        let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside: Vec<f64> = sorted.iter().copied().filter(|v| (lo..=hi).contains(v)).collect();
        Some(Self {
            label: label.into(),
            n: sorted.len(),
            q1,
            median,
            q3,
            whisker_low: inside.first().copied().unwrap_or(median),
            whisker_high: inside.last().copied().unwrap_or(median),
            outliers: sorted.iter().copied().filter(|v| !(lo..=hi).contains(v)).collect(),
            values: values.to_vec(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub a: String,
    pub b: String,
    pub u: f64,
    pub p: f64,
    pub p_adjusted: f64,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub subgroup: String,
    pub n: usize,
    pub n_missing: usize,
    pub mean: f64,
    pub sd: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub boxes: Vec<BoxStats>,
    pub summary: Vec<Summary>,
    pub kruskal_h: Option<f64>,
    pub kruskal_p: Option<f64>,
    pub pairwise: Vec<PairResult>,
    /// Set when the comparison could not run.
    pub skipped: Option<String>,
}

impl Comparison {
    pub fn significant_pairs(&self) -> Vec<(String, String)> {
        self.pairwise.iter().filter(|p| p.significant).map(|p| (p.a.clone(), p.b.clone())).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub scope: String,
    pub rho: f64,
    pub p: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub icc_experts: Option<f64>,
    pub icc_tools: Option<f64>,
    pub n_experts: usize,
    pub n_tools: usize,
    pub expert_vs_automated: Vec<SpearmanResult>,
    pub expert_means: Vec<Summary>,
    pub automated_means: Vec<Summary>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub vocabulary: usize,
    pub by_subgroup: BTreeMap<String, f64>,
    pub by_group: BTreeMap<String, f64>,
    pub n_annotated: usize,
    pub n_missing: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlexSet {
    pub set_id: String,
    pub subgroup: String,
    pub drawing_ids: Vec<String>,
    pub score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlexibilityReport {
    pub sets: Vec<FlexSet>,
    pub skipped: Vec<String>,
    pub comparison: Option<Comparison>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelsReport {
    /// BIC ranking per response.
    pub rankings: BTreeMap<String, Value>,
    pub cross_validation: Vec<Value>,
    pub combined: Option<Value>,
    pub errors: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub seed: u64,
    pub linkage: String,
    pub metric: String,
    pub pairwise_test: String,
    pub significance_level: f64,
    pub expert_normalization: String,
    pub icc: String,
    pub r2_definition: String,
    pub cv_folds: usize,
    pub stratify_by: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub n_drawings: usize,
    pub settings: Settings,
    pub group_compare: Option<Vec<Comparison>>,
    pub agreement: Option<AgreementReport>,
    pub diversity: Option<DiversityReport>,
    pub flexibility: Option<FlexibilityReport>,
    pub models: Option<ModelsReport>,
    pub clustering: Vec<GroupClustering>,
    pub notices: Vec<String>,
}

fn require(table: &MetricsTable, analysis: &str, cols: &[&str]) -> Result<(), CliError> {
    let missing: Vec<String> = cols.iter().filter(|c| !table.has_column(c)).map(|c| c.to_string()).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::MissingColumns {
            analysis: analysis.into(),
            columns: missing,
        })
    }
}

fn text_col(table: &MetricsTable, name: &str) -> Result<Vec<Option<String>>, CliError> {
    Ok(table.text(name)?)
}

/// Subgroups present in the table, in canonical order, then any others.
fn subgroup_order(labels: &[Option<String>]) -> Vec<String> {
    let present: BTreeSet<&str> = labels.iter().flatten().map(String::as_str).collect();
    let mut out: Vec<String> = Subgroup::ALL
        .iter()
        .map(|s| s.as_str())
        .filter(|s| present.contains(s))
        .map(str::to_string)
        .collect();
    for p in present {
        if !out.iter().any(|o| o == p) {
            out.push(p.to_string());
        }
    }
    out
}

/// Kruskal-Wallis over subgroups plus Bonferroni-adjusted pairwise tests.
pub fn compare_column(metric: &str, values: &[Option<f64>], labels: &[Option<String>]) -> Comparison {
    let order = subgroup_order(labels);
    let mut series: Vec<(String, Vec<f64>)> = order.iter().map(|s| (s.clone(), Vec::new())).collect();
    for (v, l) in values.iter().zip(labels) {
        if let (Some(v), Some(l)) = (v, l) {
            if v.is_finite() {
                series.iter_mut().find(|(s, _)| s == l).expect("label in order").1.push(*v);
            }
        }
    }
    let groups: Vec<&str> = labels.iter().map(|l| l.as_deref().unwrap_or("")).collect();
    let summary = group_summary(values, &groups)
        .map(|v| {
            let mut v: Vec<Summary> = v
                .into_iter()
                .filter(|g| !g.group.is_empty())
                .map(|g| Summary {
                    subgroup: g.group,
                    n: g.n,
                    n_missing: g.n_missing,
                    mean: g.mean,
                    sd: g.sd,
                })
                .collect();
            v.sort_by_key(|s| order.iter().position(|o| *o == s.subgroup));
            v
        })
        .unwrap_or_default();
    let boxes = series.iter().filter_map(|(l, v)| BoxStats::new(l.clone(), v)).collect();
    let nonempty: Vec<(String, Vec<f64>)> = series.into_iter().filter(|(_, v)| !v.is_empty()).collect();
    let mut out = Comparison {
        metric: metric.to_string(),
        boxes,
        summary,
        kruskal_h: None,
        kruskal_p: None,
        pairwise: Vec::new(),
        skipped: None,
    };
    let vals: Vec<Vec<f64>> = nonempty.iter().map(|(_, v)| v.clone()).collect();
    match kruskal_wallis(&vals) {
        Ok(kw) => {
            out.kruskal_h = Some(kw.h);
            out.kruskal_p = Some(kw.p);
        }
        Err(e) => {
            out.skipped = Some(e.to_string());
            return out;
        }
    }
    match pairwise_group_tests(&nonempty) {
        Ok(pairs) => {
            out.pairwise = pairs
                .into_iter()
                .map(|p| PairResult {
                    a: p.a,
                    b: p.b,
                    u: p.u,
                    p: p.p,
                    p_adjusted: p.p_adjusted,
                    significant: p.significant,
                })
                .collect()
        }
        Err(e) => out.skipped = Some(e.to_string()),
    }
    out
}

fn group_compare(table: &MetricsTable, cfg: &Config, notices: &mut Vec<String>) -> Result<Vec<Comparison>, CliError> {
    require(table, "group_compare", &["subgroup"])?;
    let labels = text_col(table, "subgroup")?;
    let mut out = Vec::new();
    for metric in &cfg.analysis.compare_columns {
        require(table, "group_compare", &[metric])?;
        let values = table.numeric(metric)?;
        if values.iter().all(Option::is_none) {
            notices.push(format!("group_compare: column {metric} is empty; skipped"));
            continue;
        }
        out.push(compare_column(metric, values, &labels));
    }
    Ok(out)
}

fn complete_pairs(a: &[Option<f64>], b: &[Option<f64>], keep: impl Fn(usize) -> bool) -> (Vec<f64>, Vec<f64>) {
    a.iter()
        .zip(b)
        .enumerate()
        .filter_map(|(i, (x, y))| Some((i, (*x)?, (*y)?)))
        .filter(|(i, _, _)| keep(*i))
        .map(|(_, x, y)| (x, y))
        .unzip()
}

fn icc_of(a: &[Option<f64>], b: &[Option<f64>], scale: (f64, f64), what: &str, notes: &mut Vec<String>) -> (Option<f64>, usize) {
    let (x, y) = complete_pairs(a, b, |_| true);
    let n = x.len();
    let icc = RatingsMatrix::from_columns(&[&x, &y], scale).and_then(|m| icc_average_fixed(&m));
    match icc {
        Ok(v) => {
            if !v.is_finite() {
                notes.push(format!("{what}: ICC is {v} (no between-subject variance)"));
            }
            (finite(v), n)
        }
        Err(e) => {
            notes.push(format!("{what}: ICC not computed: {e}"));
            (None, n)
        }
    }
}

fn agreement(table: &MetricsTable) -> Result<AgreementReport, CliError> {
    require(
        table,
        "agreement",
        &["subgroup", "group", "expert1", "expert2", "audra", "osc", "expert", "automated"],
    )?;
    let mut notes = Vec::new();
    let (icc_experts, n_experts) = icc_of(table.numeric("expert1")?, table.numeric("expert2")?, (0.0, 4.0), "experts", &mut notes);
    let (icc_tools, n_tools) = icc_of(table.numeric("audra")?, table.numeric("osc")?, (0.0, 1.0), "tools", &mut notes);
    let expert = table.numeric("expert")?;
    let automated = table.numeric("automated")?;
    let sub = text_col(table, "subgroup")?;
    let grp = text_col(table, "group")?;
    let mut scopes: Vec<(String, Box<dyn Fn(usize) -> bool>)> = vec![("all".into(), Box::new(|_| true))];
    for g in Group::ALL {
        let grp = grp.clone();
        scopes.push((g.to_string(), Box::new(move |i| grp[i].as_deref() == Some(g.as_str()))));
    }
    for s in subgroup_order(&sub) {
        let sub = sub.clone();
        let key = s.clone();
        if Group::ALL.iter().any(|g| g.as_str() == s) {
            continue;
        }
        scopes.push((s, Box::new(move |i| sub[i].as_deref() == Some(key.as_str()))));
    }
    let mut expert_vs_automated = Vec::new();
    for (scope, keep) in scopes {
        let (x, y) = complete_pairs(expert, automated, keep);
        if x.len() < 3 {
            continue;
        }
        match spearman(&x, &y) {
            Ok(c) => expert_vs_automated.push(SpearmanResult {
                scope,
                rho: c.rho,
                p: c.p,
                n: c.n,
            }),
            Err(e) => notes.push(format!("spearman ({scope}): {e}")),
        }
    }
    let summarize = |values: &[Option<f64>]| -> Vec<Summary> {
        let c = compare_column("", values, &sub);
        c.summary
    };
    Ok(AgreementReport {
        icc_experts,
        icc_tools,
        n_experts,
        n_tools,
        expert_vs_automated,
        expert_means: summarize(expert),
        automated_means: summarize(automated),
        notes,
    })
}

fn diversity(table: &MetricsTable) -> Result<DiversityReport, CliError> {
    require(table, "diversity", &["categories", "subgroup", "group"])?;
    let cats = text_col(table, "categories")?;
    let sub = text_col(table, "subgroup")?;
    let grp = text_col(table, "group")?;
    let mut annotations = Vec::new();
    let mut missing = 0;
    for (id, c) in table.ids().iter().zip(&cats) {
        match c {
            Some(c) => {
                let labels = c.split('|').map(str::to_string).collect();
                annotations.push(
                    CategoryAnnotation::new(id.clone(), labels).map_err(|e| CliError::Analysis(format!("diversity: {id}: {e}")))?,
                );
            }
            None => missing += 1,
        }
    }
    let index: BTreeMap<&str, usize> = table.ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let by = |col: &Vec<Option<String>>| conceptual_diversity(&annotations, |id| col[index[id]].clone());
    let s = by(&sub);
    let g = by(&grp);
    Ok(DiversityReport {
        vocabulary: s.vocabulary,
        by_subgroup: s.by_group,
        by_group: g.by_group,
        n_annotated: annotations.len(),
        n_missing: missing,
    })
}

fn read_flex_scores(path: &Path) -> Result<BTreeMap<String, Vec<f64>>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let header = rdr.headers().map_err(|e| CliError::Config(e.to_string()))?.clone();
    let col = |name: &str| header.iter().position(|h| h.trim() == name);
    let id = col("set_id").ok_or_else(|| CliError::MissingColumns {
        analysis: "flexibility scores".into(),
        columns: vec!["set_id".into()],
    })?;
    let raters: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.trim().starts_with("rater"))
        .map(|(i, _)| i)
        .collect();
    let mut out = BTreeMap::new();
    for (n, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut scores = Vec::new();
        for &r in &raters {
            let cell = row.get(r).unwrap_or("").trim();
            if cell.is_empty() {
                continue;
            }
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v| (0.0..=2.0).contains(v))
                .ok_or_else(|| CliError::Config(format!("{}: row {}: flexibility score {cell:?} not in [0, 2]", path.display(), n + 2)))?;
            scores.push(v);
        }
        out.insert(row[id].trim().to_string(), scores);
    }
    Ok(out)
}

fn flexibility(table: &MetricsTable, cfg: &Config) -> Result<FlexibilityReport, CliError> {
    require(table, "flexibility", &["group", "subgroup", "participant_id", "stimulus"])?;
    let grp = text_col(table, "group")?;
    let sub = text_col(table, "subgroup")?;
    let pid = text_col(table, "participant_id")?;
    let stim = text_col(table, "stimulus")?;
    let ctx = if table.has_column("flex_context") {
        text_col(table, "flex_context")?
    } else {
        vec![None; table.len()]
    };
    let mut candidates = Vec::new();
    let mut subgroup_of: BTreeMap<Owner, String> = BTreeMap::new();
    for (i, id) in table.ids().iter().enumerate() {
        let (Some(g), Some(s), Some(st)) = (&grp[i], &sub[i], stim[i].as_deref().and_then(Stimulus::parse)) else {
            continue;
        };
        let owner = match (g.as_str(), &ctx[i], &pid[i]) {
            (_, Some(c), _) => Owner::Participant(c.clone()),
            ("ai", None, _) => Owner::Prompt(s.clone()),
            (_, None, Some(p)) => Owner::Participant(p.clone()),
            _ => continue,
        };
        subgroup_of.entry(owner.clone()).or_insert_with(|| s.clone());
        candidates.push(FlexibilityCandidate {
            drawing_id: id.clone(),
            owner,
            stimulus: st,
        });
    }
    let built = build_flexibility_sets(&candidates, cfg.seed);
    let scores = match &cfg.analysis.flexibility_scores {
        Some(p) => Some(read_flex_scores(p)?),
        None => None,
    };
    let sets: Vec<FlexSet> = built
        .sets
        .iter()
        .map(|s| {
            let raters = scores.as_ref().and_then(|m| m.get(&s.set_id)).cloned().unwrap_or_default();
            FlexSet {
                set_id: s.set_id.clone(),
                subgroup: subgroup_of[&s.owner].clone(),
                drawing_ids: s.drawing_ids.to_vec(),
                score: (!raters.is_empty()).then(|| raters.iter().sum::<f64>() / raters.len() as f64),
            }
        })
        .collect();
    let comparison = scores.as_ref().map(|_| {
        let values: Vec<Option<f64>> = sets.iter().map(|s| s.score).collect();
        let labels: Vec<Option<String>> = sets.iter().map(|s| Some(s.subgroup.clone())).collect();
        compare_column("flexibility", &values, &labels)
    });
    Ok(FlexibilityReport {
        sets,
        skipped: built.skipped.iter().map(|(o, r)| format!("{o:?}: {r}")).collect(),
        comparison,
    })
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn models(table: &MetricsTable, cfg: &Config) -> Result<ModelsReport, CliError> {
    let a = &cfg.analysis;
    let specs: Vec<ModelSpec> = a
        .models
        .iter()
        .map(|f| parse_formula(f).map_err(|e| CliError::Config(format!("model {f:?}: {e}"))))
        .collect::<Result<_, _>>()?;
    for s in &specs {
        let vars = s.variables();
        require(table, "models", &vars)?;
    }
    require(table, "models", &[a.stratify_by.as_str()])?;
    let mut by_response: BTreeMap<String, Vec<ModelSpec>> = BTreeMap::new();
    for s in &specs {
        by_response.entry(s.response.clone()).or_default().push(s.clone());
    }
    let mut report = ModelsReport {
        rankings: BTreeMap::new(),
        cross_validation: Vec::new(),
        combined: None,
        errors: Vec::new(),
    };
    for (response, group) in &by_response {
        match compare_models(group, table) {
            Ok(c) => {
                report.rankings.insert(response.clone(), to_value(&c));
            }
            Err(e) => report.errors.push(format!("ranking for {response}: {e}")),
        }
    }
    for s in &specs {
        match cross_validate(s, table, a.cv_folds, &a.stratify_by, cfg.seed) {
            Ok(cv) => report.cross_validation.push(to_value(&cv)),
            Err(e) => report.errors.push(format!("cross-validation of {s}: {e}")),
        }
    }
    if !a.combined_predictors.is_empty() && !a.combined_responses.is_empty() {
        let mut cols: Vec<&str> = a.combined_predictors.iter().chain(&a.combined_responses).map(String::as_str).collect();
        if let Some(g) = &a.combined_random_intercept {
            cols.push(g);
        }
        require(table, "models (combined)", &cols)?;
        match combined_model_report(&a.combined_predictors, &a.combined_responses, a.combined_random_intercept.as_deref(), table) {
            Ok(c) => report.combined = Some(to_value(&c)),
            Err(e) => report.errors.push(format!("combined model: {e}")),
        }
    }
    Ok(report)
}

/// Runs the configured analyses.
pub fn analyze(table: &MetricsTable, clustering: Vec<GroupClustering>, cfg: &Config) -> Result<ReportBundle, CliError> {
    let want = |a: Analysis| cfg.analysis.analyses.contains(&a);
    let mut notices = Vec::new();
    let group_compare = if want(Analysis::GroupCompare) {
        Some(group_compare(table, cfg, &mut notices)?)
    } else {
        None
    };
    Ok(ReportBundle {
        n_drawings: table.len(),
        settings: Settings {
            seed: cfg.seed,
            linkage: "average".into(),
            metric: "cosine".into(),
            pairwise_test: "Mann-Whitney U (normal approximation, tie and continuity corrected), Bonferroni over subgroup pairs".into(),
            significance_level: STAR_LEVEL,
            expert_normalization: "mean of expert1 and expert2, min-max scaled over the observed corpus range".into(),
            icc: "two-way mixed, consistency, average measures".into(),
            r2_definition: R2_DEFINITION.into(),
            cv_folds: cfg.analysis.cv_folds,
            stratify_by: cfg.analysis.stratify_by.clone(),
        },
        group_compare,
        agreement: want(Analysis::Agreement).then(|| agreement(table)).transpose()?,
        diversity: want(Analysis::Diversity).then(|| diversity(table)).transpose()?,
        flexibility: want(Analysis::Flexibility).then(|| flexibility(table, cfg)).transpose()?,
        models: want(Analysis::Models).then(|| models(table, cfg)).transpose()?,
        clustering,
        notices,
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into())
}

fn fmt_p(p: f64) -> String {
    if p < 1e-4 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

fn stars(p: f64) -> &'static str {
    if p < STAR_LEVEL {
        " ***"
    } else {
        ""
    }
}

fn write_comparison(s: &mut String, c: &Comparison) {
    let _ = writeln!(s, "\n  {}", c.metric);
    if let Some(reason) = &c.skipped {
        let _ = writeln!(s, "    skipped: {reason}");
    }
    for m in &c.summary {
        let _ = writeln!(s, "    {:<14} n={:<4} mean={:.4} sd={}", m.subgroup, m.n, m.mean, fmt_opt(m.sd));
    }
    if let (Some(h), Some(p)) = (c.kruskal_h, c.kruskal_p) {
        let _ = writeln!(s, "    Kruskal-Wallis H={h:.3} p={}", fmt_p(p));
    }
    for p in c.pairwise.iter().filter(|p| p.significant) {
        let _ = writeln!(s, "    {} vs {}: U={:.1} p_adj={}{}", p.a, p.b, p.u, fmt_p(p.p_adjusted), stars(p.p_adjusted));
    }
}

/// Human-readable rendering of the bundle.
pub fn render_text(b: &ReportBundle) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Drawings: {}", b.n_drawings);
    let _ = writeln!(s, "Seed: {}", b.settings.seed);
    let _ = writeln!(s, "Clustering: {} linkage, {} distance", b.settings.linkage, b.settings.metric);
    let _ = writeln!(s, "Pairwise test: {}", b.settings.pairwise_test);
    let _ = writeln!(s, "Expert score: {}", b.settings.expert_normalization);
    if let Some(gc) = &b.group_compare {
        let _ = writeln!(s, "\n== Subgroup comparison (*** adjusted p < {}) ==", b.settings.significance_level);
        for c in gc {
            write_comparison(&mut s, c);
        }
    }
    if let Some(a) = &b.agreement {
        let _ = writeln!(s, "\n== Agreement ==");
        let _ = writeln!(s, "  ICC experts ({}): {} (n={})", b.settings.icc, fmt_opt(a.icc_experts), a.n_experts);
        let _ = writeln!(s, "  ICC tools: {} (n={})", fmt_opt(a.icc_tools), a.n_tools);
        for r in &a.expert_vs_automated {
            let _ = writeln!(s, "  Spearman expert vs automated [{}]: rho={:.3} p={} n={}", r.scope, r.rho, fmt_p(r.p), r.n);
        }
        let _ = writeln!(s, "  Mean scores by subgroup (expert | automated):");
        for e in &a.expert_means {
            let auto = a.automated_means.iter().find(|x| x.subgroup == e.subgroup);
            let _ = writeln!(
                s,
                "    {:<14} {:.2} ({}) | {}",
                e.subgroup,
                e.mean,
                fmt_opt(e.sd),
                auto.map(|x| format!("{:.2} ({})", x.mean, fmt_opt(x.sd))).unwrap_or_else(|| "n/a".into())
            );
        }
        for n in &a.notes {
            let _ = writeln!(s, "  note: {n}");
        }
    }
    if let Some(d) = &b.diversity {
        let _ = writeln!(s, "\n== Conceptual diversity (vocabulary {}) ==", d.vocabulary);
        for (k, v) in d.by_group.iter().chain(&d.by_subgroup) {
            let _ = writeln!(s, "  {k:<14} {v:.3}");
        }
        if d.n_missing > 0 {
            let _ = writeln!(s, "  {} drawings without categories", d.n_missing);
        }
    }
    if let Some(f) = &b.flexibility {
        let _ = writeln!(s, "\n== Flexibility ==");
        let _ = writeln!(s, "  {} sets, {} owners skipped", f.sets.len(), f.skipped.len());
        match &f.comparison {
            Some(c) => write_comparison(&mut s, c),
            None => {
                let _ = writeln!(s, "  no flexibility scores supplied");
            }
        }
    }
    if let Some(m) = &b.models {
        let _ = writeln!(s, "\n== Models ==");
        for (response, r) in &m.rankings {
            let _ = writeln!(s, "  BIC ranking for {response}:");
            for row in r["ranked"].as_array().into_iter().flatten() {
                let _ = writeln!(s, "    {:>10.2}  {}", row["bic"].as_f64().unwrap_or(f64::NAN), row["formula"].as_str().unwrap_or(""));
            }
        }
        for cv in &m.cross_validation {
            let _ = writeln!(
                s,
                "  CV {}: R2_test={} Cor_test={}",
                cv["formula"].as_str().unwrap_or(""),
                fmt_opt(cv["r2_test"].as_f64()),
                fmt_opt(cv["cor_test"].as_f64())
            );
        }
        if let Some(c) = &m.combined {
            let _ = writeln!(s, "  Combined model (n={}):", c["n"]);
            for fit in c["fits"].as_array().into_iter().flatten() {
                let _ = writeln!(s, "    {}", fit["formula"].as_str().unwrap_or(""));
                for co in fit["coefficients"].as_array().into_iter().flatten() {
                    let p = co["p"].as_f64().unwrap_or(f64::NAN);
                    let _ = writeln!(
                        s,
                        "      {:<22} {:>8.3} (se {:.3}) p={}{}",
                        co["term"].as_str().unwrap_or(""),
                        co["beta"].as_f64().unwrap_or(f64::NAN),
                        co["std_error"].as_f64().unwrap_or(f64::NAN),
                        fmt_p(p),
                        stars(p)
                    );
                }
            }
            for v in c["vif"].as_array().into_iter().flatten() {
                let _ = writeln!(s, "    VIF {:<22} {}", v[0].as_str().unwrap_or(""), v[1].as_f64().map(|x| format!("{x:.3}")).unwrap_or_else(|| "inf".into()));
            }
        }
        for e in &m.errors {
            let _ = writeln!(s, "  error: {e}");
        }
    }
    if !b.clustering.is_empty() {
        let _ = writeln!(s, "\n== Clusters ==");
        for c in &b.clustering {
            let _ = writeln!(s, "  {}: {} drawings, {} clusters ({:?})", c.group, c.drawing_ids.len(), c.n_clusters, c.cut);
        }
    }
    for n in &b.notices {
        let _ = writeln!(s, "\nnote: {n}");
    }
    s
}

pub fn write_report(b: &ReportBundle, out_dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir).map_err(CliError::io(out_dir))?;
    crate::pipeline::write_json(&out_dir.join(REPORT_JSON), b)?;
    let path = out_dir.join(REPORT_TEXT);
    std::fs::write(&path, render_text(b)).map_err(CliError::io(&path))
}

pub fn read_report(path: &Path) -> Result<ReportBundle, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
