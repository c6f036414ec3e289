//! Preprocessing and metric computation over a validated corpus.
//!
//! Per drawing: binarize, despeckle, resample the full frame to the
//! 400x400 canvas, then (for the configured groups) dilate to the target
//! stroke width. Resampling comes before dilation so every thickness is
//! measured at canvas scale. A drawing that cannot be read or has no ink
//! left is a failure: its metric cells stay empty and it is listed in the
//! run metadata.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use creadraw_core::content::{
    dist_from_stim, hierarchical_cluster, is_hard_to_interpret, knn_uniqueness_all, CutRule, EmbeddingVector, Merge,
    Validation,
};
use creadraw_core::raster::{
    binarize, despeckle, dilate_to_thickness, encode_binary_png, estimate_line_thickness, read_gray, to_canvas,
    write_binary_png, BinaryRaster, Connectivity, RasterError,
};
use creadraw_core::stats::{kruskal_wallis, min_max_normalize, quantile_sorted};
use creadraw_core::style::{count_components, count_lines, ink_density, ink_inside_fraction, Stimulus, StimulusSpec};
use creadraw_core::table::MetricsTable;
use creadraw_providers::{ProviderConfig, Providers};

use crate::config::{ClusterSource, Config};
use crate::manifest::{DrawingRecord, Group};
use crate::CliError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const METADATA_FILE: &str = "run_metadata.json";
pub const CLUSTERING_FILE: &str = "clustering.json";
pub const PREPROCESS_FILE: &str = "preprocess.json";

/// Columns read back as text from a metrics table.
pub const TEXT_COLUMNS: [&str; 8] = [
    "group",
    "subgroup",
    "participant_id",
    "stimulus",
    "flex_context",
    "caption",
    "caption_valid",
    "categories",
];

#[derive(Clone, Debug)]
pub struct Prepared {
    pub raster: BinaryRaster,
    /// Stroke width on the canvas before dilation.
    pub thickness_before: f64,
    pub thickness: f64,
    pub dilations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThicknessSummary {
    pub by_group: BTreeMap<String, f64>,
    pub h: f64,
    pub df: usize,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub drawing_id: String,
    pub error: String,
}

#[derive(Debug)]
pub struct PreprocessOutput {
    /// Aligned with the records.
    pub drawings: Vec<Result<Prepared, String>>,
    pub target_thickness: Option<f64>,
    /// Kruskal-Wallis of final stroke width across groups.
    pub thickness_check: Option<ThicknessSummary>,
    pub notices: Vec<String>,
}

impl PreprocessOutput {
    pub fn failures(&self, records: &[DrawingRecord]) -> Vec<Failure> {
        records
            .iter()
            .zip(&self.drawings)
            .filter_map(|(r, d)| {
                d.as_ref().err().map(|e| Failure {
                    drawing_id: r.drawing_id.clone(),
                    error: e.clone(),
                })
            })
            .collect()
    }
}

fn load_canvas(path: &Path, cfg: &Config) -> Result<BinaryRaster, RasterError> {
    let gray = read_gray(path)?;
    let bin = despeckle(&binarize(&gray, cfg.preprocess.threshold), cfg.preprocess.min_speck_area);
    to_canvas(&bin, bin.full_frame())
}

fn median(xs: &mut [f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    Some(quantile_sorted(xs, 0.5))
}

pub fn preprocess(records: &[DrawingRecord], cfg: &Config) -> PreprocessOutput {
    let mut notices = Vec::new();
    let stage1: Vec<Result<(BinaryRaster, f64), String>> = records
        .par_iter()
        .map(|r| {
            let raster = load_canvas(&r.image_path, cfg).map_err(|e| format!("{}: {e}", r.image_path.display()))?;
            if !raster.has_ink() {
                return Err("no ink after preprocessing".to_string());
            }
            let t = estimate_line_thickness(&raster).map_err(|e| e.to_string())?;
            Ok((raster, t))
        })
        .collect();

    let reference = cfg.preprocess.reference_group;
    let target = cfg.preprocess.target_thickness.or_else(|| {
        let mut ts: Vec<f64> = records
            .iter()
            .zip(&stage1)
            .filter(|(r, _)| r.group == reference)
            .filter_map(|(_, d)| d.as_ref().ok().map(|(_, t)| *t))
            .collect();
        median(&mut ts)
    });
    if target.is_none() && !cfg.preprocess.dilate_groups.is_empty() {
        notices.push(format!("no target thickness: no usable {reference} drawings; dilation skipped"));
    }

    let tol = cfg.preprocess.thickness_tol;
    let drawings: Vec<Result<Prepared, String>> = records
        .par_iter()
        .zip(stage1)
        .map(|(r, d)| {
            let (raster, before) = d?;
            let dilate = cfg.preprocess.dilate_groups.contains(&r.group);
            match target {
                Some(t) if dilate => match dilate_to_thickness(&raster, t, tol) {
                    Ok(out) => Ok(Prepared {
                        thickness: out.thickness.unwrap_or(before),
                        raster: out.raster,
                        thickness_before: before,
                        dilations: out.iterations,
                    }),
                    // already thicker than the target: kept as drawn
                    Err(RasterError::CannotThin { .. }) => Ok(Prepared {
                        raster,
                        thickness_before: before,
                        thickness: before,
                        dilations: 0,
                    }),
                    Err(e) => Err(e.to_string()),
                },
                _ => Ok(Prepared {
                    raster,
                    thickness_before: before,
                    thickness: before,
                    dilations: 0,
                }),
            }
        })
        .collect();

    let thicker = records
        .iter()
        .zip(&drawings)
        .filter(|(r, d)| {
            cfg.preprocess.dilate_groups.contains(&r.group)
                && matches!((d, target), (Ok(p), Some(t)) if p.thickness_before > t + tol)
        })
        .count();
    if thicker > 0 {
        notices.push(format!("{thicker} drawings were already thicker than the target and were left as drawn"));
    }

    let mut by_group: BTreeMap<Group, Vec<f64>> = BTreeMap::new();
    for (r, d) in records.iter().zip(&drawings) {
        if let Ok(p) = d {
            by_group.entry(r.group).or_default().push(p.thickness);
        }
    }
    let thickness_check = if by_group.len() >= 2 {
        let groups: Vec<Vec<f64>> = by_group.values().cloned().collect();
        match kruskal_wallis(&groups) {
            Ok(kw) => Some(ThicknessSummary {
                by_group: by_group
                    .iter()
                    .map(|(g, v)| (g.to_string(), v.iter().sum::<f64>() / v.len() as f64))
                    .collect(),
                h: kw.h,
                df: kw.df,
                p: kw.p,
            }),
            Err(e) => {
                notices.push(format!("thickness check skipped: {e}"));
                None
            }
        }
    } else {
        None
    };

    PreprocessOutput {
        drawings,
        target_thickness: target,
        thickness_check,
        notices,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PreprocessReport<'a> {
    pub n_drawings: usize,
    pub target_thickness: Option<f64>,
    pub thickness_check: &'a Option<ThicknessSummary>,
    pub failures: Vec<Failure>,
    pub notices: &'a [String],
}

/// Writes the preprocessed rasters as PNG plus a JSON summary.
pub fn write_preprocessed(records: &[DrawingRecord], prep: &PreprocessOutput, out_dir: &Path) -> Result<(), CliError> {
    let dir = out_dir.join("preprocessed");
    std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    records
        .par_iter()
        .zip(&prep.drawings)
        .try_for_each(|(r, d)| match d {
            Ok(p) => {
                let path = dir.join(format!("{}.png", file_stem(&r.drawing_id)));
                write_binary_png(&p.raster, &path).map_err(|e| CliError::Analysis(format!("{}: {e}", path.display())))
            }
            Err(_) => Ok(()),
        })?;
    let report = PreprocessReport {
        n_drawings: records.len(),
        target_thickness: prep.target_thickness,
        thickness_check: &prep.thickness_check,
        failures: prep.failures(records),
        notices: &prep.notices,
    };
    write_json(&out_dir.join(PREPROCESS_FILE), &report)
}

/// Drawing ids as file names: path separators and other specials become '_'.
fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(CliError::io(path))
}

/// Loads the configured stimulus base shapes onto the canvas.
pub fn load_stimuli(cfg: &Config) -> Result<Vec<StimulusSpec>, CliError> {
    let mut out = Vec::new();
    for (shape, path) in [
        (Stimulus::G, &cfg.stimuli.g),
        (Stimulus::I, &cfg.stimuli.i),
        (Stimulus::R, &cfg.stimuli.r),
    ] {
        let Some(path) = path else { continue };
        let canvas = load_canvas(path, cfg).map_err(|e| CliError::Config(format!("stimulus {shape}: {e}")))?;
        out.push(StimulusSpec::new(shape, canvas).map_err(|e| CliError::Config(format!("stimulus {shape}: {e}")))?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupClustering {
    pub group: String,
    pub source: ClusterSource,
    pub linkage: String,
    pub metric: String,
    pub cut: CutRule,
    pub drawing_ids: Vec<String>,
    pub merges: Vec<Merge>,
    pub labels: Vec<usize>,
    pub n_clusters: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunMetadata {
    pub code_version: &'static str,
    pub seed: u64,
    pub config: Config,
    pub n_drawings: usize,
    pub n_failed: usize,
    pub failures: Vec<Failure>,
    pub target_thickness: Option<f64>,
    pub thickness_check: Option<ThicknessSummary>,
    pub expert_normalization: String,
    pub notices: Vec<String>,
    pub provider_warnings: Vec<String>,
}

pub struct MetricsOutput {
    pub table: MetricsTable,
    pub clustering: Vec<GroupClustering>,
    pub metadata: RunMetadata,
}

fn opt_f(xs: impl IntoIterator<Item = Option<usize>>) -> Vec<Option<f64>> {
    xs.into_iter().map(|x| x.map(|v| v as f64)).collect()
}

fn mean2(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some((a? + b?) / 2.0)
}

fn embed(
    providers: &Providers,
    cfg: &ProviderConfig,
    images: &[Vec<u8>],
) -> Result<Vec<EmbeddingVector>, CliError> {
    if images.is_empty() {
        return Ok(Vec::new());
    }
    Ok(providers.embed_images(images, cfg)?)
}

/// kNN uniqueness over the drawings that have an embedding; `None` elsewhere.
fn knn_column(
    n: usize,
    ids: &[String],
    embs: &[(usize, EmbeddingVector)],
    k: usize,
    label: &str,
    notices: &mut Vec<String>,
) -> Result<Vec<Option<f64>>, CliError> {
    let mut col = vec![None; n];
    if embs.len() <= k {
        if !embs.is_empty() {
            notices.push(format!("{label}: only {} embeddings, need {} for k = {k}; column left empty", embs.len(), k + 1));
        }
        return Ok(col);
    }
    let corpus: Vec<(String, EmbeddingVector)> = embs.iter().map(|(i, e)| (ids[*i].clone(), e.clone())).collect();
    let vals = knn_uniqueness_all(&corpus, k).map_err(|e| CliError::Analysis(format!("{label}: {e}")))?;
    for ((i, _), v) in embs.iter().zip(vals) {
        col[*i] = Some(v);
    }
    Ok(col)
}

/// Style, content and score columns for every record.
pub fn compute_metrics(
    records: &[DrawingRecord],
    prep: &PreprocessOutput,
    stimuli: &[StimulusSpec],
    providers: &Providers,
    cfg: &Config,
) -> Result<MetricsOutput, CliError> {
    let n = records.len();
    let mut notices = prep.notices.clone();
    let failures = prep.failures(records);
    let limit = cfg.max_failure_percent;
    if n > 0 && failures.len() as f64 * 100.0 / n as f64 > limit {
        return Err(CliError::TooManyFailures {
            failed: failures.len(),
            total: n,
            limit,
            first: format!("{}: {}", failures[0].drawing_id, failures[0].error),
        });
    }
    for f in &failures {
        log::warn!("drawing {} failed: {}", f.drawing_id, f.error);
    }
    let ids: Vec<String> = records.iter().map(|r| r.drawing_id.clone()).collect();
    let ok: Vec<usize> = (0..n).filter(|&i| prep.drawings[i].is_ok()).collect();
    let raster = |i: usize| &prep.drawings[i].as_ref().expect("ok index").raster;

    // style
    let connectivity = Connectivity::from_count(cfg.style.connectivity).expect("validated");
    let mut hough = cfg.style.hough;
    hough.seed = cfg.seed;
    let stim_of = |s: Stimulus| stimuli.iter().find(|x| x.shape == s);
    let style: Vec<Option<(f64, Option<f64>, usize, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let p = prep.drawings[i].as_ref().ok()?;
            let inside = stim_of(records[i].stimulus).and_then(|s| ink_inside_fraction(&p.raster, s.bbox).ok());
            Some((
                ink_density(&p.raster),
                inside,
                count_components(&p.raster, connectivity),
                count_lines(&p.raster, &hough),
            ))
        })
        .collect();
    if stimuli.len() < 3 {
        notices.push(format!(
            "only {} of 3 stimulus shapes configured; ink_inside_fraction and dist_from_stim are empty for the others",
            stimuli.len()
        ));
    }

    let pngs: Vec<Vec<u8>> = ok
        .par_iter()
        .map(|&i| encode_binary_png(raster(i)).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()
        .map_err(CliError::Analysis)?;

    // image embeddings
    let mut dist_col = vec![None; n];
    let mut image_embs: Vec<(usize, EmbeddingVector)> = Vec::new();
    if let Some(pc) = &cfg.providers.image {
        let mut inputs = pngs.clone();
        for s in stimuli {
            inputs.push(encode_binary_png(&s.base).map_err(|e| CliError::Analysis(e.to_string()))?);
        }
        let mut vecs = embed(providers, pc, &inputs)?;
        let stim_vecs = vecs.split_off(ok.len());
        let stimuli: Vec<StimulusSpec> = stimuli
            .iter()
            .zip(stim_vecs)
            .map(|(s, v)| StimulusSpec {
                embedding: Some(v),
                ..s.clone()
            })
            .collect();
        for (&i, v) in ok.iter().zip(&vecs) {
            if let Some(s) = stimuli.iter().find(|s| s.shape == records[i].stimulus) {
                dist_col[i] = Some(dist_from_stim(v, s).map_err(|e| CliError::Analysis(e.to_string()))?);
            }
        }
        image_embs = ok.iter().copied().zip(vecs).collect();
    } else {
        notices.push("no image embedding provider: dist_from_stim and 10NN_image are empty".into());
    }
    let knn_image = knn_column(n, &ids, &image_embs, cfg.content.k, "10NN_image", &mut notices)?;

    // captions: the manifest wins, the provider fills the rest
    let mut captions: Vec<Option<String>> = records.iter().map(|r| r.caption.clone()).collect();
    let mut valid: Vec<Option<Validation>> = records.iter().map(|r| r.caption_valid).collect();
    let need: Vec<usize> = ok.iter().copied().filter(|&i| captions[i].is_none()).collect();
    if let Some(pc) = &cfg.providers.caption {
        if !need.is_empty() {
            let pos: BTreeMap<usize, usize> = ok.iter().enumerate().map(|(k, &i)| (i, k)).collect();
            let items: Vec<(String, Vec<u8>)> = need.iter().map(|&i| (ids[i].clone(), pngs[pos[&i]].clone())).collect();
            for (&i, rec) in need.iter().zip(providers.caption_images(&items, pc)?) {
                if rec.text.is_empty() {
                    valid[i] = valid[i].or(rec.validated);
                } else {
                    captions[i] = Some(rec.text);
                }
            }
        }
    } else if !need.is_empty() {
        notices.push(format!("no caption provider: {} drawings without a manifest caption", need.len()));
    }
    let hard: Vec<Option<f64>> = captions
        .iter()
        .map(|c| c.as_ref().map(|t| if is_hard_to_interpret(t) { 1.0 } else { 0.0 }))
        .collect();

    // caption embeddings
    let mut text_embs: Vec<(usize, EmbeddingVector)> = Vec::new();
    let with_caption: Vec<usize> = ok.iter().copied().filter(|&i| captions[i].is_some()).collect();
    if let Some(pc) = &cfg.providers.text {
        if !with_caption.is_empty() {
            let texts: Vec<String> = with_caption.iter().map(|&i| captions[i].clone().expect("filtered")).collect();
            let vecs = providers.embed_texts(&texts, pc)?;
            text_embs = with_caption.iter().copied().zip(vecs).collect();
        }
    } else {
        notices.push("no text embedding provider: 10NN_text is empty".into());
    }
    let knn_text = knn_column(n, &ids, &text_embs, cfg.content.k, "10NN_text", &mut notices)?;

    // clustering per group
    let source_embs = match cfg.content.cluster_source {
        ClusterSource::Text => &text_embs,
        ClusterSource::Image => &image_embs,
    };
    let mut clustering = Vec::new();
    for g in Group::ALL {
        let members: Vec<(String, EmbeddingVector)> = source_embs
            .iter()
            .filter(|(i, _)| records[*i].group == g)
            .map(|(i, e)| (ids[*i].clone(), e.clone()))
            .collect();
        if members.is_empty() {
            continue;
        }
        let c = hierarchical_cluster(&members, cfg.content.cut).map_err(|e| CliError::Analysis(format!("clustering {g}: {e}")))?;
        clustering.push(GroupClustering {
            group: g.to_string(),
            source: cfg.content.cluster_source,
            linkage: "average".into(),
            metric: "cosine".into(),
            cut: c.cut,
            drawing_ids: members.into_iter().map(|(id, _)| id).collect(),
            merges: c.merges,
            labels: c.labels,
            n_clusters: c.n_clusters,
        });
    }

    // scores
    let expert_raw: Vec<Option<f64>> = records.iter().map(|r| mean2(r.expert1, r.expert2)).collect();
    let observed: Vec<f64> = expert_raw.iter().flatten().copied().collect();
    let mut expert = vec![None; n];
    match min_max_normalize(&observed) {
        Ok(norm) => {
            let mut it = norm.into_iter();
            for (slot, raw) in expert.iter_mut().zip(&expert_raw) {
                if raw.is_some() {
                    *slot = it.next();
                }
            }
        }
        Err(e) => notices.push(format!("expert column left empty: {e}")),
    }
    let automated: Vec<Option<f64>> = records.iter().map(|r| mean2(r.audra, r.osc)).collect();

    let mut t = MetricsTable::new(ids.clone())?;
    let text = |f: &dyn Fn(&DrawingRecord) -> Option<String>| records.iter().map(f).collect::<Vec<_>>();
    t.add_text("group", text(&|r| Some(r.group.to_string())))?;
    t.add_text("subgroup", text(&|r| Some(r.subgroup.to_string())))?;
    t.add_text("participant_id", text(&|r| Some(r.participant_id.clone())))?;
    t.add_text("stimulus", text(&|r| Some(r.stimulus.to_string())))?;
    t.add_text("flex_context", text(&|r| r.flex_context.clone()))?;
    t.add_numeric("inverted", records.iter().map(|r| Some(if r.inverted { 1.0 } else { 0.0 })).collect())?;
    t.add_numeric("ink_density", style.iter().map(|s| s.map(|s| s.0)).collect())?;
    t.add_numeric("ink_inside_fraction", style.iter().map(|s| s.and_then(|s| s.1)).collect())?;
    t.add_numeric("n_components", opt_f(style.iter().map(|s| s.map(|s| s.2))))?;
    t.add_numeric("n_lines", opt_f(style.iter().map(|s| s.map(|s| s.3))))?;
    t.add_numeric("thickness", prep.drawings.iter().map(|d| d.as_ref().ok().map(|p| p.thickness)).collect())?;
    t.add_numeric("dist_from_stim", dist_col)?;
    t.add_numeric("10NN_image", knn_image)?;
    t.add_numeric("10NN_text", knn_text)?;
    t.add_numeric("hard_to_interpret", hard)?;
    t.add_text("caption", captions)?;
    t.add_text(
        "caption_valid",
        valid
            .iter()
            .map(|v| {
                v.map(|v| match v {
                    Validation::Correct => "correct".to_string(),
                    Validation::Incorrect => "incorrect".to_string(),
                })
            })
            .collect(),
    )?;
    t.add_text("categories", text(&|r| r.categories.as_ref().map(|c| c.join("|"))))?;
    t.add_numeric("expert1", records.iter().map(|r| r.expert1).collect())?;
    t.add_numeric("expert2", records.iter().map(|r| r.expert2).collect())?;
    t.add_numeric("audra", records.iter().map(|r| r.audra).collect())?;
    t.add_numeric("osc", records.iter().map(|r| r.osc).collect())?;
    t.add_numeric("used_stim", records.iter().map(|r| r.used_stim).collect())?;
    t.add_numeric("expert", expert)?;
    t.add_numeric("automated", automated)?;

    let metadata = RunMetadata {
        code_version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config: cfg.clone(),
        n_drawings: n,
        n_failed: failures.len(),
        failures,
        target_thickness: prep.target_thickness,
        thickness_check: prep.thickness_check.clone(),
        expert_normalization: "mean of expert1 and expert2, min-max scaled over the observed corpus range".into(),
        notices,
        provider_warnings: providers.take_warnings(),
    };
    Ok(MetricsOutput {
        table: t,
        clustering,
        metadata,
    })
}

pub fn write_metrics(out: &MetricsOutput, out_dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir).map_err(CliError::io(out_dir))?;
    let path = out_dir.join(METRICS_FILE);
    let file = std::fs::File::create(&path).map_err(CliError::io(&path))?;
    out.table.write_csv(std::io::BufWriter::new(file))?;
    write_json(&out_dir.join(CLUSTERING_FILE), &out.clustering)?;
    write_json(&out_dir.join(METADATA_FILE), &out.metadata)
}

pub fn read_metrics(path: &Path) -> Result<MetricsTable, CliError> {
    let file = std::fs::File::open(path).map_err(CliError::io(path))?;
    Ok(MetricsTable::read_csv(std::io::BufReader::new(file), &TEXT_COLUMNS)?)
}

pub fn read_clustering(path: &Path) -> Result<Vec<GroupClustering>, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
