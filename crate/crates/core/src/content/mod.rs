//! Content measures over image and caption embeddings, plus the
//! annotation-derived measures (conceptual diversity, flexibility sets).

mod cluster;
mod flexibility;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cluster::{hierarchical_cluster, Clustering, CutRule, Merge};
pub use flexibility::{build_flexibility_sets, FlexibilityCandidate, FlexibilitySet, FlexibilitySets, Owner};

use crate::style::StimulusSpec;

/// Neighbour count for the uniqueness measure.
pub const DEFAULT_K: usize = 10;

/// Caption marker for uninterpretable drawings (matched case-insensitively).
pub const HARD_TO_INTERPRET: &str = "hard to interpret";

#[derive(Debug, Error, PartialEq)]
pub enum ContentError {
    #[error("empty embedding")]
    EmptyVector,
    #[error("non-finite embedding value at index {0}")]
    NonFinite(usize),
    #[error("zero vector")]
    ZeroVector,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("embedding model mismatch: {0} vs {1}")]
    ModelMismatch(String, String),
    #[error("stimulus {0} has no embedding")]
    MissingStimulusEmbedding(String),
    #[error("corpus of {size} too small for k = {k} (need k + 1)")]
    CorpusTooSmall { size: usize, k: usize },
    #[error("unknown drawing id {0}")]
    UnknownId(String),
    #[error("empty input")]
    Empty,
    #[error("a drawing must have 1 to 3 categories, got {0}")]
    CategoryCount(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    Image,
    Text,
}

/// Dense, finite, non-zero embedding from a named model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    source: EmbeddingSource,
    model_id: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, source: EmbeddingSource, model_id: impl Into<String>) -> Result<Self, ContentError> {
        if values.is_empty() {
            return Err(ContentError::EmptyVector);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ContentError::NonFinite(i));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(ContentError::ZeroVector);
        }
        Ok(Self {
            values,
            source,
            model_id: model_id.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn source(&self) -> EmbeddingSource {
        self.source
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// 1 - cos(a, b), clamped to [0, 2].
pub fn cosine_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, ContentError> {
    if a.dim() != b.dim() {
        return Err(ContentError::DimensionMismatch(a.dim(), b.dim()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(ContentError::ZeroVector);
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((1.0 - dot / (na * nb)).clamp(0.0, 2.0))
}

/// Cosine distance from a drawing to its stimulus; both must come from the
/// same embedding model.
pub fn dist_from_stim(drawing: &EmbeddingVector, stim: &StimulusSpec) -> Result<f64, ContentError> {
    let s = stim
        .embedding
        .as_ref()
        .ok_or_else(|| ContentError::MissingStimulusEmbedding(stim.shape.to_string()))?;
    if s.model_id() != drawing.model_id() {
        return Err(ContentError::ModelMismatch(
            drawing.model_id().to_string(),
            s.model_id().to_string(),
        ));
    }
    cosine_distance(drawing, s)
}

/// Unit-normalised copy of the corpus plus ids, for repeated distance queries.
struct NormalizedCorpus<'a> {
    ids: Vec<&'a str>,
    unit: Vec<Vec<f64>>,
}

impl<'a> NormalizedCorpus<'a> {
    fn new(corpus: &'a [(String, EmbeddingVector)]) -> Result<Self, ContentError> {
        let dim = corpus.first().map_or(0, |(_, e)| e.dim());
        let model = corpus.first().map(|(_, e)| e.model_id());
        let mut unit = Vec::with_capacity(corpus.len());
        for (_, e) in corpus {
            if e.dim() != dim {
                return Err(ContentError::DimensionMismatch(dim, e.dim()));
            }
            if Some(e.model_id()) != model {
                return Err(ContentError::ModelMismatch(
                    model.unwrap_or_default().to_string(),
                    e.model_id().to_string(),
                ));
            }
            let n = e.norm();
            unit.push(e.values.iter().map(|v| v / n).collect());
        }
        Ok(Self {
            ids: corpus.iter().map(|(id, _)| id.as_str()).collect(),
            unit,
        })
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        let dot: f64 = self.unit[i].iter().zip(&self.unit[j]).map(|(a, b)| a * b).sum();
        (1.0 - dot).clamp(0.0, 2.0)
    }

    fn knn_mean(&self, query: usize, k: usize) -> f64 {
        let mut dists: Vec<(f64, &str)> = (0..self.unit.len())
            .filter(|&j| j != query)
            .map(|j| (self.distance(query, j), self.ids[j]))
            .collect();
        let cmp = |a: &(f64, &str), b: &(f64, &str)| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1));
        if k < dists.len() {
            dists.select_nth_unstable_by(k - 1, cmp);
        }
        dists[..k].iter().map(|d| d.0).sum::<f64>() / k as f64
    }
}

/// Mean cosine distance from `query_id` to its `k` nearest other members of
/// `corpus`; equal distances are ordered by drawing id.
pub fn knn_uniqueness(query_id: &str, corpus: &[(String, EmbeddingVector)], k: usize) -> Result<f64, ContentError> {
    if k == 0 || corpus.len() < k + 1 {
        return Err(ContentError::CorpusTooSmall { size: corpus.len(), k });
    }
    let query = corpus
        .iter()
        .position(|(id, _)| id == query_id)
        .ok_or_else(|| ContentError::UnknownId(query_id.to_string()))?;
    Ok(NormalizedCorpus::new(corpus)?.knn_mean(query, k))
}

/// [`knn_uniqueness`] for every member, in corpus order.
pub fn knn_uniqueness_all(corpus: &[(String, EmbeddingVector)], k: usize) -> Result<Vec<f64>, ContentError> {
    if k == 0 || corpus.len() < k + 1 {
        return Err(ContentError::CorpusTooSmall { size: corpus.len(), k });
    }
    let norm = NormalizedCorpus::new(corpus)?;
    Ok((0..corpus.len()).into_par_iter().map(|i| norm.knn_mean(i, k)).collect())
}

/// Expert concept categories for one drawing, most salient first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryAnnotation {
    pub drawing_id: String,
    pub categories: Vec<String>,
}

impl CategoryAnnotation {
    pub fn new(drawing_id: impl Into<String>, categories: Vec<String>) -> Result<Self, ContentError> {
        if !(1..=3).contains(&categories.len()) {
            return Err(ContentError::CategoryCount(categories.len()));
        }
        Ok(Self {
            drawing_id: drawing_id.into(),
            categories,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Validation {
    Correct,
    Incorrect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub drawing_id: String,
    pub text: String,
    pub hard_to_interpret: bool,
    pub validated: Option<Validation>,
}

impl CaptionRecord {
    pub fn new(drawing_id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            drawing_id: drawing_id.into(),
            hard_to_interpret: is_hard_to_interpret(&text),
            text,
            validated: None,
        }
    }
}

pub fn is_hard_to_interpret(caption: &str) -> bool {
    caption.to_lowercase().contains(HARD_TO_INTERPRET)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diversity {
    pub vocabulary: usize,
    /// Share of the vocabulary used by each group.
    pub by_group: BTreeMap<String, f64>,
}

/// Unique categories used by each group over unique categories overall.
/// Drawings without a group mapping are ignored.
pub fn conceptual_diversity<F>(annotations: &[CategoryAnnotation], group_of: F) -> Diversity
where
    F: Fn(&str) -> Option<String>,
{
    let mut all = BTreeSet::new();
    let mut per_group: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
    for a in annotations {
        let Some(group) = group_of(&a.drawing_id) else {
            continue;
        };
        let set = per_group.entry(group).or_default();
        for c in &a.categories {
            all.insert(c.as_str());
            set.insert(c.as_str());
        }
    }
    let vocabulary = all.len();
    let by_group = per_group
        .into_iter()
        .map(|(g, s)| (g, if vocabulary == 0 { 0.0 } else { s.len() as f64 / vocabulary as f64 }))
        .collect();
    Diversity { vocabulary, by_group }
}
