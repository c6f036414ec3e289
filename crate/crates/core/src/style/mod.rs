//! Style measures: ink density, ink inside the stimulus box, component
//! count and straight-line count.

mod hough;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hough::{count_merged, detect_segments, HoughParams, Segment};

use crate::content::EmbeddingVector;
use crate::raster::{label_components, skeletonize, BinaryRaster, BoundingBox, Connectivity};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StyleError {
    #[error("empty stimulus")]
    EmptyStimulus,
    #[error("no ink")]
    NoInk,
    #[error("bounding box does not fit the raster")]
    BoxOutOfFrame,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stimulus {
    G,
    I,
    R,
}

impl Stimulus {
    pub const ALL: [Stimulus; 3] = [Stimulus::G, Stimulus::I, Stimulus::R];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stimulus::G => "G",
            Stimulus::I => "I",
            Stimulus::R => "R",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "G" | "g" => Some(Stimulus::G),
            "I" | "i" => Some(Stimulus::I),
            "R" | "r" => Some(Stimulus::R),
            _ => None,
        }
    }
}

impl std::fmt::Display for Stimulus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Canonical base shape for one stimulus.
#[derive(Clone, Debug)]
pub struct StimulusSpec {
    pub shape: Stimulus,
    pub base: BinaryRaster,
    pub bbox: BoundingBox,
    pub embedding: Option<EmbeddingVector>,
}

impl StimulusSpec {
    pub fn new(shape: Stimulus, base: BinaryRaster) -> Result<Self, StyleError> {
        let bbox = stimulus_bbox(&base)?;
        Ok(Self {
            shape,
            base,
            bbox,
            embedding: None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StyleRow {
    pub drawing_id: String,
    pub ink_density: f64,
    /// `None` for drawings without ink.
    pub ink_inside_fraction: Option<f64>,
    pub n_components: usize,
    pub n_lines: usize,
}

/// Percentage of pixels that are ink.
pub fn ink_density(img: &BinaryRaster) -> f64 {
    100.0 * img.ink_count() as f64 / img.len() as f64
}

/// Extreme ink coordinates.
pub fn stimulus_bbox(base: &BinaryRaster) -> Result<BoundingBox, StyleError> {
    let mut it = base.ink_points();
    let (x, y) = it.next().ok_or(StyleError::EmptyStimulus)?;
    let mut b = BoundingBox {
        x_min: x,
        y_min: y,
        x_max: x,
        y_max: y,
    };
    for (x, y) in it {
        b.x_min = b.x_min.min(x);
        b.x_max = b.x_max.max(x);
        // raster order: y is non-decreasing
        b.y_max = y;
    }
    Ok(b)
}

/// Share of ink pixels inside `bbox` (inclusive).
pub fn ink_inside_fraction(img: &BinaryRaster, bbox: BoundingBox) -> Result<f64, StyleError> {
    if !bbox.fits_within(img.width(), img.height()) {
        return Err(StyleError::BoxOutOfFrame);
    }
    let (mut inside, mut total) = (0usize, 0usize);
    for (x, y) in img.ink_points() {
        total += 1;
        if bbox.contains(x, y) {
            inside += 1;
        }
    }
    if total == 0 {
        return Err(StyleError::NoInk);
    }
    Ok(inside as f64 / total as f64)
}

pub fn count_components(img: &BinaryRaster, connectivity: Connectivity) -> usize {
    label_components(img, connectivity).count()
}

/// Thins the drawing, detects segments and counts them after merging
/// near-duplicates.
pub fn count_lines(img: &BinaryRaster, params: &HoughParams) -> usize {
    if !img.has_ink() {
        return 0;
    }
    let skeleton = skeletonize(img);
    count_merged(&detect_segments(&skeleton, params), params)
}

/// All four measures for one preprocessed drawing.
pub fn style_row(
    drawing_id: &str,
    img: &BinaryRaster,
    stimulus_box: BoundingBox,
    connectivity: Connectivity,
    hough: &HoughParams,
) -> StyleRow {
    StyleRow {
        drawing_id: drawing_id.to_string(),
        ink_density: ink_density(img),
        ink_inside_fraction: ink_inside_fraction(img, stimulus_box).ok(),
        n_components: count_components(img, connectivity),
        n_lines: count_lines(img, hough),
    }
}
