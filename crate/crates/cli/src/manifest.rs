//! Drawing manifest: one CSV row per drawing.
//!
//! Required columns: `drawing_id, group, subgroup, participant_id, stimulus,
//! image_path`. Optional: `inverted, caption, caption_valid, categories,
//! expert1, expert2, audra, osc, used_stim, flex_context`. Empty cells are
//! missing values; `categories` holds 1 to 3 labels separated by `|`.
//! Image paths are relative to the manifest's directory.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use creadraw_core::content::Validation;
use creadraw_core::style::Stimulus;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Child,
    Adult,
    Ai,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Child, Group::Adult, Group::Ai];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Child => "child",
            Group::Adult => "adult",
            Group::Ai => "ai",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Group::ALL
            .into_iter()
            .find(|g| g.as_str() == s.trim())
            .ok_or_else(|| format!("unknown group {s:?} (expected child, adult or ai)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subgroup {
    PreSchematic,
    Schematic,
    Adult,
    Prompt1,
    Prompt2,
    Prompt3,
}

impl Subgroup {
    pub const ALL: [Subgroup; 6] = [
        Subgroup::PreSchematic,
        Subgroup::Schematic,
        Subgroup::Adult,
        Subgroup::Prompt1,
        Subgroup::Prompt2,
        Subgroup::Prompt3,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Subgroup::PreSchematic => "pre_schematic",
            Subgroup::Schematic => "schematic",
            Subgroup::Adult => "adult",
            Subgroup::Prompt1 => "prompt1",
            Subgroup::Prompt2 => "prompt2",
            Subgroup::Prompt3 => "prompt3",
        }
    }

    pub fn group(self) -> Group {
        match self {
            Subgroup::PreSchematic | Subgroup::Schematic => Group::Child,
            Subgroup::Adult => Group::Adult,
            _ => Group::Ai,
        }
    }
}

impl fmt::Display for Subgroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subgroup {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Subgroup::ALL
            .into_iter()
            .find(|g| g.as_str() == s.trim())
            .ok_or_else(|| format!("unknown subgroup {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DrawingRecord {
    pub drawing_id: String,
    pub group: Group,
    pub subgroup: Subgroup,
    /// Participant id for humans, sample id for AI drawings.
    pub participant_id: String,
    pub stimulus: Stimulus,
    pub inverted: bool,
    pub image_path: PathBuf,
    pub caption: Option<String>,
    pub caption_valid: Option<Validation>,
    pub categories: Option<Vec<String>>,
    pub expert1: Option<f64>,
    pub expert2: Option<f64>,
    pub audra: Option<f64>,
    pub osc: Option<f64>,
    pub used_stim: Option<f64>,
    pub flex_context: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowError {
    /// 1-based line in the file; the header is line 1.
    pub line: u64,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {}: {}", self.line, self.message)
    }
}

pub fn format_errors(errors: &[RowError]) -> String {
    errors.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n")
}

pub const REQUIRED_COLUMNS: [&str; 6] = ["drawing_id", "group", "subgroup", "participant_id", "stimulus", "image_path"];
pub const OPTIONAL_COLUMNS: [&str; 10] = [
    "inverted",
    "caption",
    "caption_valid",
    "categories",
    "expert1",
    "expert2",
    "audra",
    "osc",
    "used_stim",
    "flex_context",
];

/// Declared score ranges, inclusive.
pub const SCORE_RANGES: [(&str, f64, f64); 5] = [
    ("expert1", 0.0, 4.0),
    ("expert2", 0.0, 4.0),
    ("audra", 0.0, 1.0),
    ("osc", 0.0, 1.0),
    ("used_stim", 0.0, 2.0),
];

/// Outcome of parsing: the valid records and one error per rejected row.
#[derive(Debug, Default)]
pub struct ParsedManifest {
    pub records: Vec<DrawingRecord>,
    pub errors: Vec<RowError>,
}

/// Reads and validates the manifest at `path`; any invalid row rejects the
/// whole manifest.
pub fn ingest_manifest(path: &Path) -> Result<Vec<DrawingRecord>, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Config(format!("cannot open manifest {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let parsed = parse_manifest(file, base, true)?;
    if parsed.errors.is_empty() {
        Ok(parsed.records)
    } else {
        Err(CliError::Manifest(parsed.errors))
    }
}

/// Row-level validation. Header problems are returned as errors; row
/// problems are collected in [`ParsedManifest::errors`].
pub fn parse_manifest<R: std::io::Read>(reader: R, base: &Path, check_files: bool) -> Result<ParsedManifest, CliError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Config(format!("manifest header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut index = HashMap::new();
    for (i, h) in header.iter().enumerate() {
        if index.insert(h.as_str(), i).is_some() {
            return Err(CliError::Manifest(vec![RowError {
                line: 1,
                message: format!("duplicate column {h:?}"),
            }]));
        }
    }
    let missing: Vec<String> = REQUIRED_COLUMNS
        .iter()
        .filter(|c| !index.contains_key(*c))
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::MissingColumns {
            analysis: "manifest".into(),
            columns: missing,
        });
    }
    for h in &header {
        if !REQUIRED_COLUMNS.contains(&h.as_str()) && !OPTIONAL_COLUMNS.contains(&h.as_str()) {
            log::warn!("manifest: ignoring unknown column {h:?}");
        }
    }

    let mut out = ParsedManifest::default();
    let mut seen: HashMap<String, u64> = HashMap::new();
    for (n, row) in rdr.records().enumerate() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(n as u64 + 2);
                out.errors.push(RowError {
                    line,
                    message: format!("malformed row: {e}"),
                });
                continue;
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(n as u64 + 2);
        if row.len() != header.len() {
            out.errors.push(RowError {
                line,
                message: format!("malformed row: expected {} fields, got {}", header.len(), row.len()),
            });
            continue;
        }
        let cell = |name: &str| index.get(name).map(|&i| row[i].trim()).filter(|s| !s.is_empty());
        match parse_row(&cell, base, check_files) {
            Ok(rec) => {
                if let Some(first) = seen.get(&rec.drawing_id) {
                    out.errors.push(RowError {
                        line,
                        message: format!("duplicate drawing_id {:?} (first at row {first})", rec.drawing_id),
                    });
                } else {
                    seen.insert(rec.drawing_id.clone(), line);
                    out.records.push(rec);
                }
            }
            Err(message) => out.errors.push(RowError { line, message }),
        }
    }
    Ok(out)
}

fn parse_row<'a>(cell: &dyn Fn(&str) -> Option<&'a str>, base: &Path, check_files: bool) -> Result<DrawingRecord, String> {
    let required = |name: &str| cell(name).ok_or_else(|| format!("{name} is empty"));
    let drawing_id = required("drawing_id")?.to_string();
    let group: Group = required("group")?.parse()?;
    let subgroup: Subgroup = required("subgroup")?.parse()?;
    if subgroup.group() != group {
        return Err(format!("subgroup {subgroup} does not belong to group {group}"));
    }
    let participant_id = required("participant_id")?.to_string();
    let stimulus_cell = required("stimulus")?;
    let stimulus = Stimulus::parse(stimulus_cell).ok_or_else(|| format!("stimulus {stimulus_cell:?} is not G, I or R"))?;
    let inverted = match cell("inverted").map(str::to_ascii_lowercase).as_deref() {
        None | Some("0") | Some("false") | Some("no") => false,
        Some("1") | Some("true") | Some("yes") => true,
        Some(other) => return Err(format!("inverted {other:?} is not a boolean")),
    };
    let image_path = base.join(required("image_path")?);
    if check_files && !image_path.is_file() {
        return Err(format!("image file {} not found", image_path.display()));
    }
    let caption_valid = match cell("caption_valid").map(str::to_ascii_lowercase).as_deref() {
        None => None,
        Some("correct") => Some(Validation::Correct),
        Some("incorrect") => Some(Validation::Incorrect),
        Some(other) => return Err(format!("caption_valid {other:?} is not correct/incorrect")),
    };
    let categories = match cell("categories") {
        None => None,
        Some(c) => {
            let labels: Vec<String> = c.split('|').map(|s| s.trim().to_string()).collect();
            if labels.iter().any(String::is_empty) || !(1..=3).contains(&labels.len()) {
                return Err(format!("categories {c:?} must hold 1 to 3 non-empty labels"));
            }
            Some(labels)
        }
    };
    let mut scores = [None; 5];
    for (slot, (name, lo, hi)) in scores.iter_mut().zip(SCORE_RANGES) {
        if let Some(s) = cell(name) {
            let v: f64 = s.parse().map_err(|_| format!("{name} {s:?} is not a number"))?;
            if !(lo..=hi).contains(&v) {
                return Err(format!("{name} = {v} out of range [{lo}, {hi}]"));
            }
            *slot = Some(v);
        }
    }
    let [expert1, expert2, audra, osc, used_stim] = scores;
    Ok(DrawingRecord {
        drawing_id,
        group,
        subgroup,
        participant_id,
        stimulus,
        inverted,
        image_path,
        caption: cell("caption").map(str::to_string),
        caption_valid,
        categories,
        expert1,
        expert2,
        audra,
        osc,
        used_stim,
        flex_context: cell("flex_context").map(str::to_string),
    })
}
