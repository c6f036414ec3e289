//! TOML run configuration.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Command-line flags override `seed`, `cache_dir`, `out_dir` and
//! `offline`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use creadraw_core::content::CutRule;
use creadraw_core::raster::ThresholdMode;
use creadraw_core::style::HoughParams;
use creadraw_providers::ProviderConfig;

use crate::manifest::Group;
use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub seed: u64,
    pub offline: bool,
    /// Worker threads for per-drawing stages; 0 picks the core count.
    pub workers: usize,
    /// Largest share of drawings (percent) allowed to fail before the run fails.
    pub max_failure_percent: f64,
    pub preprocess: PreprocessConfig,
    pub stimuli: StimuliConfig,
    pub style: StyleConfig,
    pub content: ContentConfig,
    pub providers: ProvidersConfig,
    pub analysis: AnalysisConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.csv"),
            out_dir: PathBuf::from("out"),
            cache_dir: PathBuf::from("cache"),
            seed: 0,
            offline: false,
            workers: 0,
            max_failure_percent: 1.0,
            preprocess: PreprocessConfig::default(),
            stimuli: StimuliConfig::default(),
            style: StyleConfig::default(),
            content: ContentConfig::default(),
            providers: ProvidersConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub threshold: ThresholdMode,
    pub min_speck_area: usize,
    /// Stroke width the dilated groups are brought to. When unset, the
    /// median thickness of `reference_group` is used.
    pub target_thickness: Option<f64>,
    pub thickness_tol: f64,
    pub reference_group: Group,
    pub dilate_groups: Vec<Group>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            threshold: ThresholdMode::Otsu,
            min_speck_area: 5,
            target_thickness: None,
            thickness_tol: 0.5,
            reference_group: Group::Adult,
            dilate_groups: vec![Group::Child, Group::Ai],
        }
    }
}

/// Base shape images per stimulus.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StimuliConfig {
    #[serde(rename = "G")]
    pub g: Option<PathBuf>,
    #[serde(rename = "I")]
    pub i: Option<PathBuf>,
    #[serde(rename = "R")]
    pub r: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StyleConfig {
    pub connectivity: u8,
    pub hough: HoughParams,
}

impl Default for StyleConfig {
    fn default() -> Self {
        Self {
            connectivity: 8,
            hough: HoughParams::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterSource {
    Text,
    Image,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContentConfig {
    pub k: usize,
    pub cut: CutRule,
    pub cluster_source: ClusterSource,
}

impl Default for ContentConfig {
    fn default() -> Self {
        Self {
            k: creadraw_core::content::DEFAULT_K,
            cut: CutRule::Distance(0.5),
            cluster_source: ClusterSource::Text,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub image: Option<ProviderConfig>,
    pub text: Option<ProviderConfig>,
    pub caption: Option<ProviderConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    GroupCompare,
    Agreement,
    Models,
    Diversity,
    Flexibility,
}

impl Analysis {
    pub const ALL: [Analysis; 5] = [
        Analysis::GroupCompare,
        Analysis::Agreement,
        Analysis::Models,
        Analysis::Diversity,
        Analysis::Flexibility,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub analyses: Vec<Analysis>,
    /// Columns compared across subgroups.
    pub compare_columns: Vec<String>,
    /// Candidate formulas; ranked by BIC per response and cross-validated.
    pub models: Vec<String>,
    pub cv_folds: usize,
    pub stratify_by: String,
    pub combined_predictors: Vec<String>,
    pub combined_responses: Vec<String>,
    pub combined_random_intercept: Option<String>,
    /// CSV with columns `set_id`, `rater1`, `rater2`.
    pub flexibility_scores: Option<PathBuf>,
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            analyses: Analysis::ALL.to_vec(),
            compare_columns: strings(&[
                "ink_density",
                "ink_inside_fraction",
                "n_components",
                "n_lines",
                "dist_from_stim",
                "10NN_image",
                "10NN_text",
                "expert",
                "automated",
            ]),
            models: strings(&[
                "expert ~ (used_stim + hard_to_interpret) * (10NN_text + dist_from_stim) + (1|subgroup)",
                "expert ~ used_stim + hard_to_interpret + 10NN_text + dist_from_stim + (1|subgroup)",
                "automated ~ ink_density + dist_from_stim + 10NN_image + (1|subgroup)",
                "automated ~ ink_density + 10NN_image + (1|subgroup)",
            ]),
            cv_folds: 3,
            stratify_by: "subgroup".into(),
            combined_predictors: strings(&[
                "used_stim",
                "hard_to_interpret",
                "10NN_text",
                "dist_from_stim",
                "ink_density",
                "10NN_image",
            ]),
            combined_responses: strings(&["expert", "automated"]),
            combined_random_intercept: Some("subgroup".into()),
            flexibility_scores: None,
        }
    }
}

/// Flag overrides from the command line.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub cache_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub offline: bool,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Config = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, resolves relative paths against its directory and
    /// applies `overrides`.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.apply(overrides);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(c) = &o.cache_dir {
            self.cache_dir = c.clone();
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        self.offline |= o.offline;
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.manifest);
        fix(&mut self.out_dir);
        fix(&mut self.cache_dir);
        for p in [&mut self.stimuli.g, &mut self.stimuli.i, &mut self.stimuli.r].into_iter().flatten() {
            fix(p);
        }
        if let Some(p) = &mut self.analysis.flexibility_scores {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(0.0..=100.0).contains(&self.max_failure_percent) {
            return bad(format!("max_failure_percent must be in [0, 100], got {}", self.max_failure_percent));
        }
        if self.preprocess.min_speck_area == 0 {
            return bad("preprocess.min_speck_area must be at least 1".into());
        }
        if !(self.preprocess.thickness_tol >= 0.0) {
            return bad("preprocess.thickness_tol must be non-negative".into());
        }
        if let Some(t) = self.preprocess.target_thickness {
            if !(t > 0.0) {
                return bad(format!("preprocess.target_thickness must be positive, got {t}"));
            }
        }
        if !matches!(self.style.connectivity, 4 | 8) {
            return bad(format!("style.connectivity must be 4 or 8, got {}", self.style.connectivity));
        }
        if self.content.k == 0 {
            return bad("content.k must be at least 1".into());
        }
        if self.analysis.cv_folds < 2 {
            return bad("analysis.cv_folds must be at least 2".into());
        }
        for (name, p) in [
            ("image", &self.providers.image),
            ("text", &self.providers.text),
            ("caption", &self.providers.caption),
        ] {
            if let Some(p) = p {
                p.validate().map_err(|e| CliError::Config(format!("providers.{name}: {e}")))?;
            }
        }
        for f in &self.analysis.models {
            creadraw_core::modeling::parse_formula(f).map_err(|e| CliError::Config(format!("model {f:?}: {e}")))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
    }

    #[test]
    fn nested_keys_parse() {
        let cfg = Config::from_toml(
            r#"
            seed = 7
            [preprocess]
            threshold = { fixed = 100 }
            target_thickness = 3.0
            [style.hough]
            threshold = 40
            [content]
            cut = { n_clusters = 5 }
            [providers.image]
            endpoint = "http://localhost:1/v1"
            model_id = "clip"
            batch_size = 10
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.preprocess.threshold, ThresholdMode::Fixed(100));
        assert_eq!(cfg.style.hough.threshold, 40);
        assert_eq!(cfg.style.hough.min_length, 30.0);
        assert_eq!(cfg.content.cut, CutRule::NClusters(5));
        assert_eq!(cfg.providers.image.unwrap().batch_size, 10);
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            "unknown_key = 1",
            "[style]\nconnectivity = 6",
            "[analysis]\ncv_folds = 1",
            "[analysis]\nmodels = [\"y ~ a -\"]",
            "[providers.text]\nmodel_id = \"m\"\nbatch_size = 0",
        ] {
            assert!(matches!(Config::from_toml(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn paths_resolve_and_flags_override() {
        let mut cfg = Config::from_toml("manifest = \"data/m.csv\"\ncache_dir = \"/abs/cache\"").unwrap();
        cfg.resolve_paths(Path::new("/proj"));
        cfg.apply(&Overrides {
            seed: Some(42),
            offline: true,
            ..Overrides::default()
        });
        assert_eq!(cfg.manifest, PathBuf::from("/proj/data/m.csv"));
        assert_eq!(cfg.cache_dir, PathBuf::from("/abs/cache"));
        assert_eq!(cfg.seed, 42);
        assert!(cfg.offline);
    }
}
