//! Run configuration: a TOML file plus command-line overrides.
//!
//! Every key can be overridden with `--set section.key=value`; a handful of
//! hot keys also have dedicated flags. The fully resolved config is embedded
//! in emitted reports (minus `threads`, which never affects results).

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use xlab_core::aggregation::{ExclusionMode, RtThresholds};
use xlab_core::calibration::FitOptions;
use xlab_core::explainee::Variant;

use crate::synth::SynthConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("override {key:?}: {message}")]
    Override { key: String, message: String },
    #[error("config invalid: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Corpus directory (conventional layout; see the corpus module).
    pub corpus: PathBuf,
    /// Output directory for stage artifacts and reports.
    pub output: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus"),
            output: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpSection {
    pub n_samples: usize,
    pub mean: f64,
    pub marginal_std: f64,
    /// RBF length scale in pixels; 0 means "scale with the grid"
    /// (0.1 x mean grid side).
    pub length_scale: f64,
    pub jitter: f64,
}

impl Default for GpSection {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            mean: -100.0,
            marginal_std: 100.0,
            length_scale: 0.0,
            jitter: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Builtin,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub kind: ClassifierKind,
    /// Builtin: softmax temperature.
    pub temperature: f64,
    /// Builtin: directory of `<class>.fgrid` templates, relative to the
    /// corpus directory.
    pub templates_dir: String,
    /// External: command to spawn.
    pub command: String,
    pub args: Vec<String>,
    pub timeout_secs: u64,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        Self {
            kind: ClassifierKind::Builtin,
            temperature: 1.0,
            templates_dir: "templates".to_string(),
            command: String::new(),
            args: Vec::new(),
            timeout_secs: crate::classifier::DEFAULT_TIMEOUT_SECS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExclusionSection {
    pub threshold: f64,
    pub mode: ExclusionMode,
}

impl Default for ExclusionSection {
    fn default() -> Self {
        Self {
            threshold: 1.5,
            mode: ExclusionMode::Participant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmpiricalSource {
    /// Explanation-condition response proportions (the measured behavior).
    Responses,
    /// `empirical_exact.csv` written by the noise-free generator.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Variants to fit and compare. The full model is always run.
    pub variants: Vec<String>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub coarse_points: usize,
    pub rel_tol: f64,
    pub audit_points: usize,
    /// Clamp prior proportions away from {0,1} by half a count.
    pub clamp_priors: bool,
    pub empirical_source: EmpiricalSource,
}

impl Default for ModelSection {
    fn default() -> Self {
        let fit = FitOptions::default();
        Self {
            variants: Variant::ALL.iter().map(|v| v.as_str().to_string()).collect(),
            lambda_min: fit.lambda_min,
            lambda_max: fit.lambda_max,
            coarse_points: fit.coarse_points,
            rel_tol: fit.rel_tol,
            audit_points: fit.audit_points,
            clamp_priors: false,
            empirical_source: EmpiricalSource::Responses,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RtSection {
    pub control_seconds: f64,
    pub explanation_seconds: f64,
}

impl Default for RtSection {
    fn default() -> Self {
        let t = RtThresholds::default();
        Self {
            control_seconds: t.control_seconds,
            explanation_seconds: t.explanation_seconds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSection {
    pub n_boot: usize,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        Self { n_boot: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker cap for within-stage parallelism; 0 = library default. Never
    /// affects results, and is omitted from report embeds.
    pub threads: usize,
    pub paths: PathsConfig,
    pub synth: SynthConfig,
    pub gp: GpSection,
    pub classifier: ClassifierSection,
    pub exclusion: ExclusionSection,
    pub rt_filter: RtSection,
    pub model: ModelSection,
    pub bootstrap: BootstrapSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            paths: PathsConfig::default(),
            synth: SynthConfig::default(),
            gp: GpSection::default(),
            classifier: ClassifierSection::default(),
            exclusion: ExclusionSection::default(),
            rt_filter: RtSection::default(),
            model: ModelSection::default(),
            bootstrap: BootstrapSection::default(),
        }
    }
}

impl RunConfig {
    /// Loads a TOML file (or defaults when `path` is None) and applies
    /// `key=value` overrides, in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.display().to_string(),
                    source,
                })?;
                text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
                    path: p.display().to_string(),
                    message: e.to_string(),
                })?
            }
            None => toml::Table::new(),
        };
        for entry in overrides {
            apply_override(&mut table, entry)?;
        }
        let cfg: RunConfig =
            toml::Value::Table(table)
                .try_into()
                .map_err(|e: toml::de::Error| ConfigError::Parse {
                    path: path.map_or_else(|| "<defaults>".to_string(), |p| p.display().to_string()),
                    message: e.to_string(),
                })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.synth
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.exclusion.threshold > 0.0) {
            return bad("exclusion.threshold must be positive".into());
        }
        if !(self.rt_filter.control_seconds >= 0.0) || !(self.rt_filter.explanation_seconds >= 0.0)
        {
            return bad("rt_filter thresholds must be nonnegative".into());
        }
        if self.bootstrap.n_boot == 0 {
            return bad("bootstrap.n_boot must be at least 1".into());
        }
        if !(self.classifier.temperature > 0.0) {
            return bad("classifier.temperature must be positive".into());
        }
        if self.classifier.kind == ClassifierKind::External && self.classifier.command.is_empty() {
            return bad("classifier.kind = external requires classifier.command".into());
        }
        if self.gp.n_samples == 0 {
            return bad("gp.n_samples must be at least 1".into());
        }
        if !(self.gp.marginal_std > 0.0) {
            return bad("gp.marginal_std must be positive".into());
        }
        if self.gp.length_scale < 0.0 {
            return bad("gp.length_scale must be nonnegative (0 = auto)".into());
        }
        self.fit_options()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.variants()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Variants to run, always including the full model, de-duplicated in
    /// declaration order of [`Variant::ALL`].
    pub fn variants(&self) -> Result<Vec<Variant>, ConfigError> {
        let mut requested = BTreeSet::new();
        requested.insert(Variant::Full.as_str().to_string());
        for name in &self.model.variants {
            if Variant::parse(name).is_none() {
                return Err(ConfigError::Invalid(format!(
                    "unknown model variant {name:?} (expected one of full, prior_only, l1, beta)"
                )));
            }
            requested.insert(name.clone());
        }
        Ok(Variant::ALL
            .into_iter()
            .filter(|v| requested.contains(v.as_str()))
            .collect())
    }

    pub fn fit_options(&self) -> Result<FitOptions, ConfigError> {
        let options = FitOptions {
            lambda_min: self.model.lambda_min,
            lambda_max: self.model.lambda_max,
            coarse_points: self.model.coarse_points,
            rel_tol: self.model.rel_tol,
            audit_points: self.model.audit_points,
        };
        options
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(options)
    }

    pub fn rt_thresholds(&self) -> RtThresholds {
        RtThresholds {
            control_seconds: self.rt_filter.control_seconds,
            explanation_seconds: self.rt_filter.explanation_seconds,
        }
    }

    /// Resolved-config embed for reports: full precision, with run-location
    /// settings (`threads`, `paths`) removed so report bytes depend only on
    /// the scientific configuration.
    pub fn report_embed(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("threads");
            map.remove("paths");
        }
        value
    }
}

/// Applies one `dotted.key=value` override to the TOML tree. Values parse
/// as TOML (so strings need no quotes unless they contain punctuation).
fn apply_override(table: &mut toml::Table, entry: &str) -> Result<(), ConfigError> {
    let err = |message: &str| ConfigError::Override {
        key: entry.to_string(),
        message: message.to_string(),
    };
    let (key, raw_value) = entry.split_once('=').ok_or_else(|| err("missing '='"))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(err("empty key"));
    }
    let raw_value = raw_value.trim();
    let value = parse_toml_value(raw_value);

    let mut node = table;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let slot = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = slot
            .as_table_mut()
            .ok_or_else(|| err("intermediate key is not a table"))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_toml_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key v present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = RunConfig::load(None, &[]).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.exclusion.threshold, 1.5);
        assert_eq!(cfg.variants().unwrap(), Variant::ALL.to_vec());
    }

    #[test]
    fn file_and_overrides_compose() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        fs::write(
            &path,
            "seed = 7\n[exclusion]\nthreshold = 1.2\n[model]\nvariants = [\"full\", \"l1\"]\n",
        )
        .unwrap();
        let cfg = RunConfig::load(
            Some(&path),
            &[
                "exclusion.threshold=2.0".to_string(),
                "paths.output=elsewhere".to_string(),
                "model.empirical_source=exact".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.exclusion.threshold, 2.0);
        assert_eq!(cfg.paths.output, PathBuf::from("elsewhere"));
        assert_eq!(cfg.model.empirical_source, EmpiricalSource::Exact);
        assert_eq!(cfg.variants().unwrap(), vec![Variant::Full, Variant::L1]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        fs::write(&path, "sede = 7\n").unwrap();
        assert!(matches!(
            RunConfig::load(Some(&path), &[]).unwrap_err(),
            ConfigError::Parse { .. }
        ));
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::load(None, &["exclusion.threshold=0".to_string()]).is_err());
        assert!(RunConfig::load(None, &["synth.n_trials=0".to_string()]).is_err());
        assert!(RunConfig::load(None, &["model.variants=[\"bogus\"]".to_string()]).is_err());
        assert!(RunConfig::load(None, &["nonsense".to_string()]).is_err());
    }

    #[test]
    fn report_embed_omits_run_location_settings() {
        let cfg = RunConfig::default();
        let embed = cfg.report_embed();
        assert!(embed.get("threads").is_none());
        assert!(embed.get("paths").is_none());
        assert!(embed.get("seed").is_some());
    }

    #[test]
    fn string_overrides_need_no_quotes() {
        let cfg = RunConfig::load(None, &["classifier.templates_dir=tmpl".to_string()]).unwrap();
        assert_eq!(cfg.classifier.templates_dir, "tmpl");
    }
}
