//! Saliency-map generation stage: GP mask sampling plus the Monte Carlo
//! expected mask, for every (trial, class) pair of a corpus.
//!
//! Output: `saliency/<trial>.<truth|foil>.fgrid` in the corpus directory,
//! each with a `.json` sidecar recording provenance. Reruns with the same
//! seed are byte-identical, and the worker count never changes results:
//! each sample is drawn from its own counter-derived stream and accumulated
//! in index order.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use xlab_core::rng;
use xlab_core::study::TrialSpec;
use xlab_core::teaching::{expected_mask, GpConfig, GpSampler, TeachingError};
use xlab_core::{ClassRole, FloatGrid, SaliencyMap};

use thiserror::Error;

use crate::classifier::{ClassifierError, ExternalClassifier};
use crate::config::{ClassifierKind, RunConfig};
use crate::corpus::{CorpusLayout, LoadedStudy};
use crate::fgrid;

const SALT_TEACH: u64 = 101;

#[derive(Debug, Error)]
pub enum TeachError {
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Grid(#[from] crate::fgrid::FgridError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &std::path::Path, source: std::io::Error) -> TeachError {
    TeachError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Samples a mask set in parallel. Bit-identical to the serial sampler for
/// any worker count: sample `i` depends only on (config, i).
pub fn sample_masks_parallel(config: &GpConfig) -> Result<Vec<SaliencyMap>, TeachingError> {
    let sampler = GpSampler::new(config.clone())?;
    Ok((0..config.n_samples)
        .into_par_iter()
        .map(|i| sampler.mask(i))
        .collect())
}

/// Sidecar provenance written next to each generated map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeachSidecar {
    pub trial_id: String,
    pub class: String,
    pub n_samples: usize,
    pub seed: u64,
    pub config_hash: String,
}

/// Inputs that determine teach-stage output, hashed into the sidecar.
#[derive(Serialize)]
struct ProvenanceKey<'a> {
    gp: &'a GpConfig,
    classifier_kind: &'a str,
    temperature: f64,
    command: &'a str,
    args: &'a [String],
}

fn config_hash(key: &ProvenanceKey) -> String {
    let bytes = serde_json::to_vec(key).expect("provenance serializes");
    let digest = Sha256::digest(&bytes);
    format!("{digest:x}")
}

#[derive(Debug, Serialize)]
pub struct TeachFailure {
    pub trial_id: String,
    pub error: String,
}

#[derive(Debug)]
pub struct TeachOutcome {
    /// Files written (relative to the corpus root), in sorted order.
    pub written: Vec<PathBuf>,
    pub failures: Vec<TeachFailure>,
}

fn gp_config_for(cfg: &RunConfig, image: &FloatGrid, trial_index: usize) -> GpConfig {
    let auto = GpConfig::for_grid(
        image.width(),
        image.height(),
        rng::derive_seed(cfg.seed, &[SALT_TEACH, trial_index as u64]),
    );
    GpConfig {
        mean: cfg.gp.mean,
        marginal_std: cfg.gp.marginal_std,
        length_scale: if cfg.gp.length_scale > 0.0 {
            cfg.gp.length_scale
        } else {
            auto.length_scale
        },
        n_samples: cfg.gp.n_samples,
        jitter: cfg.gp.jitter,
        ..auto
    }
}

type TrialProduct = Vec<(PathBuf, String, TeachSidecar)>;

fn teach_one_trial(
    cfg: &RunConfig,
    layout: &CorpusLayout,
    trial: &TrialSpec,
    trial_index: usize,
    image: &FloatGrid,
    templates: Option<&BTreeMap<String, FloatGrid>>,
) -> Result<TrialProduct, String> {
    let gp = gp_config_for(cfg, image, trial_index);
    let masks = sample_masks_parallel(&gp).map_err(|e| e.to_string())?;
    let classes = [trial.truth_class.as_str(), trial.foil_class.as_str()];

    let mut classifier: Box<dyn xlab_core::teaching::Classifier> = match cfg.classifier.kind {
        ClassifierKind::Builtin => {
            let templates = templates.expect("builtin templates loaded");
            let mut subset = BTreeMap::new();
            for class in classes {
                let grid = templates
                    .get(class)
                    .ok_or_else(|| format!("no template for class {class:?}"))?;
                subset.insert(class.to_string(), grid.clone());
            }
            Box::new(
                xlab_core::teaching::BuiltinClassifier::new(subset, cfg.classifier.temperature)
                    .map_err(|e| e.to_string())?,
            )
        }
        ClassifierKind::External => Box::new(
            ExternalClassifier::spawn(
                &cfg.classifier.command,
                &cfg.classifier.args,
                Duration::from_secs(cfg.classifier.timeout_secs),
            )
            .map_err(|e| e.to_string())?,
        ),
    };

    let hash = config_hash(&ProvenanceKey {
        gp: &gp,
        classifier_kind: match cfg.classifier.kind {
            ClassifierKind::Builtin => "builtin",
            ClassifierKind::External => "external",
        },
        temperature: cfg.classifier.temperature,
        command: &cfg.classifier.command,
        args: &cfg.classifier.args,
    });

    let mut products = Vec::with_capacity(2);
    for role in [ClassRole::Truth, ClassRole::Foil] {
        let target = trial.class_label(role);
        let map = expected_mask(image, &classes, target, &masks, classifier.as_mut())
            .map_err(|e| e.to_string())?;
        let text = fgrid::encode_grid(map.grid()).map_err(|e| e.to_string())?;
        let path = layout.saliency_path(&trial.trial_id, role);
        let sidecar = TeachSidecar {
            trial_id: trial.trial_id.clone(),
            class: target.to_string(),
            n_samples: gp.n_samples,
            seed: gp.seed,
            config_hash: hash.clone(),
        };
        products.push((path, text, sidecar));
    }
    Ok(products)
}

/// Generates both classes' expected saliency maps for every trial.
///
/// Builtin classification runs trials in parallel; the external protocol is
/// serial (one child, one in-flight request). Failures don't abort other
/// trials — they are collected into the outcome.
pub fn run_teach(cfg: &RunConfig, study: &LoadedStudy) -> Result<TeachOutcome, TeachError> {
    let layout = CorpusLayout::new(&cfg.paths.corpus);

    let templates: Option<BTreeMap<String, FloatGrid>> = match cfg.classifier.kind {
        ClassifierKind::Builtin => {
            let mut classes = std::collections::BTreeSet::new();
            for t in study.corpus.trials() {
                classes.insert(t.truth_class.clone());
                classes.insert(t.foil_class.clone());
            }
            let dir = cfg.paths.corpus.join(&cfg.classifier.templates_dir);
            let mut loaded = BTreeMap::new();
            for class in classes {
                let path = dir.join(format!("{class}.fgrid"));
                if !path.exists() {
                    return Err(ClassifierError::MissingTemplate {
                        class,
                        path: path.display().to_string(),
                    }
                    .into());
                }
                let grid = fgrid::read_grid(&path)?;
                loaded.insert(class, grid);
            }
            Some(loaded)
        }
        ClassifierKind::External => None,
    };

    let jobs: Vec<(usize, &TrialSpec)> = study.corpus.trials().iter().enumerate().collect();
    let run_one = |(i, trial): &(usize, &TrialSpec)| -> (String, Result<TrialProduct, String>) {
        let image = &study.images[&trial.trial_id];
        (
            trial.trial_id.clone(),
            teach_one_trial(cfg, &layout, trial, *i, image, templates.as_ref()),
        )
    };
    let results: Vec<(String, Result<TrialProduct, String>)> =
        if cfg.classifier.kind == ClassifierKind::Builtin {
            jobs.par_iter().map(run_one).collect()
        } else {
            jobs.iter().map(run_one).collect()
        };

    let mut written = Vec::new();
    let mut failures = Vec::new();
    for (trial_id, result) in results {
        match result {
            Ok(products) => {
                for (path, text, sidecar) in products {
                    let parent = path.parent().unwrap();
                    std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
                    std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
                    let sidecar_path = path.with_extension("json");
                    let body = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
                    std::fs::write(&sidecar_path, body + "\n")
                        .map_err(|e| io_err(&sidecar_path, e))?;
                    written.push(path);
                    written.push(sidecar_path);
                }
            }
            Err(error) => failures.push(TeachFailure { trial_id, error }),
        }
    }
    written.sort();
    Ok(TeachOutcome { written, failures })
}

/// Convenience used by tests: hash of the provenance key for a builtin run.
pub fn builtin_config_hash(cfg: &RunConfig, gp: &GpConfig) -> String {
    config_hash(&ProvenanceKey {
        gp,
        classifier_kind: "builtin",
        temperature: cfg.classifier.temperature,
        command: "",
        args: &[],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_sampler_matches_serial() {
        let config = GpConfig {
            n_samples: 16,
            ..GpConfig::for_grid(6, 5, 42)
        };
        let serial = xlab_core::teaching::sample_masks(config.clone()).unwrap();
        let parallel = sample_masks_parallel(&config).unwrap();
        assert_eq!(serial.len(), parallel.len());
        for (a, b) in serial.iter().zip(&parallel) {
            for (x, y) in a.grid().values().iter().zip(b.grid().values()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn config_hash_tracks_inputs() {
        let cfg = RunConfig::default();
        let gp = GpConfig::for_grid(4, 4, 1);
        let h1 = builtin_config_hash(&cfg, &gp);
        let h2 = builtin_config_hash(&cfg, &GpConfig { seed: 2, ..gp.clone() });
        assert_ne!(h1, h2);
        assert_eq!(h1, builtin_config_hash(&cfg, &gp));
        assert_eq!(h1.len(), 64);
    }
}
