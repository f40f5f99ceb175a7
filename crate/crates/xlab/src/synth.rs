//! Synthetic-study generator: corpora with known ground truth for oracle
//! tests, rate-recovery checks, and end-to-end pipeline rehearsal.
//!
//! Every random quantity draws from a stream derived from (seed, salt,
//! indices), so generation is deterministic and schedule-independent. The
//! generator computes each trial's posterior target against the same
//! consensus masks the analysis pipeline will reconstruct, which keeps the
//! study internally consistent: fitting the generated responses recovers
//! the generating rate as the response sample grows.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use xlab_core::aggregation::{self, ExclusionMode, ExclusionReport};
use xlab_core::explainee::{self, build_evidence, posterior};
use xlab_core::generalization::GeneralizationRate;
use xlab_core::grid::FloatGrid;
use xlab_core::rng::{self, next_standard_normal, next_unit_f64};
use xlab_core::similarity::scaled_similarity;
use xlab_core::special::reg_inc_beta;
use xlab_core::study::{MaskRecord, ResponseRecord, TrialSpec};
use xlab_core::teaching::{GpConfig, GpSampler};
use xlab_core::{ClassRole, Condition, ModelSpec, SaliencyMap, StudyCorpus};

use crate::corpus::{self, CorpusError, CorpusLayout};
use crate::fgrid;

const SALT_SHAPE: u64 = 1;
const SALT_MASK: u64 = 3;
const SALT_PRIOR: u64 = 4;
const SALT_CONTROL: u64 = 5;
const SALT_EXPLANATION: u64 = 6;
const SALT_OUTLIER: u64 = 7;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("synth config invalid: {0}")]
    BadConfig(String),
    #[error("trial {trial}: could not draw usable blob shapes in {attempts} attempts")]
    DegenerateShapes { trial: usize, attempts: usize },
    #[error("unknown participant {0}")]
    UnknownParticipant(String),
    #[error("generation failed: {0}")]
    Model(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Grid(#[from] fgrid::FgridError),
}

fn model_err(e: impl std::fmt::Display) -> SynthError {
    SynthError::Model(e.to_string())
}

/// A drawer whose masks are corrupted toward uniform noise at generation
/// time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierSpec {
    pub participant_id: String,
    /// 0 = untouched, 1 = pure uniform noise.
    pub severity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_trials: usize,
    pub n_control: usize,
    pub n_explanation: usize,
    pub n_drawers: usize,
    pub grid_w: usize,
    pub grid_h: usize,
    pub true_lambda: f64,
    /// Pseudo-count concentration of the Beta prior distribution.
    pub prior_concentration: f64,
    /// Mean of the Beta prior distribution (belief-projection strength).
    pub prior_mean: f64,
    pub seed: u64,
    /// Std of the additive Gaussian pixel noise on drawer masks.
    pub drawer_noise: f64,
    /// Exact priors (multiples of 1/n_control), exact response counts, and
    /// an `empirical_exact.csv` table of the generating posteriors.
    pub noise_free: bool,
    /// Fraction of trials on which the AI picks the foil.
    pub mistake_fraction: f64,
    /// Target sim(e, consensus_ai) - sim(e, consensus_other) on correct
    /// trials, and on mistake trials.
    pub gap_correct: f64,
    pub gap_mistake: f64,
    pub outliers: Vec<OutlierSpec>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_trials: 89,
            n_control: 41,
            n_explanation: 46,
            n_drawers: 10,
            grid_w: 16,
            grid_h: 16,
            true_lambda: 5.0,
            prior_concentration: 8.0,
            prior_mean: 0.73,
            seed: 0,
            drawer_noise: 0.05,
            noise_free: false,
            mistake_fraction: 0.25,
            gap_correct: 0.15,
            gap_mistake: 0.35,
            outliers: Vec::new(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::BadConfig(m.to_string()));
        if self.n_trials == 0 || self.n_control == 0 || self.n_explanation == 0 || self.n_drawers == 0
        {
            return bad("all counts must be at least 1");
        }
        if self.grid_w < 2 || self.grid_h < 2 {
            return bad("grid must be at least 2x2");
        }
        if !(self.true_lambda > 0.0) || !self.true_lambda.is_finite() {
            return bad("true_lambda must be positive");
        }
        if !(self.prior_concentration > 0.0) || !(self.prior_mean > 0.0 && self.prior_mean < 1.0) {
            return bad("prior_concentration must be positive and prior_mean in (0,1)");
        }
        if !(self.drawer_noise >= 0.0) {
            return bad("drawer_noise must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.mistake_fraction) {
            return bad("mistake_fraction must lie in [0,1]");
        }
        if !(self.gap_correct >= 0.0) || !(self.gap_mistake >= 0.0) {
            return bad("similarity gaps must be nonnegative");
        }
        for o in &self.outliers {
            if !(0.0..=1.0).contains(&o.severity) {
                return bad("outlier severity must lie in [0,1]");
            }
        }
        Ok(())
    }
}

/// Ground truth recorded alongside a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub true_lambda: f64,
    pub seed: u64,
    pub trials: Vec<TrialTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTruth {
    pub trial_id: String,
    pub ai_class: String,
    pub ai_correct: bool,
    /// Prior used for response generation (rounded in noise-free mode).
    pub prior_truth: f64,
    /// Similarities of the observed map to the clean consensus masks.
    pub sim_truth: f64,
    pub sim_foil: f64,
    /// Posterior at `true_lambda`; the explanation-response probability.
    pub posterior_truth: f64,
}

/// A generated study, in memory. `write` emits the corpus-directory layout.
#[derive(Debug, Clone)]
pub struct SynthStudy {
    pub corpus: StudyCorpus,
    pub images: BTreeMap<String, FloatGrid>,
    pub templates: BTreeMap<String, FloatGrid>,
    /// trial_id → observed explanation map (shown for the AI's class).
    pub observed: BTreeMap<String, SaliencyMap>,
    pub ground_truth: GroundTruth,
    /// Exact generating posteriors, present in noise-free mode.
    pub exact_empirical: Option<BTreeMap<String, (f64, usize)>>,
}

fn participant_ids(prefix: &str, n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len().max(2);
    (0..n).map(|i| format!("{prefix}{i:0width$}")).collect()
}

fn clip01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Inverse CDF of Beta(a, b) by bisection on the regularized incomplete
/// beta function.
fn beta_inverse_cdf(a: f64, b: f64, q: f64) -> Result<f64, SynthError> {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let c = reg_inc_beta(a, b, mid).map_err(model_err)?;
        if c < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Mean fraction of "on" pixels required of a usable blob shape.
const SHAPE_MEAN_RANGE: (f64, f64) = (0.15, 0.85);
/// Minimum mean absolute difference between the two shapes of a trial.
const SHAPE_MIN_SEPARATION: f64 = 0.1;
const SHAPE_ATTEMPTS: usize = 64;

/// Draws a truth/foil pair of blob shapes: near-binary sigmoid squashes of
/// smooth GP fields, redrawn until both cover a nontrivial area and differ
/// from each other.
fn draw_shapes(cfg: &SynthConfig, trial: usize) -> Result<(FloatGrid, FloatGrid), SynthError> {
    for attempt in 0..SHAPE_ATTEMPTS {
        let seed = rng::derive_seed(cfg.seed, &[SALT_SHAPE, trial as u64, attempt as u64]);
        let gp = GpConfig {
            mean: 0.0,
            n_samples: 2,
            ..GpConfig::for_grid(cfg.grid_w, cfg.grid_h, seed)
        };
        let sampler = GpSampler::new(gp).map_err(model_err)?;
        let a = sampler.mask(0).into_grid();
        let b = sampler.mask(1).into_grid();
        let plane = a.plane_len() as f64;
        let mean = |g: &FloatGrid| g.values().iter().sum::<f64>() / plane;
        let sep = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / plane;
        let (ma, mb) = (mean(&a), mean(&b));
        let in_range = |m: f64| (SHAPE_MEAN_RANGE.0..=SHAPE_MEAN_RANGE.1).contains(&m);
        if in_range(ma) && in_range(mb) && sep >= SHAPE_MIN_SEPARATION {
            return Ok((a, b));
        }
    }
    Err(SynthError::DegenerateShapes {
        trial,
        attempts: SHAPE_ATTEMPTS,
    })
}

/// Blends the two consensus masks so that the observed map's similarity gap
/// toward the AI's class hits `target_gap` (bisection; clamped to the
/// attainable range with a warning).
fn blend_observed(
    cons_ai: &FloatGrid,
    cons_other: &FloatGrid,
    target_gap: f64,
    trial_id: &str,
) -> Result<FloatGrid, SynthError> {
    let blend = |u: f64| -> FloatGrid {
        let vals: Vec<f64> = cons_ai
            .values()
            .iter()
            .zip(cons_other.values())
            .map(|(a, o)| clip01(u * a + (1.0 - u) * o))
            .collect();
        FloatGrid::new(cons_ai.width(), cons_ai.height(), 1, vals).expect("blend of valid grids")
    };
    let gap_at = |e: &FloatGrid| -> Result<f64, SynthError> {
        let s_ai = scaled_similarity(e, cons_ai).map_err(model_err)?.value();
        let s_other = scaled_similarity(e, cons_other).map_err(model_err)?.value();
        Ok(s_ai - s_other)
    };
    let max_gap = gap_at(&blend(1.0))?;
    if target_gap >= max_gap {
        log::warn!(
            "trial {trial_id}: requested similarity gap {target_gap} exceeds attainable {max_gap}; using the extreme blend"
        );
        return Ok(blend(1.0));
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if gap_at(&blend(mid))? < target_gap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(blend(0.5 * (lo + hi)))
}

/// `FloatGrid::map` takes `Fn`; this variant threads mutable state (an RNG).
fn map_mut(grid: &FloatGrid, mut f: impl FnMut(f64) -> f64) -> FloatGrid {
    let values = grid.values().iter().map(|&v| f(v)).collect();
    FloatGrid::new(grid.width(), grid.height(), grid.channels(), values)
        .expect("mapped grid keeps its shape")
}

fn corrupt_toward_uniform(mask: &FloatGrid, severity: f64, seed: u64) -> FloatGrid {
    let mut r = rng::stream_rng(seed, 0);
    map_mut(mask, |v| {
        let u = next_unit_f64(&mut r);
        (1.0 - severity) * v + severity * u
    })
}

/// Generates a full study per the config. See the module docs for the
/// determinism contract.
pub fn generate_study(cfg: &SynthConfig) -> Result<SynthStudy, SynthError> {
    cfg.validate()?;
    let rate = GeneralizationRate::new(cfg.true_lambda).map_err(model_err)?;
    let spec = ModelSpec::full(rate);
    let controls = participant_ids("c", cfg.n_control);
    let explainers = participant_ids("e", cfg.n_explanation);
    let drawers = participant_ids("d", cfg.n_drawers);
    for o in &cfg.outliers {
        if !drawers.contains(&o.participant_id) {
            return Err(SynthError::UnknownParticipant(o.participant_id.clone()));
        }
    }
    let severity_of = |pid: &str| -> f64 {
        cfg.outliers
            .iter()
            .find(|o| o.participant_id == pid)
            .map_or(0.0, |o| o.severity)
    };

    // Above-threshold totals whatever the trial count, with slack.
    let rt_control = (1.2 * 180.0 / cfg.n_trials as f64).max(3.0);
    let rt_explanation = (1.2 * 300.0 / cfg.n_trials as f64).max(3.0);

    let beta_a = cfg.prior_concentration * cfg.prior_mean;
    let beta_b = cfg.prior_concentration * (1.0 - cfg.prior_mean);

    let mut trials = Vec::with_capacity(cfg.n_trials);
    let mut responses = Vec::new();
    let mut masks: Vec<MaskRecord> = Vec::new();
    let mut images = BTreeMap::new();
    let mut templates = BTreeMap::new();
    let mut observed = BTreeMap::new();
    let mut truths = Vec::with_capacity(cfg.n_trials);
    let mut exact = BTreeMap::new();

    let mut mistakes_so_far = 0usize;
    for t in 0..cfg.n_trials {
        let trial_id = format!("t{t:03}");
        let truth_class = format!("{trial_id}_a");
        let foil_class = format!("{trial_id}_b");

        // Round-robin mistake assignment: exact proportion, no clustering.
        let want = ((t + 1) as f64 * cfg.mistake_fraction).floor() as usize;
        let mistake = want > mistakes_so_far;
        if mistake {
            mistakes_so_far += 1;
        }
        let ai_class = if mistake { ClassRole::Foil } else { ClassRole::Truth };

        let (shape_truth, shape_foil) = draw_shapes(cfg, t)?;
        let image = FloatGrid::new(
            cfg.grid_w,
            cfg.grid_h,
            1,
            shape_truth
                .values()
                .iter()
                .zip(shape_foil.values())
                .map(|(a, b)| clip01(0.7 * a + 0.3 * b))
                .collect(),
        )
        .expect("image from valid shapes");
        images.insert(trial_id.clone(), image);
        templates.insert(truth_class.clone(), shape_truth.clone());
        templates.insert(foil_class.clone(), shape_foil.clone());

        // Drawer masks: shape + clipped pixel noise, then any configured
        // outlier corruption.
        for (d, pid) in drawers.iter().enumerate() {
            for (role, shape) in [(ClassRole::Truth, &shape_truth), (ClassRole::Foil, &shape_foil)]
            {
                let role_ix = role as u64;
                let mut grid = if cfg.noise_free || cfg.drawer_noise == 0.0 {
                    (*shape).clone()
                } else {
                    let seed =
                        rng::derive_seed(cfg.seed, &[SALT_MASK, t as u64, d as u64, role_ix]);
                    let mut r = rng::stream_rng(seed, 0);
                    map_mut(shape, |v| {
                        clip01(v + cfg.drawer_noise * next_standard_normal(&mut r))
                    })
                };
                let severity = severity_of(pid);
                if severity > 0.0 {
                    let seed =
                        rng::derive_seed(cfg.seed, &[SALT_OUTLIER, t as u64, d as u64, role_ix]);
                    grid = corrupt_toward_uniform(&grid, severity, seed);
                }
                masks.push(MaskRecord {
                    participant_id: pid.clone(),
                    trial_id: trial_id.clone(),
                    target: role,
                    mask: grid,
                });
            }
        }

        // Consensus over clean drawers, via the same aggregation the
        // pipeline runs (outliers are what exclusion will drop).
        let clean: Vec<MaskRecord> = masks
            .iter()
            .filter(|m| m.trial_id == trial_id && severity_of(&m.participant_id) == 0.0)
            .cloned()
            .collect();
        if clean.is_empty() {
            return Err(SynthError::BadConfig(
                "every drawer is an outlier; no clean consensus exists".to_string(),
            ));
        }
        let noop = ExclusionReport {
            threshold: f64::INFINITY,
            mode: ExclusionMode::Participant,
            iterations: vec![],
            excluded: vec![],
            included: vec![],
        };
        let consensus = aggregation::aggregate_consensus(&clean, &noop).map_err(model_err)?;
        let cons_of = |role: ClassRole| -> &FloatGrid {
            &consensus
                .iter()
                .find(|c| c.target == role)
                .expect("both roles drawn")
                .grid
        };
        let cons_truth = cons_of(ClassRole::Truth);
        let cons_foil = cons_of(ClassRole::Foil);

        let target_gap = if mistake { cfg.gap_mistake } else { cfg.gap_correct };
        let (cons_ai, cons_other) = match ai_class {
            ClassRole::Truth => (cons_truth, cons_foil),
            ClassRole::Foil => (cons_foil, cons_truth),
        };
        let obs_grid = blend_observed(cons_ai, cons_other, target_gap, &trial_id)?;
        let obs = SaliencyMap::new(obs_grid).map_err(model_err)?;

        // Prior from the Beta belief-projection distribution.
        let mut prior_rng = rng::stream_rng(
            rng::derive_seed(cfg.seed, &[SALT_PRIOR, t as u64]),
            0,
        );
        let mut prior = beta_inverse_cdf(beta_a, beta_b, next_unit_f64(&mut prior_rng))?;
        if cfg.noise_free {
            let n = cfg.n_control as f64;
            let k = (prior * n).round().clamp(1.0, n - 1.0);
            prior = k / n;
        }

        let evidence =
            build_evidence(obs.grid(), cons_truth, cons_foil, prior).map_err(model_err)?;
        let sim_truth = scaled_similarity(obs.grid(), cons_truth)
            .map_err(model_err)?
            .value();
        let sim_foil = scaled_similarity(obs.grid(), cons_foil)
            .map_err(model_err)?
            .value();
        let post = posterior(&evidence, &spec).map_err(model_err)?;

        // Control responses: Bernoulli(prior), or exact counts rotated
        // across participants in noise-free mode.
        let control_choices: Vec<ClassRole> = if cfg.noise_free {
            let k = (prior * cfg.n_control as f64).round() as usize;
            (0..cfg.n_control)
                .map(|p| {
                    if (p + t) % cfg.n_control < k {
                        ClassRole::Truth
                    } else {
                        ClassRole::Foil
                    }
                })
                .collect()
        } else {
            explainee::sample_responses(
                prior,
                cfg.n_control,
                rng::derive_seed(cfg.seed, &[SALT_CONTROL, t as u64]),
            )
            .map_err(model_err)?
        };
        for (pid, choice) in controls.iter().zip(control_choices) {
            responses.push(ResponseRecord {
                participant_id: pid.clone(),
                trial_id: trial_id.clone(),
                condition: Condition::Control,
                choice,
                rt_seconds: rt_control,
            });
        }

        // Explanation responses: Bernoulli(posterior at true_lambda).
        let expl_choices: Vec<ClassRole> = if cfg.noise_free {
            let k = (post * cfg.n_explanation as f64).round() as usize;
            (0..cfg.n_explanation)
                .map(|p| {
                    if (p + t) % cfg.n_explanation < k {
                        ClassRole::Truth
                    } else {
                        ClassRole::Foil
                    }
                })
                .collect()
        } else {
            explainee::sample_responses(
                post,
                cfg.n_explanation,
                rng::derive_seed(cfg.seed, &[SALT_EXPLANATION, t as u64]),
            )
            .map_err(model_err)?
        };
        for (pid, choice) in explainers.iter().zip(expl_choices) {
            responses.push(ResponseRecord {
                participant_id: pid.clone(),
                trial_id: trial_id.clone(),
                condition: Condition::Explanation,
                choice,
                rt_seconds: rt_explanation,
            });
        }

        exact.insert(trial_id.clone(), (post, cfg.n_explanation));
        observed.insert(trial_id.clone(), obs);
        truths.push(TrialTruth {
            trial_id: trial_id.clone(),
            ai_class: ai_class.as_str().to_string(),
            ai_correct: ai_class == ClassRole::Truth,
            prior_truth: prior,
            sim_truth,
            sim_foil,
            posterior_truth: post,
        });
        trials.push(TrialSpec {
            image_path: CorpusLayout::image_entry(&trial_id),
            trial_id,
            truth_class,
            foil_class,
            ai_class,
        });
    }

    let corpus = StudyCorpus::new(trials, responses, masks).map_err(model_err)?;
    Ok(SynthStudy {
        corpus,
        images,
        templates,
        observed,
        ground_truth: GroundTruth {
            true_lambda: cfg.true_lambda,
            seed: cfg.seed,
            trials: truths,
        },
        exact_empirical: cfg.noise_free.then_some(exact),
    })
}

/// Replaces one drawer's masks with a severity-weighted blend toward
/// uniform noise: severity 0 leaves the corpus unchanged, severity 1 yields
/// pure noise. Deterministic per (seed, trial, target).
pub fn inject_outlier_drawer(
    corpus: &StudyCorpus,
    participant_id: &str,
    severity: f64,
    seed: u64,
) -> Result<StudyCorpus, SynthError> {
    if !(0.0..=1.0).contains(&severity) {
        return Err(SynthError::BadConfig("severity must lie in [0,1]".to_string()));
    }
    if !corpus.masks().iter().any(|m| m.participant_id == participant_id) {
        return Err(SynthError::UnknownParticipant(participant_id.to_string()));
    }
    // Masks are canonically ordered, so the index is a stable identity.
    let masks = corpus
        .masks()
        .iter()
        .enumerate()
        .map(|(i, m)| {
            if m.participant_id != participant_id || severity == 0.0 {
                return m.clone();
            }
            let stream = rng::derive_seed(seed, &[SALT_OUTLIER, i as u64]);
            MaskRecord {
                mask: corrupt_toward_uniform(&m.mask, severity, stream),
                ..m.clone()
            }
        })
        .collect();
    StudyCorpus::new(corpus.trials().to_vec(), corpus.responses().to_vec(), masks)
        .map_err(model_err)
}

impl SynthStudy {
    /// Writes the corpus-directory layout (manifests, images, masks,
    /// saliency maps, templates, ground truth).
    pub fn write(&self, root: &Path) -> Result<(), SynthError> {
        let layout = CorpusLayout::new(root);
        std::fs::create_dir_all(root)
            .map_err(|e| model_err(format!("creating {}: {e}", root.display())))?;

        for trial in self.corpus.trials() {
            let path = corpus::resolve_relative(&layout.trials_csv(), &trial.image_path);
            std::fs::create_dir_all(path.parent().unwrap())
                .map_err(|e| model_err(format!("creating images dir: {e}")))?;
            fgrid::write_grid(&self.images[&trial.trial_id], &path)?;
        }
        corpus::write_trials(self.corpus.trials(), &layout.trials_csv())?;
        corpus::write_responses(self.corpus.responses(), &layout.responses_csv())?;
        corpus::write_masks(self.corpus.masks(), &layout.masks_csv())?;

        for trial in self.corpus.trials() {
            let path = layout.saliency_path(&trial.trial_id, trial.ai_class);
            std::fs::create_dir_all(path.parent().unwrap())
                .map_err(|e| model_err(format!("creating saliency dir: {e}")))?;
            fgrid::write_grid(self.observed[&trial.trial_id].grid(), &path)?;
        }
        for (class, template) in &self.templates {
            let path = layout.template_path(class);
            std::fs::create_dir_all(path.parent().unwrap())
                .map_err(|e| model_err(format!("creating templates dir: {e}")))?;
            fgrid::write_grid(template, &path)?;
        }

        let gt = serde_json::to_string_pretty(&self.ground_truth)
            .expect("ground truth serializes")
            + "\n";
        std::fs::write(layout.ground_truth_json(), gt)
            .map_err(|e| model_err(format!("writing ground truth: {e}")))?;

        if let Some(exact) = &self.exact_empirical {
            corpus::write_proportions(exact, &layout.empirical_exact_csv())?;
        }
        Ok(())
    }
}
