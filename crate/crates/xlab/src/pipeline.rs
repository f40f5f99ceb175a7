//! The analysis pipeline: staged, deterministic, and exposed both as one
//! orchestrator (`run_all`) and as the granular pieces behind the CLI
//! subcommands.
//!
//! Stage order: rt_filter → exclusion (per drawn-class role) → consensus →
//! priors/empirical → evidence → fit → predict (all variants) → LOO-CV →
//! paired comparisons with bootstrap CIs → hypothesis battery. Any failure
//! aborts with the stage name; whether it maps to a data problem (exit 2)
//! or a computation problem (exit 3) travels with the error.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use xlab_core::aggregation::{self, ExclusionReport, ProportionTable, RtFilterReport};
use xlab_core::calibration::{
    self, bootstrap_ci, paired_ttest, CalibrationError, FitPoint, FitResult, LoocvResult,
};
use xlab_core::explainee::{self, build_evidence, PosteriorRecord, Variant};
use xlab_core::generalization::GeneralizationRate;
use xlab_core::grid::FloatGrid;
use xlab_core::rng;
use xlab_core::stats::{self, RegressionFit, RegressionRow, TestResult};
use xlab_core::study::{ResponseRecord, TrialSpec};
use xlab_core::tables::HypothesisRow;
use xlab_core::{ClassRole, ModelSpec, SaliencyMap, StudyCorpus};

use crate::config::{EmpiricalSource, RunConfig};
use crate::corpus::{self, CorpusLayout, LoadedStudy};
use crate::fgrid;

const SALT_BOOTSTRAP: u64 = 201;

/// How a stage failed; decides the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    /// Missing or malformed inputs (exit 2).
    Input,
    /// The computation itself could not proceed (exit 3).
    Compute,
}

#[derive(Debug)]
pub struct StageFailure {
    pub stage: &'static str,
    pub kind: FailureKind,
    pub message: String,
}

impl fmt::Display for StageFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {}: {}", self.stage, self.message)
    }
}

impl std::error::Error for StageFailure {}

pub type StageResult<T> = Result<T, StageFailure>;

fn input(stage: &'static str, e: impl fmt::Display) -> StageFailure {
    StageFailure {
        stage,
        kind: FailureKind::Input,
        message: e.to_string(),
    }
}

fn compute(stage: &'static str, e: impl fmt::Display) -> StageFailure {
    StageFailure {
        stage,
        kind: FailureKind::Compute,
        message: e.to_string(),
    }
}

/// Everything the model stages need, assembled from a corpus directory.
#[derive(Debug, Clone)]
pub struct PreparedStudy {
    pub study: LoadedStudy,
    pub kept_responses: Vec<ResponseRecord>,
    pub rt_report: RtFilterReport,
    pub exclusion_truth: ExclusionReport,
    pub exclusion_foil: ExclusionReport,
    pub consensus: BTreeMap<(String, ClassRole), FloatGrid>,
    /// Mask count behind each consensus grid, post-exclusion.
    pub consensus_n: BTreeMap<(String, ClassRole), usize>,
    pub priors: ProportionTable,
    pub empirical: ProportionTable,
    /// trial_id → explanation map shown for the AI's class.
    pub observed: BTreeMap<String, SaliencyMap>,
}

impl PreparedStudy {
    pub fn trials(&self) -> &[TrialSpec] {
        self.study.corpus.trials()
    }
}

pub fn load_corpus(cfg: &RunConfig) -> StageResult<LoadedStudy> {
    CorpusLayout::new(&cfg.paths.corpus)
        .load()
        .map_err(|e| input("load-corpus", e))
}

/// Loads each trial's observed explanation map (`saliency/<trial>.<ai
/// role>.fgrid`).
pub fn load_observed(
    cfg: &RunConfig,
    corpus: &StudyCorpus,
) -> StageResult<BTreeMap<String, SaliencyMap>> {
    let layout = CorpusLayout::new(&cfg.paths.corpus);
    let mut observed = BTreeMap::new();
    for trial in corpus.trials() {
        let path = layout.saliency_path(&trial.trial_id, trial.ai_class);
        let map = fgrid::read_saliency(&path).map_err(|e| input("load-observed", e))?;
        observed.insert(trial.trial_id.clone(), map);
    }
    Ok(observed)
}

fn masks_for_role(corpus: &StudyCorpus, role: ClassRole) -> Vec<xlab_core::study::MaskRecord> {
    corpus.masks_for(role).cloned().collect()
}

/// Runs every data stage including the observed explanation maps; the
/// models can run directly on the result.
pub fn prepare(cfg: &RunConfig) -> StageResult<PreparedStudy> {
    let study = load_corpus(cfg)?;
    prepare_loaded(cfg, study)
}

/// Like [`prepare`] but skips the saliency files, for stages that only
/// need masks and responses. `observed` is left empty.
pub fn prepare_data(cfg: &RunConfig) -> StageResult<PreparedStudy> {
    let study = load_corpus(cfg)?;
    prepare_data_loaded(cfg, study)
}

pub fn prepare_loaded(cfg: &RunConfig, study: LoadedStudy) -> StageResult<PreparedStudy> {
    let mut prepared = prepare_data_loaded(cfg, study)?;
    prepared.observed = load_observed(cfg, &prepared.study.corpus)?;
    Ok(prepared)
}

fn prepare_data_loaded(cfg: &RunConfig, study: LoadedStudy) -> StageResult<PreparedStudy> {
    let corpus = &study.corpus;
    let (kept_responses, rt_report) =
        aggregation::rt_filter(corpus.responses(), cfg.rt_thresholds());
    for (pid, cond) in &rt_report.dropped {
        log::info!("rt filter dropped participant {pid} ({})", cond.as_str());
    }

    let truth_masks = masks_for_role(corpus, ClassRole::Truth);
    let foil_masks = masks_for_role(corpus, ClassRole::Foil);
    let exclusion_truth = aggregation::exclude_outliers_with_mode(
        &truth_masks,
        cfg.exclusion.threshold,
        cfg.exclusion.mode,
    )
    .map_err(|e| input("exclusion", e))?;
    let exclusion_foil = aggregation::exclude_outliers_with_mode(
        &foil_masks,
        cfg.exclusion.threshold,
        cfg.exclusion.mode,
    )
    .map_err(|e| input("exclusion", e))?;

    let mut consensus = BTreeMap::new();
    let mut consensus_n = BTreeMap::new();
    for (masks, report) in [
        (&truth_masks, &exclusion_truth),
        (&foil_masks, &exclusion_foil),
    ] {
        let merged =
            aggregation::aggregate_consensus(masks, report).map_err(|e| compute("consensus", e))?;
        for c in merged {
            consensus_n.insert((c.trial_id.clone(), c.target), c.n_included);
            consensus.insert((c.trial_id, c.target), c.grid);
        }
    }

    let priors = aggregation::estimate_priors(corpus.trials(), &kept_responses, cfg.model.clamp_priors)
        .map_err(|e| input("priors", e))?;
    let empirical = match cfg.model.empirical_source {
        EmpiricalSource::Responses => {
            aggregation::empirical_proportions(corpus.trials(), &kept_responses)
                .map_err(|e| input("empirical", e))?
        }
        EmpiricalSource::Exact => {
            let path = CorpusLayout::new(&cfg.paths.corpus).empirical_exact_csv();
            let raw = corpus::load_proportions(&path).map_err(|e| input("empirical", e))?;
            let mut entries = BTreeMap::new();
            for trial in corpus.trials() {
                let (value, n) = raw.get(&trial.trial_id).copied().ok_or_else(|| {
                    input(
                        "empirical",
                        format!("{}: no exact entry for trial {}", path.display(), trial.trial_id),
                    )
                })?;
                entries.insert(
                    trial.trial_id.clone(),
                    aggregation::Proportion { value, n },
                );
            }
            ProportionTable { entries }
        }
    };

    Ok(PreparedStudy {
        study,
        kept_responses,
        rt_report,
        exclusion_truth,
        exclusion_foil,
        consensus,
        consensus_n,
        priors,
        empirical,
        observed: BTreeMap::new(),
    })
}

/// One evidence/target pair per trial, in trial order.
pub fn fit_points(prepared: &PreparedStudy) -> StageResult<Vec<FitPoint>> {
    let mut points = Vec::with_capacity(prepared.trials().len());
    for trial in prepared.trials() {
        let id = &trial.trial_id;
        let prior = prepared
            .priors
            .get(id)
            .ok_or_else(|| input("evidence", format!("no prior for trial {id}")))?
            .value;
        let target = prepared
            .empirical
            .get(id)
            .ok_or_else(|| input("evidence", format!("no empirical value for trial {id}")))?
            .value;
        let observed = prepared
            .observed
            .get(id)
            .ok_or_else(|| input("evidence", format!("no observed map for trial {id}")))?;
        let cons_truth = prepared
            .consensus
            .get(&(id.clone(), ClassRole::Truth))
            .ok_or_else(|| input("evidence", format!("no truth consensus for trial {id}")))?;
        let cons_foil = prepared
            .consensus
            .get(&(id.clone(), ClassRole::Foil))
            .ok_or_else(|| input("evidence", format!("no foil consensus for trial {id}")))?;
        let evidence = build_evidence(observed.grid(), cons_truth, cons_foil, prior)
            .map_err(|e| compute("evidence", e))?;
        points.push(FitPoint {
            trial_id: id.clone(),
            evidence,
            target,
        });
    }
    Ok(points)
}

/// Per-variant comparison against the full model, on LOO-CV squared errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    /// mean(err_baseline - err_full); positive favors the full model.
    pub mean_diff: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub t: Option<f64>,
    pub df: Option<f64>,
    pub p: Option<f64>,
    /// Identical per-trial errors: the paired test is undefined.
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct ModelOutputs {
    pub variants: Vec<Variant>,
    pub fits: BTreeMap<Variant, FitResult>,
    pub predictions: BTreeMap<Variant, Vec<PosteriorRecord>>,
    pub loocv: BTreeMap<Variant, LoocvResult>,
    pub comparisons: Vec<Comparison>,
}

fn spec_for(variant: Variant, fit: Option<&FitResult>) -> StageResult<ModelSpec> {
    match variant {
        Variant::PriorOnly => Ok(ModelSpec::prior_only()),
        _ => {
            let fit = fit.expect("parametric variant fitted before prediction");
            let rate = GeneralizationRate::new(fit.lambda_hat)
                .map_err(|e| compute("predict", e))?;
            Ok(ModelSpec::new(variant, Some(rate)).map_err(|e| compute("predict", e))?)
        }
    }
}

/// Fits, predicts, cross-validates, and compares the selected variants.
pub fn run_models(cfg: &RunConfig, prepared: &PreparedStudy) -> StageResult<ModelOutputs> {
    let variants = cfg.variants().map_err(|e| input("fit", e))?;
    let options = cfg.fit_options().map_err(|e| input("fit", e))?;
    let points = fit_points(prepared)?;

    let priors_map = prepared.priors.values_by_trial();
    let mut fits = BTreeMap::new();
    let mut predictions = BTreeMap::new();
    let mut loocv = BTreeMap::new();
    for &variant in &variants {
        let fit = if variant.is_parametric() {
            let fit = calibration::fit_lambda_with(&points, variant, options)
                .map_err(|e| compute("fit", e))?;
            if fit.at_boundary {
                log::warn!(
                    "{} rate fit sits at the search boundary (lambda = {})",
                    variant.as_str(),
                    fit.lambda_hat
                );
            }
            fits.insert(variant, fit.clone());
            Some(fit)
        } else {
            None
        };
        let spec = spec_for(variant, fit.as_ref())?;
        let recs = explainee::predict_corpus(
            prepared.trials(),
            &priors_map,
            &prepared.consensus,
            &prepared.observed,
            &spec,
        )
        .map_err(|e| compute("predict", e))?;
        predictions.insert(variant, recs);
        let cv = calibration::loocv_with(&points, variant, options)
            .map_err(|e| compute("loocv", e))?;
        loocv.insert(variant, cv);
    }

    let full_errors: Vec<f64> = loocv[&Variant::Full]
        .errors
        .iter()
        .map(|(_, e)| *e)
        .collect();
    let mut comparisons = Vec::new();
    for (index, &variant) in variants.iter().enumerate() {
        if variant == Variant::Full {
            continue;
        }
        let base_errors: Vec<f64> = loocv[&variant].errors.iter().map(|(_, e)| *e).collect();
        let diffs: Vec<f64> = base_errors
            .iter()
            .zip(&full_errors)
            .map(|(b, f)| b - f)
            .collect();
        let seed = rng::derive_seed(cfg.seed, &[SALT_BOOTSTRAP, index as u64]);
        let (ci_lo, ci_hi) = bootstrap_ci(&diffs, cfg.bootstrap.n_boot, seed)
            .map_err(|e| compute("compare", e))?;
        let mean_diff = diffs.iter().sum::<f64>() / diffs.len() as f64;
        match paired_ttest(&base_errors, &full_errors) {
            Ok(test) => comparisons.push(Comparison {
                baseline: variant.as_str().to_string(),
                mean_diff: test.mean_diff,
                ci_lo,
                ci_hi,
                t: Some(test.t),
                df: Some(test.df),
                p: Some(test.p),
                degenerate: false,
            }),
            Err(CalibrationError::DegenerateVariance) => {
                log::warn!(
                    "comparison {} vs full: identical errors on every trial; t-test undefined",
                    variant.as_str()
                );
                comparisons.push(Comparison {
                    baseline: variant.as_str().to_string(),
                    mean_diff,
                    ci_lo,
                    ci_hi,
                    t: None,
                    df: None,
                    p: None,
                    degenerate: true,
                });
            }
            Err(e) => return Err(compute("compare", e)),
        }
    }

    Ok(ModelOutputs {
        variants,
        fits,
        predictions,
        loocv,
        comparisons,
    })
}

/// Per-trial fidelity of a proportion table toward the AI's class.
fn fidelity_of(p_truth: f64, ai_class: ClassRole) -> f64 {
    explainee::fidelity(p_truth, ai_class)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareSummary {
    pub successes: u64,
    pub n: u64,
    pub statistic: f64,
    pub df: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpearmanSummary {
    pub rho: f64,
    pub p: f64,
    pub n: usize,
}

#[derive(Debug, Clone)]
pub struct Battery {
    pub chi_square: ChiSquareSummary,
    pub regression_empirical: RegressionFit,
    pub regression_model: RegressionFit,
    pub spearman: SpearmanSummary,
    pub hypotheses: Vec<HypothesisRow>,
}

/// Empirical fidelity rows: one control and one explanation observation per
/// trial.
pub fn empirical_regression_rows(prepared: &PreparedStudy) -> StageResult<Vec<RegressionRow>> {
    let mut rows = Vec::with_capacity(2 * prepared.trials().len());
    for trial in prepared.trials() {
        let id = &trial.trial_id;
        let prior = prepared
            .priors
            .get(id)
            .ok_or_else(|| input("regression", format!("no prior for trial {id}")))?
            .value;
        let emp = prepared
            .empirical
            .get(id)
            .ok_or_else(|| input("regression", format!("no empirical value for trial {id}")))?
            .value;
        rows.push(RegressionRow {
            fidelity: fidelity_of(prior, trial.ai_class),
            ai_correct: trial.ai_correct(),
            explanation: false,
        });
        rows.push(RegressionRow {
            fidelity: fidelity_of(emp, trial.ai_class),
            ai_correct: trial.ai_correct(),
            explanation: true,
        });
    }
    Ok(rows)
}

/// Model-recovery rows: control observations stay empirical, explanation
/// observations are replaced by the full model's predicted fidelity.
fn model_regression_rows(
    prepared: &PreparedStudy,
    full_predictions: &[PosteriorRecord],
) -> StageResult<Vec<RegressionRow>> {
    let by_trial: BTreeMap<&str, f64> = full_predictions
        .iter()
        .map(|r| (r.trial_id.as_str(), r.fidelity))
        .collect();
    let mut rows = Vec::with_capacity(2 * prepared.trials().len());
    for trial in prepared.trials() {
        let id = &trial.trial_id;
        let prior = prepared
            .priors
            .get(id)
            .ok_or_else(|| input("regression", format!("no prior for trial {id}")))?
            .value;
        let model_fid = *by_trial
            .get(id.as_str())
            .ok_or_else(|| input("regression", format!("no prediction for trial {id}")))?;
        rows.push(RegressionRow {
            fidelity: fidelity_of(prior, trial.ai_class),
            ai_correct: trial.ai_correct(),
            explanation: false,
        });
        rows.push(RegressionRow {
            fidelity: model_fid,
            ai_correct: trial.ai_correct(),
            explanation: true,
        });
    }
    Ok(rows)
}

/// Index of the `ai_correct:explanation` interaction in the design.
pub const INTERACTION_TERM: usize = 3;
/// Index of the `explanation` main effect in the design.
pub const EXPLANATION_TERM: usize = 2;

/// Runs the hypothesis battery. `models` must contain the full variant.
pub fn hypothesis_battery(
    prepared: &PreparedStudy,
    models: &ModelOutputs,
) -> StageResult<Battery> {
    // H1: control choices match the ground truth above chance.
    let control: Vec<&ResponseRecord> = prepared
        .kept_responses
        .iter()
        .filter(|r| r.condition == xlab_core::Condition::Control)
        .collect();
    if control.is_empty() {
        return Err(input("battery", "no control responses after filtering"));
    }
    let successes = control
        .iter()
        .filter(|r| r.choice == ClassRole::Truth)
        .count() as u64;
    let n = control.len() as u64;
    let chi = stats::chi_square_gof(successes, n, 0.5).map_err(|e| compute("battery", e))?;
    let chi_square = ChiSquareSummary {
        successes,
        n,
        statistic: chi.statistic,
        df: chi.df,
        p: chi.p,
    };

    // H2 on measured fidelity; H3 repeats it on the model's predictions.
    let regression_empirical = stats::fidelity_regression(&empirical_regression_rows(prepared)?)
        .map_err(|e| compute("battery", e))?;
    let full_predictions = &models.predictions[&Variant::Full];
    let regression_model =
        stats::fidelity_regression(&model_regression_rows(prepared, full_predictions)?)
            .map_err(|e| compute("battery", e))?;

    // Image-level agreement between measured and modelled fidelity.
    let mut emp_fid = Vec::with_capacity(prepared.trials().len());
    let mut model_fid = Vec::with_capacity(prepared.trials().len());
    let model_by_trial: BTreeMap<&str, f64> = full_predictions
        .iter()
        .map(|r| (r.trial_id.as_str(), r.fidelity))
        .collect();
    for trial in prepared.trials() {
        let id = &trial.trial_id;
        let emp = prepared
            .empirical
            .get(id)
            .ok_or_else(|| input("battery", format!("no empirical value for trial {id}")))?
            .value;
        emp_fid.push(fidelity_of(emp, trial.ai_class));
        model_fid.push(model_by_trial[id.as_str()]);
    }
    let rho: TestResult =
        stats::spearman(&emp_fid, &model_fid).map_err(|e| compute("battery", e))?;
    let spearman = SpearmanSummary {
        rho: rho.statistic,
        p: rho.p,
        n: emp_fid.len(),
    };

    let mut hypotheses = vec![
        HypothesisRow {
            id: "1".into(),
            label: "Prior beliefs track the ground-truth class (belief projection)".into(),
            test: "Chi-square GOF vs 0.5".into(),
            statistic: chi_square.statistic,
            p: Some(chi_square.p),
        },
        HypothesisRow {
            id: "2".into(),
            label: "Explanations help more when the AI is wrong (interaction < 0)".into(),
            test: "OLS interaction".into(),
            statistic: regression_empirical.beta[INTERACTION_TERM],
            p: Some(regression_empirical.p[INTERACTION_TERM]),
        },
        HypothesisRow {
            id: "3".into(),
            label: "The model reproduces that interaction from evidence alone".into(),
            test: "OLS interaction".into(),
            statistic: regression_model.beta[INTERACTION_TERM],
            p: Some(regression_model.p[INTERACTION_TERM]),
        },
    ];
    let comparison_label = |baseline: &str| match baseline {
        "prior_only" => "Full model beats the prior-only model",
        "l1" => "Full model beats the L1-distance model",
        "beta" => "Full model beats the Beta-likelihood model",
        _ => "Full model beats the baseline",
    };
    for (i, cmp) in models.comparisons.iter().enumerate() {
        hypotheses.push(HypothesisRow {
            id: format!("{}", 4 + i),
            label: comparison_label(&cmp.baseline).into(),
            test: "LOO-CV MSE paired t".into(),
            statistic: cmp.mean_diff,
            p: cmp.p,
        });
    }
    hypotheses.push(HypothesisRow {
        id: "S".into(),
        label: "Modelled fidelity tracks measured fidelity across images".into(),
        test: "Spearman correlation".into(),
        statistic: spearman.rho,
        p: Some(spearman.p),
    });

    Ok(Battery {
        chi_square,
        regression_empirical,
        regression_model,
        spearman,
        hypotheses,
    })
}

/// Output of a full pipeline run, ready for report rendering.
#[derive(Debug)]
pub struct RunArtifacts {
    pub prepared: PreparedStudy,
    pub models: ModelOutputs,
    pub battery: Battery,
}

pub fn run_all(cfg: &RunConfig) -> StageResult<RunArtifacts> {
    let prepared = prepare(cfg)?;
    let models = run_models(cfg, &prepared)?;
    let battery = hypothesis_battery(&prepared, &models)?;
    Ok(RunArtifacts {
        prepared,
        models,
        battery,
    })
}

fn write_text(stage: &'static str, path: &Path, text: &str) -> StageResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| input(stage, format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, text).map_err(|e| input(stage, format!("{}: {e}", path.display())))
}

fn json_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("artifact serializes") + "\n"
}

/// Writes the aggregate-stage artifacts: exclusion reports plus consensus
/// masks.
pub fn write_aggregate_artifacts(cfg: &RunConfig, prepared: &PreparedStudy) -> StageResult<()> {
    let out = &cfg.paths.output;
    #[derive(Serialize)]
    struct AggregateArtifact<'a> {
        rt_filter: &'a RtFilterReport,
        exclusion_truth: &'a ExclusionReport,
        exclusion_foil: &'a ExclusionReport,
        consensus: Vec<ConsensusIndexEntry>,
    }
    #[derive(Serialize)]
    struct ConsensusIndexEntry {
        trial_id: String,
        target: String,
        n_included: usize,
        path: String,
    }

    let mut index = Vec::new();
    for ((trial_id, role), grid) in &prepared.consensus {
        let rel = format!("consensus/{trial_id}.{}.fgrid", role.as_str());
        let path = out.join(&rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| input("aggregate", format!("{}: {e}", parent.display())))?;
        }
        fgrid::write_grid(grid, &path).map_err(|e| input("aggregate", e))?;
        let n_included = prepared
            .consensus_n
            .get(&(trial_id.clone(), *role))
            .copied()
            .unwrap_or(0);
        index.push(ConsensusIndexEntry {
            trial_id: trial_id.clone(),
            target: role.as_str().to_string(),
            n_included,
            path: rel,
        });
    }
    let artifact = AggregateArtifact {
        rt_filter: &prepared.rt_report,
        exclusion_truth: &prepared.exclusion_truth,
        exclusion_foil: &prepared.exclusion_foil,
        consensus: index,
    };
    write_text("aggregate", &out.join("aggregate.json"), &json_line(&artifact))
}

fn proportion_map(table: &ProportionTable) -> BTreeMap<String, (f64, usize)> {
    table
        .entries
        .iter()
        .map(|(k, p)| (k.clone(), (p.value, p.n)))
        .collect()
}

pub fn write_prior_artifacts(cfg: &RunConfig, prepared: &PreparedStudy) -> StageResult<()> {
    let out = &cfg.paths.output;
    corpus::write_proportions(&proportion_map(&prepared.priors), &out.join("priors.csv"))
        .map_err(|e| input("priors", e))?;
    corpus::write_proportions(&proportion_map(&prepared.empirical), &out.join("empirical.csv"))
        .map_err(|e| input("empirical", e))
}

pub fn write_prediction_artifacts(
    cfg: &RunConfig,
    variant: Variant,
    records: &[PosteriorRecord],
) -> StageResult<()> {
    let mut text = String::from("trial_id,posterior_truth,fidelity\n");
    for r in records {
        text.push_str(&format!("{},{},{}\n", r.trial_id, r.posterior_truth, r.fidelity));
    }
    write_text(
        "predict",
        &cfg.paths
            .output
            .join(format!("predictions_{}.csv", variant.as_str())),
        &text,
    )
}

pub fn write_fit_artifact(cfg: &RunConfig, fit: &FitResult) -> StageResult<()> {
    write_text(
        "fit",
        &cfg.paths
            .output
            .join(format!("fit_{}.json", fit.variant.as_str())),
        &json_line(fit),
    )
}

pub fn write_loocv_artifact(cfg: &RunConfig, cv: &LoocvResult) -> StageResult<()> {
    #[derive(Serialize)]
    struct LoocvArtifact<'a> {
        variant: &'a str,
        mse: f64,
        errors: &'a [(String, f64)],
    }
    write_text(
        "loocv",
        &cfg.paths
            .output
            .join(format!("loocv_{}.json", cv.variant.as_str())),
        &json_line(&LoocvArtifact {
            variant: cv.variant.as_str(),
            mse: cv.mse,
            errors: &cv.errors,
        }),
    )
}

/// Writes every stage artifact of a full run (the report files are written
/// by the report module).
pub fn write_all_artifacts(cfg: &RunConfig, artifacts: &RunArtifacts) -> StageResult<()> {
    write_aggregate_artifacts(cfg, &artifacts.prepared)?;
    write_prior_artifacts(cfg, &artifacts.prepared)?;
    for (variant, records) in &artifacts.models.predictions {
        write_prediction_artifacts(cfg, *variant, records)?;
    }
    for fit in artifacts.models.fits.values() {
        write_fit_artifact(cfg, fit)?;
    }
    for cv in artifacts.models.loocv.values() {
        write_loocv_artifact(cfg, cv)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, SynthConfig};

    fn small_cfg(root: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.seed = 11;
        cfg.paths.corpus = root.join("corpus");
        cfg.paths.output = root.join("out");
        cfg.synth = SynthConfig {
            n_trials: 8,
            n_control: 12,
            n_explanation: 12,
            n_drawers: 4,
            grid_w: 8,
            grid_h: 8,
            seed: 11,
            ..SynthConfig::default()
        };
        cfg.bootstrap.n_boot = 200;
        cfg
    }

    fn write_small_corpus(cfg: &RunConfig) {
        let study = synth::generate_study(&cfg.synth).unwrap();
        study.write(&cfg.paths.corpus).unwrap();
    }

    #[test]
    fn run_all_produces_complete_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg(dir.path());
        write_small_corpus(&cfg);

        let artifacts = run_all(&cfg).unwrap();
        assert_eq!(artifacts.models.variants.len(), 4);
        assert_eq!(artifacts.models.comparisons.len(), 3);
        assert!(artifacts
            .models
            .comparisons
            .iter()
            .all(|c| c.baseline != "full"));
        assert_eq!(artifacts.battery.hypotheses.len(), 7);
        assert_eq!(
            artifacts.models.predictions[&Variant::Full].len(),
            cfg.synth.n_trials
        );
        // Data generated by the full model should favor it over the
        // prior-only ablation.
        assert!(
            artifacts.models.loocv[&Variant::Full].mse
                < artifacts.models.loocv[&Variant::PriorOnly].mse
        );

        write_all_artifacts(&cfg, &artifacts).unwrap();
        for name in [
            "aggregate.json",
            "priors.csv",
            "empirical.csv",
            "fit_full.json",
            "loocv_full.json",
            "loocv_prior_only.json",
            "predictions_full.csv",
            "predictions_prior_only.csv",
        ] {
            assert!(cfg.paths.output.join(name).is_file(), "missing {name}");
        }
        assert!(cfg
            .paths
            .output
            .join("consensus/t000.truth.fgrid")
            .is_file());
    }

    #[test]
    fn missing_observed_map_is_an_input_failure() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg(dir.path());
        write_small_corpus(&cfg);
        let layout = CorpusLayout::new(&cfg.paths.corpus);
        let victim = layout.saliency_path("t003", ClassRole::Truth);
        let victim = if victim.is_file() {
            victim
        } else {
            layout.saliency_path("t003", ClassRole::Foil)
        };
        std::fs::remove_file(victim).unwrap();

        let err = prepare(&cfg).unwrap_err();
        assert_eq!(err.stage, "load-observed");
        assert_eq!(err.kind, FailureKind::Input);
    }

    #[test]
    fn exact_empirical_source_reproduces_generating_posteriors() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg(dir.path());
        cfg.synth.noise_free = true;
        cfg.model.empirical_source = EmpiricalSource::Exact;
        let study = synth::generate_study(&cfg.synth).unwrap();
        study.write(&cfg.paths.corpus).unwrap();

        let prepared = prepare(&cfg).unwrap();
        for truth in &study.ground_truth.trials {
            let got = prepared.empirical.get(&truth.trial_id).unwrap().value;
            assert_eq!(got, truth.posterior_truth, "trial {}", truth.trial_id);
        }
    }

    #[test]
    fn regression_rows_pair_control_and_explanation_per_trial() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg(dir.path());
        write_small_corpus(&cfg);
        let prepared = prepare(&cfg).unwrap();
        let rows = empirical_regression_rows(&prepared).unwrap();
        assert_eq!(rows.len(), 2 * cfg.synth.n_trials);
        assert_eq!(rows.iter().filter(|r| r.explanation).count(), cfg.synth.n_trials);
    }
}
