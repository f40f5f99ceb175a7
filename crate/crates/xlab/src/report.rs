//! Report assembly: one JSON document with every number the run produced,
//! plus a human-readable markdown rendering and two long-format CSVs.
//!
//! `report.json` is the machine-readable record (full precision, schema in
//! docs/report.schema.json). `report.md` rounds for display only.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use xlab_core::aggregation::{ExclusionReport, Proportion, RtFilterReport};
use xlab_core::calibration::FitResult;
use xlab_core::explainee;
use xlab_core::stats::RegressionFit;
use xlab_core::tables::{
    self, format_p, hypothesis_table_markdown, loocv_table_markdown, regression_table_markdown,
    HypothesisRow,
};
use xlab_core::Condition;

use crate::config::RunConfig;
use crate::pipeline::{
    ChiSquareSummary, Comparison, RunArtifacts, SpearmanSummary, StageResult,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub n_trials: usize,
    pub n_responses_total: usize,
    pub n_responses_kept: usize,
    pub n_control_participants: usize,
    pub n_explanation_participants: usize,
    pub n_masks: usize,
    pub grid_w: usize,
    pub grid_h: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionSection {
    pub truth: ExclusionReport,
    pub foil: ExclusionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoocvSummary {
    pub variant: String,
    pub mse: f64,
}

/// One fidelity observation in long format. `source` is `control`,
/// `explanation`, or `model_<variant>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityRow {
    pub trial_id: String,
    pub ai_correct: bool,
    pub source: String,
    pub fidelity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub trial_id: String,
    pub posterior_truth: f64,
    pub fidelity: f64,
}

/// The complete machine-readable result of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub config: serde_json::Value,
    pub corpus: CorpusSummary,
    pub rt_filter: RtFilterReport,
    pub exclusion: ExclusionSection,
    pub priors: BTreeMap<String, Proportion>,
    pub empirical: BTreeMap<String, Proportion>,
    pub fits: Vec<FitResult>,
    pub loocv: Vec<LoocvSummary>,
    pub comparisons: Vec<Comparison>,
    pub chi_square: ChiSquareSummary,
    pub regression_empirical: RegressionFit,
    pub regression_model: RegressionFit,
    pub spearman: SpearmanSummary,
    pub hypotheses: Vec<HypothesisRow>,
    pub fidelity: Vec<FidelityRow>,
    pub predictions: BTreeMap<String, Vec<PredictionEntry>>,
}

fn participants_in(artifacts: &RunArtifacts, condition: Condition) -> usize {
    artifacts
        .prepared
        .kept_responses
        .iter()
        .filter(|r| r.condition == condition)
        .map(|r| r.participant_id.as_str())
        .collect::<BTreeSet<_>>()
        .len()
}

pub fn build_report(cfg: &RunConfig, artifacts: &RunArtifacts) -> Report {
    let prepared = &artifacts.prepared;
    let corpus = &prepared.study.corpus;
    let (grid_w, grid_h) = corpus
        .masks()
        .first()
        .map(|m| (m.mask.width(), m.mask.height()))
        .unwrap_or((0, 0));
    let summary = CorpusSummary {
        n_trials: corpus.trials().len(),
        n_responses_total: corpus.responses().len(),
        n_responses_kept: prepared.kept_responses.len(),
        n_control_participants: participants_in(artifacts, Condition::Control),
        n_explanation_participants: participants_in(artifacts, Condition::Explanation),
        n_masks: corpus.masks().len(),
        grid_w,
        grid_h,
    };

    let mut fidelity = Vec::new();
    for trial in corpus.trials() {
        let id = &trial.trial_id;
        let prior = prepared.priors.get(id).expect("prior per trial").value;
        let emp = prepared.empirical.get(id).expect("empirical per trial").value;
        fidelity.push(FidelityRow {
            trial_id: id.clone(),
            ai_correct: trial.ai_correct(),
            source: "control".into(),
            fidelity: explainee::fidelity(prior, trial.ai_class),
        });
        fidelity.push(FidelityRow {
            trial_id: id.clone(),
            ai_correct: trial.ai_correct(),
            source: "explanation".into(),
            fidelity: explainee::fidelity(emp, trial.ai_class),
        });
    }
    for (variant, records) in &artifacts.models.predictions {
        let source = format!("model_{}", variant.as_str());
        let by_trial: BTreeMap<&str, f64> = records
            .iter()
            .map(|r| (r.trial_id.as_str(), r.fidelity))
            .collect();
        for trial in corpus.trials() {
            fidelity.push(FidelityRow {
                trial_id: trial.trial_id.clone(),
                ai_correct: trial.ai_correct(),
                source: source.clone(),
                fidelity: by_trial[trial.trial_id.as_str()],
            });
        }
    }

    let predictions = artifacts
        .models
        .predictions
        .iter()
        .map(|(variant, records)| {
            (
                variant.as_str().to_string(),
                records
                    .iter()
                    .map(|r| PredictionEntry {
                        trial_id: r.trial_id.clone(),
                        posterior_truth: r.posterior_truth,
                        fidelity: r.fidelity,
                    })
                    .collect(),
            )
        })
        .collect();

    Report {
        schema_version: SCHEMA_VERSION,
        config: cfg.report_embed(),
        corpus: summary,
        rt_filter: prepared.rt_report.clone(),
        exclusion: ExclusionSection {
            truth: prepared.exclusion_truth.clone(),
            foil: prepared.exclusion_foil.clone(),
        },
        priors: prepared.priors.entries.clone(),
        empirical: prepared.empirical.entries.clone(),
        fits: artifacts.models.fits.values().cloned().collect(),
        loocv: artifacts
            .models
            .loocv
            .values()
            .map(|cv| LoocvSummary {
                variant: cv.variant.as_str().to_string(),
                mse: cv.mse,
            })
            .collect(),
        comparisons: artifacts.models.comparisons.clone(),
        chi_square: artifacts.battery.chi_square.clone(),
        regression_empirical: artifacts.battery.regression_empirical.clone(),
        regression_model: artifacts.battery.regression_model.clone(),
        spearman: artifacts.battery.spearman.clone(),
        hypotheses: artifacts.battery.hypotheses.clone(),
        fidelity,
        predictions,
    }
}

fn excluded_list(report: &ExclusionReport) -> String {
    if report.excluded.is_empty() {
        return String::from("none");
    }
    report
        .excluded
        .iter()
        .map(|u| match &u.trial_id {
            Some(t) => format!("{}@{}", u.participant_id, t),
            None => u.participant_id.clone(),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn format_comparison(cmp: &Comparison) -> String {
    if cmp.degenerate {
        return format!(
            "- {} vs full: mean MSE difference {:.6} [{:.6}, {:.6}]; per-trial errors \
             identical, paired test undefined",
            cmp.baseline, cmp.mean_diff, cmp.ci_lo, cmp.ci_hi
        );
    }
    format!(
        "- {} vs full: mean MSE difference {:.6} [{:.6}, {:.6}], t({:.0}) = {:.3}, p = {}",
        cmp.baseline,
        cmp.mean_diff,
        cmp.ci_lo,
        cmp.ci_hi,
        cmp.df.unwrap_or(f64::NAN),
        cmp.t.unwrap_or(f64::NAN),
        cmp.p.map(format_p).unwrap_or_else(|| "n/a".into()),
    )
}

pub fn render_markdown(report: &Report) -> String {
    let mut out = String::new();
    out.push_str("# Explanation-understanding analysis\n\n");
    let seed = report
        .config
        .get("seed")
        .and_then(|v| v.as_u64())
        .unwrap_or(0);
    out.push_str(&format!("Deterministic run with seed {seed}.\n\n"));

    out.push_str("## Corpus\n\n");
    let c = &report.corpus;
    out.push_str(&format!(
        "- {} trials on {}x{} grids, {} drawn masks\n",
        c.n_trials, c.grid_w, c.grid_h, c.n_masks
    ));
    out.push_str(&format!(
        "- {} of {} responses kept after the response-time filter ({} control, {} \
         explanation participants)\n",
        c.n_responses_kept,
        c.n_responses_total,
        c.n_control_participants,
        c.n_explanation_participants
    ));
    out.push_str(&format!(
        "- mask outliers excluded — truth: {}; foil: {}\n\n",
        excluded_list(&report.exclusion.truth),
        excluded_list(&report.exclusion.foil)
    ));

    out.push_str("## Hypothesis summary\n\n");
    out.push_str(&hypothesis_table_markdown(&report.hypotheses));
    out.push('\n');

    out.push_str("## Prior beliefs\n\n");
    let chi = &report.chi_square;
    out.push_str(&format!(
        "Control participants chose the true class {} / {} times; chi-square({:.0}) = \
         {:.2}, p = {}.\n\n",
        chi.successes,
        chi.n,
        chi.df,
        chi.statistic,
        format_p(chi.p)
    ));

    out.push_str("## Fidelity regressions\n\n");
    out.push_str(&regression_table_markdown(
        "Measured fidelity ~ AI correctness x explanation",
        &report.regression_empirical,
    ));
    out.push('\n');
    out.push_str(&regression_table_markdown(
        "Modelled fidelity ~ AI correctness x explanation",
        &report.regression_model,
    ));
    out.push('\n');

    out.push_str("## Rate estimates\n\n");
    out.push_str("| Variant | lambda | SSE | At boundary |\n|---|---|---|---|\n");
    for fit in &report.fits {
        out.push_str(&format!(
            "| {} | {:.4} | {:.6} | {} |\n",
            fit.variant.as_str(),
            fit.lambda_hat,
            fit.sse,
            if fit.at_boundary { "yes" } else { "no" }
        ));
    }
    out.push('\n');

    out.push_str("## Cross-validated model comparison\n\n");
    let rows: Vec<(String, f64, Option<(f64, f64)>)> = report
        .loocv
        .iter()
        .map(|l| (l.variant.clone(), l.mse, None))
        .collect();
    out.push_str(&loocv_table_markdown(&rows));
    out.push('\n');
    out.push_str("Paired differences in LOO-CV squared error (baseline minus full; \
                  positive favors the full model):\n\n");
    for cmp in &report.comparisons {
        out.push_str(&format_comparison(cmp));
        out.push('\n');
    }
    out.push('\n');

    out.push_str("## Measured vs modelled fidelity\n\n");
    let s = &report.spearman;
    out.push_str(&format!(
        "Spearman rho = {:.3} across {} trials, p = {}.\n",
        s.rho,
        s.n,
        format_p(s.p)
    ));
    out
}

pub fn fidelity_csv(report: &Report) -> String {
    let mut out = String::from("trial_id,ai_correct,source,fidelity\n");
    for row in &report.fidelity {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.trial_id, row.ai_correct, row.source, row.fidelity
        ));
    }
    out
}

pub fn loocv_csv(report: &Report) -> String {
    let mut out = String::from("variant,mse\n");
    for l in &report.loocv {
        out.push_str(&format!("{},{}\n", l.variant, l.mse));
    }
    out
}

pub fn regression_csv(fit: &RegressionFit) -> String {
    tables::regression_table_csv(fit)
}

/// Writes report.json, report.md, and the two long-format CSVs into the
/// output directory.
pub fn write_report_files(cfg: &RunConfig, artifacts: &RunArtifacts) -> StageResult<Report> {
    use crate::pipeline::{FailureKind, StageFailure};
    let report = build_report(cfg, artifacts);
    let out = &cfg.paths.output;
    let fail = |e: std::io::Error, path: &std::path::Path| StageFailure {
        stage: "report",
        kind: FailureKind::Input,
        message: format!("{}: {e}", path.display()),
    };
    std::fs::create_dir_all(out).map_err(|e| fail(e, out))?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    for (name, text) in [
        ("report.json", json),
        ("report.md", render_markdown(&report)),
        ("fidelity_by_condition.csv", fidelity_csv(&report)),
        ("loocv_mse_by_variant.csv", loocv_csv(&report)),
        (
            "regression_empirical.csv",
            regression_csv(&report.regression_empirical),
        ),
        (
            "regression_model.csv",
            regression_csv(&report.regression_model),
        ),
    ] {
        let path = out.join(name);
        std::fs::write(&path, text).map_err(|e| fail(e, &path))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline;
    use crate::synth::{self, SynthConfig};

    fn artifacts(dir: &std::path::Path) -> (RunConfig, RunArtifacts) {
        let mut cfg = RunConfig::default();
        cfg.seed = 5;
        cfg.paths.corpus = dir.join("corpus");
        cfg.paths.output = dir.join("out");
        cfg.synth = SynthConfig {
            n_trials: 6,
            n_control: 10,
            n_explanation: 10,
            n_drawers: 4,
            grid_w: 8,
            grid_h: 8,
            seed: 5,
            ..SynthConfig::default()
        };
        cfg.bootstrap.n_boot = 100;
        let study = synth::generate_study(&cfg.synth).unwrap();
        study.write(&cfg.paths.corpus).unwrap();
        let artifacts = pipeline::run_all(&cfg).unwrap();
        (cfg, artifacts)
    }

    #[test]
    fn report_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, artifacts) = artifacts(dir.path());
        let report = build_report(&cfg, &artifacts);
        let json = serde_json::to_string(&report).unwrap();
        let back: Report = serde_json::from_str(&json).unwrap();
        assert_eq!(report, back);
        assert_eq!(report.schema_version, SCHEMA_VERSION);
        assert!(report.config.get("threads").is_none());
        // 2 empirical sources + 4 model variants, per trial.
        assert_eq!(report.fidelity.len(), 6 * cfg.synth.n_trials);
    }

    #[test]
    fn markdown_contains_every_section() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, artifacts) = artifacts(dir.path());
        let report = build_report(&cfg, &artifacts);
        let md = render_markdown(&report);
        for heading in [
            "## Corpus",
            "## Hypothesis summary",
            "## Prior beliefs",
            "## Fidelity regressions",
            "## Rate estimates",
            "## Cross-validated model comparison",
            "## Measured vs modelled fidelity",
        ] {
            assert!(md.contains(heading), "missing {heading}");
        }
        assert_eq!(
            xlab_core::tables::table_body_rows(
                &hypothesis_table_markdown(&report.hypotheses)
            )
            .len(),
            7
        );
    }

    #[test]
    fn write_report_files_creates_all_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, artifacts) = artifacts(dir.path());
        write_report_files(&cfg, &artifacts).unwrap();
        for name in [
            "report.json",
            "report.md",
            "fidelity_by_condition.csv",
            "loocv_mse_by_variant.csv",
            "regression_empirical.csv",
            "regression_model.csv",
        ] {
            assert!(cfg.paths.output.join(name).is_file(), "missing {name}");
        }
    }
}
