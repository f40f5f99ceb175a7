//! CLI driver. Exit codes: 0 success, 1 usage or configuration error,
//! 2 stage input error, 3 stage computation error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use xlab::config::{ConfigError, RunConfig};
use xlab::pipeline::{self, FailureKind, RunArtifacts, StageFailure};
use xlab::report;
use xlab::synth::{self, SynthError};
use xlab::teach::{self, TeachError};
use xlab_core::calibration;
use xlab_core::explainee::{self, Variant};
use xlab_core::tables;
use xlab_core::{GeneralizationRate, ModelSpec};

const EXIT_USAGE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_COMPUTE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "xlab",
    version,
    about = "Bayesian model of how people read saliency explanations",
    propagate_version = true
)]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set model.lambda_max=500.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Corpus directory (overrides paths.corpus).
    #[arg(long, global = true, value_name = "DIR")]
    corpus: Option<String>,
    /// Output directory (overrides paths.output).
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic study corpus with known ground truth.
    Simulate,
    /// Produce machine-teaching explanation maps for every trial.
    Teach,
    /// Filter responses, exclude outlier drawers, build consensus maps.
    Aggregate,
    /// Estimate per-trial prior and empirical response proportions.
    Prior,
    /// Predict per-trial posteriors for one model variant.
    Predict {
        /// full, prior_only, l1, or beta.
        #[arg(long, default_value = "full")]
        variant: String,
        /// Use this rate instead of fitting one.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Fit the generalization rate for one parametric variant.
    Fit {
        #[arg(long, default_value = "full")]
        variant: String,
    },
    /// Leave-one-out cross-validation for all configured variants.
    Loocv,
    /// Run the models and the hypothesis battery; write the report.
    Analyze,
    /// Full pipeline: everything above plus all stage artifacts.
    Run,
}

struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

impl From<StageFailure> for Failure {
    fn from(e: StageFailure) -> Self {
        Failure {
            code: match e.kind {
                FailureKind::Input => EXIT_INPUT,
                FailureKind::Compute => EXIT_COMPUTE,
            },
            message: e.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        usage(e.to_string())
    }
}

fn synth_failure(e: SynthError) -> Failure {
    let code = match &e {
        SynthError::BadConfig(_) | SynthError::UnknownParticipant(_) => EXIT_USAGE,
        SynthError::Corpus(_) | SynthError::Grid(_) => EXIT_INPUT,
        SynthError::DegenerateShapes { .. } | SynthError::Model(_) => EXIT_COMPUTE,
    };
    Failure {
        code,
        message: e.to_string(),
    }
}

fn teach_failure(e: TeachError) -> Failure {
    Failure {
        code: EXIT_INPUT,
        message: e.to_string(),
    }
}

fn compute_failure(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_COMPUTE,
        message: e.to_string(),
    }
}

fn toml_quote(raw: &str) -> String {
    toml::Value::String(raw.to_string()).to_string()
}

fn build_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut overrides = cli.set.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(threads) = cli.threads {
        overrides.push(format!("threads={threads}"));
    }
    if let Some(corpus) = &cli.corpus {
        overrides.push(format!("paths.corpus={}", toml_quote(corpus)));
    }
    if let Some(output) = &cli.output {
        overrides.push(format!("paths.output={}", toml_quote(output)));
    }
    Ok(RunConfig::load(cli.config.as_deref(), &overrides)?)
}

fn parse_variant(raw: &str) -> Result<Variant, Failure> {
    Variant::parse(raw).ok_or_else(|| {
        usage(format!(
            "unknown variant {raw:?}; expected full, prior_only, l1, or beta"
        ))
    })
}

fn cmd_simulate(cfg: &RunConfig) -> Result<(), Failure> {
    let mut synth_cfg = cfg.synth.clone();
    synth_cfg.seed = cfg.seed;
    let study = synth::generate_study(&synth_cfg).map_err(synth_failure)?;
    study.write(&cfg.paths.corpus).map_err(synth_failure)?;
    println!(
        "simulated corpus: {} trials, {} drawers, seed {} -> {}",
        synth_cfg.n_trials,
        synth_cfg.n_drawers,
        synth_cfg.seed,
        cfg.paths.corpus.display()
    );
    Ok(())
}

fn cmd_teach(cfg: &RunConfig) -> Result<(), Failure> {
    let study = pipeline::load_corpus(cfg)?;
    let outcome = teach::run_teach(cfg, &study).map_err(teach_failure)?;
    println!(
        "wrote {} teaching artifacts to {}",
        outcome.written.len(),
        cfg.paths.corpus.display()
    );
    if outcome.failures.is_empty() {
        return Ok(());
    }
    let path = cfg.paths.output.join("teach_errors.json");
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| usage(format!("{}: {e}", parent.display())))?;
    }
    let body = serde_json::to_string_pretty(&outcome.failures).expect("failures serialize") + "\n";
    std::fs::write(&path, body).map_err(|e| Failure {
        code: EXIT_INPUT,
        message: format!("{}: {e}", path.display()),
    })?;
    Err(Failure {
        code: EXIT_INPUT,
        message: format!(
            "{} trial(s) failed during teaching; see {}",
            outcome.failures.len(),
            path.display()
        ),
    })
}

fn cmd_aggregate(cfg: &RunConfig) -> Result<(), Failure> {
    let prepared = pipeline::prepare_data(cfg)?;
    pipeline::write_aggregate_artifacts(cfg, &prepared)?;
    println!(
        "consensus over {} trial-class pairs; excluded truth: {}, foil: {} -> {}",
        prepared.consensus.len(),
        prepared.exclusion_truth.excluded.len(),
        prepared.exclusion_foil.excluded.len(),
        cfg.paths.output.display()
    );
    Ok(())
}

fn cmd_prior(cfg: &RunConfig) -> Result<(), Failure> {
    let prepared = pipeline::prepare_data(cfg)?;
    pipeline::write_prior_artifacts(cfg, &prepared)?;
    println!(
        "prior and empirical tables for {} trials -> {}",
        prepared.priors.entries.len(),
        cfg.paths.output.display()
    );
    Ok(())
}

fn spec_for_cli(
    cfg: &RunConfig,
    prepared: &pipeline::PreparedStudy,
    variant: Variant,
    lambda: Option<f64>,
) -> Result<ModelSpec, Failure> {
    match (variant, lambda) {
        (Variant::PriorOnly, None) => Ok(ModelSpec::prior_only()),
        (Variant::PriorOnly, Some(_)) => {
            Err(usage("prior_only has no rate parameter; drop --lambda"))
        }
        (v, Some(l)) => {
            let rate = GeneralizationRate::new(l).map_err(|e| usage(e.to_string()))?;
            ModelSpec::new(v, Some(rate)).map_err(|e| usage(e.to_string()))
        }
        (v, None) => {
            let points = pipeline::fit_points(prepared)?;
            let options = cfg.fit_options()?;
            let fit =
                calibration::fit_lambda_with(&points, v, options).map_err(compute_failure)?;
            let rate = GeneralizationRate::new(fit.lambda_hat).map_err(compute_failure)?;
            ModelSpec::new(v, Some(rate)).map_err(compute_failure)
        }
    }
}

fn cmd_predict(cfg: &RunConfig, variant: &str, lambda: Option<f64>) -> Result<(), Failure> {
    let variant = parse_variant(variant)?;
    if variant == Variant::PriorOnly && lambda.is_some() {
        return Err(usage("prior_only has no rate parameter; drop --lambda"));
    }
    if let Some(l) = lambda {
        GeneralizationRate::new(l).map_err(|e| usage(e.to_string()))?;
    }
    let prepared = pipeline::prepare(cfg)?;
    let spec = spec_for_cli(cfg, &prepared, variant, lambda)?;
    let priors = prepared.priors.values_by_trial();
    let records = explainee::predict_corpus(
        prepared.trials(),
        &priors,
        &prepared.consensus,
        &prepared.observed,
        &spec,
    )
    .map_err(compute_failure)?;
    pipeline::write_prediction_artifacts(cfg, variant, &records)?;
    match spec.rate() {
        Some(rate) => println!(
            "{}: predictions for {} trials at lambda = {} -> {}",
            variant.as_str(),
            records.len(),
            rate.value(),
            cfg.paths.output.display()
        ),
        None => println!(
            "{}: predictions for {} trials -> {}",
            variant.as_str(),
            records.len(),
            cfg.paths.output.display()
        ),
    }
    Ok(())
}

fn cmd_fit(cfg: &RunConfig, variant: &str) -> Result<(), Failure> {
    let variant = parse_variant(variant)?;
    if !variant.is_parametric() {
        return Err(usage("prior_only has no rate parameter to fit"));
    }
    let prepared = pipeline::prepare(cfg)?;
    let points = pipeline::fit_points(&prepared)?;
    let options = cfg.fit_options()?;
    let fit = calibration::fit_lambda_with(&points, variant, options).map_err(compute_failure)?;
    pipeline::write_fit_artifact(cfg, &fit)?;
    println!(
        "{}: lambda = {} over {} trials, sse = {}{}",
        variant.as_str(),
        fit.lambda_hat,
        fit.n_points,
        fit.sse,
        if fit.at_boundary {
            " (at search boundary)"
        } else {
            ""
        }
    );
    Ok(())
}

fn cmd_loocv(cfg: &RunConfig) -> Result<(), Failure> {
    let prepared = pipeline::prepare(cfg)?;
    let points = pipeline::fit_points(&prepared)?;
    let options = cfg.fit_options()?;
    for variant in cfg.variants()? {
        let cv = calibration::loocv_with(&points, variant, options).map_err(compute_failure)?;
        pipeline::write_loocv_artifact(cfg, &cv)?;
        println!("{}: loocv mse = {}", variant.as_str(), cv.mse);
    }
    Ok(())
}

fn finish_report(cfg: &RunConfig, artifacts: &RunArtifacts) -> Result<(), Failure> {
    let report = report::write_report_files(cfg, artifacts)?;
    print!("{}", tables::hypothesis_table_markdown(&report.hypotheses));
    println!();
    println!(
        "report written to {}",
        cfg.paths.output.join("report.md").display()
    );
    Ok(())
}

fn cmd_analyze(cfg: &RunConfig) -> Result<(), Failure> {
    let prepared = pipeline::prepare(cfg)?;
    let models = pipeline::run_models(cfg, &prepared)?;
    let battery = pipeline::hypothesis_battery(&prepared, &models)?;
    let artifacts = RunArtifacts {
        prepared,
        models,
        battery,
    };
    finish_report(cfg, &artifacts)
}

fn cmd_run(cfg: &RunConfig) -> Result<(), Failure> {
    let artifacts = pipeline::run_all(cfg)?;
    pipeline::write_all_artifacts(cfg, &artifacts)?;
    finish_report(cfg, &artifacts)
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let cfg = build_config(cli)?;
    if cfg.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
        {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match &cli.command {
        Command::Simulate => cmd_simulate(&cfg),
        Command::Teach => cmd_teach(&cfg),
        Command::Aggregate => cmd_aggregate(&cfg),
        Command::Prior => cmd_prior(&cfg),
        Command::Predict { variant, lambda } => cmd_predict(&cfg, variant, *lambda),
        Command::Fit { variant } => cmd_fit(&cfg, variant),
        Command::Loocv => cmd_loocv(&cfg),
        Command::Analyze => cmd_analyze(&cfg),
        Command::Run => cmd_run(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
