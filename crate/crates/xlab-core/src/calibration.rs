//! Fitting the generalization rate to behavior and comparing model
//! variants.
//!
//! The rate is fit by least squares between per-trial model posteriors and
//! empirical truth-choice proportions, searched in log space: a coarse scan
//! brackets the optimum, golden-section refines it. Variants are compared by
//! leave-one-out cross-validation with paired t-tests and percentile
//! bootstrap intervals over the per-trial error differences.

use alloc::string::String;
use alloc::vec::Vec;
use rand_core::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explainee::{posterior, ExplaineeError, ModelSpec, TrialEvidence, Variant};
use crate::generalization::GeneralizationRate;
use crate::rng::{next_index, next_unit_f64};
use crate::special::{student_t_two_sided_p, SpecialError};

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("no fit points given")]
    Empty,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("the prior-only variant has no free parameter to fit")]
    NoFreeParameter,
    #[error("fit target {0} is outside [0, 1]")]
    BadTarget(f64),
    #[error("paired samples differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("paired differences have zero variance")]
    DegenerateVariance,
    #[error("invalid search options: {0}")]
    BadOptions(&'static str),
    #[error(transparent)]
    Explainee(#[from] ExplaineeError),
    #[error(transparent)]
    Special(#[from] SpecialError),
}

/// One trial's evidence paired with the behavior to match.
#[derive(Debug, Clone, PartialEq)]
pub struct FitPoint {
    pub trial_id: String,
    pub evidence: TrialEvidence,
    pub target: f64,
}

/// Search space and stopping rule for the rate fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub coarse_points: usize,
    /// Stopping width of the golden-section bracket in ln-lambda.
    pub rel_tol: f64,
    /// Size of the post-hoc audit grid. If any audit point beats the fit,
    /// the search re-refines around it, so the fitted SSE never loses to
    /// this grid. 0 disables the audit.
    pub audit_points: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lambda_min: 1e-3,
            lambda_max: 1e3,
            coarse_points: 61,
            rel_tol: 1e-6,
            audit_points: 1000,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        if !(self.lambda_min > 0.0) || !(self.lambda_max > self.lambda_min) {
            return Err(CalibrationError::BadOptions(
                "need 0 < lambda_min < lambda_max",
            ));
        }
        if self.coarse_points < 2 {
            return Err(CalibrationError::BadOptions("need at least 2 coarse points"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(CalibrationError::BadOptions("rel_tol must be positive"));
        }
        if self.audit_points == 1 {
            return Err(CalibrationError::BadOptions(
                "audit grid needs 0 or at least 2 points",
            ));
        }
        Ok(())
    }
}

/// Result of a rate fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub variant: Variant,
    pub lambda_hat: f64,
    pub sse: f64,
    /// Set when the optimum sits against an edge of the search range,
    /// including the flat-landscape case (which drifts to the lower edge).
    pub at_boundary: bool,
    pub n_points: usize,
}

/// Sum of squared errors between model posteriors and targets at one rate.
pub fn sse(
    points: &[FitPoint],
    variant: Variant,
    rate: GeneralizationRate,
) -> Result<f64, CalibrationError> {
    if points.is_empty() {
        return Err(CalibrationError::Empty);
    }
    let spec = ModelSpec::new(variant, Some(rate))?;
    let mut total = 0.0;
    for p in points {
        if !(0.0..=1.0).contains(&p.target) {
            return Err(CalibrationError::BadTarget(p.target));
        }
        let pred = posterior(&p.evidence, &spec)?;
        let d = pred - p.target;
        total += d * d;
    }
    Ok(total)
}

/// Fits the generalization rate with default options.
pub fn fit_lambda(points: &[FitPoint], variant: Variant) -> Result<FitResult, CalibrationError> {
    fit_lambda_with(points, variant, FitOptions::default())
}

/// Fits the generalization rate: 61-point log-spaced scan (first minimum
/// wins ties, favoring the lowest rate), then golden-section refinement of
/// the bracketing interval in ln-lambda.
pub fn fit_lambda_with(
    points: &[FitPoint],
    variant: Variant,
    options: FitOptions,
) -> Result<FitResult, CalibrationError> {
    options.validate()?;
    if points.is_empty() {
        return Err(CalibrationError::Empty);
    }
    if variant == Variant::PriorOnly {
        return Err(CalibrationError::NoFreeParameter);
    }

    let ln_min = libm::log(options.lambda_min);
    let ln_max = libm::log(options.lambda_max);
    let m = options.coarse_points;
    let eval = |ln: f64| -> Result<f64, CalibrationError> {
        sse(points, variant, GeneralizationRate::new(libm::exp(ln)).expect("grid rate is positive"))
    };

    // Golden-section on a bracket; on ties the upper edge moves, so flat
    // landscapes collapse onto the lower end of the bracket.
    let golden = |mut lo: f64, mut hi: f64| -> Result<(f64, f64), CalibrationError> {
        let inv_phi = (libm::sqrt(5.0) - 1.0) / 2.0;
        let mut c = hi - inv_phi * (hi - lo);
        let mut d = lo + inv_phi * (hi - lo);
        let mut fc = eval(c)?;
        let mut fd = eval(d)?;
        while hi - lo > options.rel_tol {
            if fc <= fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - inv_phi * (hi - lo);
                fc = eval(c)?;
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + inv_phi * (hi - lo);
                fd = eval(d)?;
            }
        }
        let mid = (lo + hi) / 2.0;
        let fmid = eval(mid)?;
        Ok((mid, fmid))
    };

    // Scan a log-spaced grid, refine the bracket around its best point, and
    // keep whichever of the two wins.
    let scan_and_refine = |n: usize| -> Result<(f64, f64), CalibrationError> {
        let mut grid = Vec::with_capacity(n);
        let mut best_idx = 0;
        let mut best_sse = f64::INFINITY;
        for i in 0..n {
            let ln = ln_min + (ln_max - ln_min) * i as f64 / (n - 1) as f64;
            grid.push(ln);
            let s = eval(ln)?;
            if s < best_sse {
                best_sse = s;
                best_idx = i;
            }
        }
        let lo = grid[best_idx.saturating_sub(1)];
        let hi = grid[(best_idx + 1).min(n - 1)];
        let (refined_ln, refined_sse) = golden(lo, hi)?;
        if refined_sse <= best_sse {
            Ok((refined_ln, refined_sse))
        } else {
            Ok((grid[best_idx], best_sse))
        }
    };

    let (mut ln_hat, mut final_sse) = scan_and_refine(m)?;

    // Post-hoc audit: the coarse scan can miss a narrow basin between its
    // points. Rerun against the denser audit grid and, if that wins by more
    // than rounding noise, adopt its refinement.
    if options.audit_points >= 2 && options.audit_points != m {
        let (audit_ln, audit_sse) = scan_and_refine(options.audit_points)?;
        if audit_sse < final_sse - 1e-12 * final_sse.max(1.0) {
            log::warn!(
                "coarse rate scan missed a better basin (sse {final_sse} -> {audit_sse}); \
                 taking the audit-grid refinement"
            );
            ln_hat = audit_ln;
            final_sse = audit_sse;
        }
    }

    let edge_margin = 10.0 * options.rel_tol;
    let at_boundary = ln_hat - ln_min <= edge_margin || ln_max - ln_hat <= edge_margin;
    Ok(FitResult {
        variant,
        lambda_hat: libm::exp(ln_hat),
        sse: final_sse,
        at_boundary,
        n_points: points.len(),
    })
}

/// Per-trial squared errors from leave-one-out cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoocvResult {
    pub variant: Variant,
    /// (trial id, squared error), in input order.
    pub errors: Vec<(String, f64)>,
    pub mse: f64,
}

/// Leave-one-out CV: refit the rate on every fold, score the held-out
/// trial. The prior-only variant has nothing to fit, so its per-trial
/// errors (and MSE) equal the full-sample ones.
pub fn loocv(points: &[FitPoint], variant: Variant) -> Result<LoocvResult, CalibrationError> {
    loocv_with(points, variant, FitOptions::default())
}

pub fn loocv_with(
    points: &[FitPoint],
    variant: Variant,
    options: FitOptions,
) -> Result<LoocvResult, CalibrationError> {
    if points.len() < 2 {
        return Err(CalibrationError::TooFewPoints {
            needed: 2,
            got: points.len(),
        });
    }
    let mut errors = Vec::with_capacity(points.len());
    if variant == Variant::PriorOnly {
        let spec = ModelSpec::prior_only();
        for p in points {
            if !(0.0..=1.0).contains(&p.target) {
                return Err(CalibrationError::BadTarget(p.target));
            }
            let pred = posterior(&p.evidence, &spec)?;
            let d = pred - p.target;
            errors.push((p.trial_id.clone(), d * d));
        }
    } else {
        for held in 0..points.len() {
            let fold: Vec<FitPoint> = points
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != held)
                .map(|(_, p)| p.clone())
                .collect();
            let fit = fit_lambda_with(&fold, variant, options)?;
            let rate = GeneralizationRate::new(fit.lambda_hat)
                .expect("fitted rate lies in the positive search range");
            let spec = ModelSpec::new(variant, Some(rate))?;
            let p = &points[held];
            let pred = posterior(&p.evidence, &spec)?;
            let d = pred - p.target;
            errors.push((p.trial_id.clone(), d * d));
        }
    }
    let mse = errors.iter().map(|(_, e)| e).sum::<f64>() / errors.len() as f64;
    Ok(LoocvResult {
        variant,
        errors,
        mse,
    })
}

/// Paired t-test over two equal-length samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub mean_diff: f64,
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<PairedTTest, CalibrationError> {
    if a.len() != b.len() {
        return Err(CalibrationError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(CalibrationError::TooFewPoints { needed: 2, got: n });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Err(CalibrationError::DegenerateVariance);
    }
    let se = libm::sqrt(var / n as f64);
    let t = mean / se;
    let df = (n - 1) as f64;
    let p = student_t_two_sided_p(t, df)?;
    Ok(PairedTTest {
        mean_diff: mean,
        t,
        df,
        p,
    })
}

/// Percentile bootstrap interval for the mean of `values`.
pub fn bootstrap_ci(
    values: &[f64],
    n_boot: usize,
    seed: u64,
) -> Result<(f64, f64), CalibrationError> {
    bootstrap_ci_at(values, n_boot, seed, 0.025, 0.975)
}

/// Percentile bootstrap at arbitrary quantiles.
pub fn bootstrap_ci_at(
    values: &[f64],
    n_boot: usize,
    seed: u64,
    lo_q: f64,
    hi_q: f64,
) -> Result<(f64, f64), CalibrationError> {
    if values.is_empty() {
        return Err(CalibrationError::Empty);
    }
    if n_boot == 0 {
        return Err(CalibrationError::BadOptions("n_boot must be positive"));
    }
    if !(0.0..=1.0).contains(&lo_q) || !(0.0..=1.0).contains(&hi_q) || lo_q > hi_q {
        return Err(CalibrationError::BadOptions("quantiles must satisfy 0 <= lo <= hi <= 1"));
    }
    let n = values.len();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    // Consume one draw to decouple the stream from trivial seeds.
    let _ = next_unit_f64(&mut rng);
    let mut means = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        let mut acc = 0.0;
        for _ in 0..n {
            acc += values[next_index(&mut rng, n)];
        }
        means.push(acc / n as f64);
    }
    means.sort_by(f64::total_cmp);
    Ok((quantile_sorted(&means, lo_q), quantile_sorted(&means, hi_q)))
}

/// Linear-interpolation quantile of an ascending slice.
///
/// Evaluated as lo + frac*(hi - lo) with a clamp to the bracket top: both
/// steps round monotonically, so the quantile is exactly non-decreasing in
/// q (the symmetric two-product form wobbles by an ulp and is not).
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let step = sorted[lo + 1] - sorted[lo];
    (sorted[lo] + frac * step).min(sorted[lo + 1])
}
