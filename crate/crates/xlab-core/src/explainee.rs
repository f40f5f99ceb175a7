//! The explainee model: a Bayesian observer updating a prior over the two
//! candidate classes after seeing a saliency-map explanation.
//!
//! The observer treats the explanation as evidence whose likelihood under
//! each class is a generalization curve applied to the explanation's
//! similarity to that class's consensus map. Ablations swap the curve
//! (Beta density), the geometry (L1 on normalized maps), or remove the
//! evidence entirely (prior only).

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use rand_core::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generalization::{
    beta_generalization, exp_generalization, exp_generalization_l1, GeneralizationError,
    GeneralizationRate,
};
use crate::grid::FloatGrid;
use crate::rng::next_unit_f64;
use crate::similarity::{
    normalized_l1, scaled_similarity, L1Distance, SimilarityError, SimilarityScore,
};
use crate::study::{ClassRole, TrialSpec};

/// Model variants: the full model and its three ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    PriorOnly,
    L1,
    Beta,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::PriorOnly, Variant::L1, Variant::Beta];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::PriorOnly => "prior_only",
            Variant::L1 => "l1",
            Variant::Beta => "beta",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(Variant::Full),
            "prior_only" => Some(Variant::PriorOnly),
            "l1" => Some(Variant::L1),
            "beta" => Some(Variant::Beta),
            _ => None,
        }
    }

    /// Whether the variant has a free generalization rate.
    pub fn is_parametric(self) -> bool {
        self != Variant::PriorOnly
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ExplaineeError {
    #[error("variant {variant} requires a generalization rate", variant = .0.as_str())]
    MissingRate(Variant),
    #[error("variant prior_only takes no generalization rate")]
    UnexpectedRate,
    #[error("prior probability must lie in [0, 1], got {0}")]
    BadPrior(f64),
    #[error("variant {variant} needs {what} evidence, which is unavailable for this trial",
            variant = .variant.as_str())]
    MissingEvidence {
        variant: Variant,
        what: &'static str,
    },
    #[error("missing {kind} for trials: {}", trial_ids.join(", "))]
    MissingArtifacts {
        kind: &'static str,
        trial_ids: Vec<String>,
    },
    #[error(transparent)]
    Generalization(#[from] GeneralizationError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

/// A model variant plus its rate (absent exactly for the prior-only model).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    variant: Variant,
    rate: Option<GeneralizationRate>,
}

impl ModelSpec {
    pub fn new(variant: Variant, rate: Option<GeneralizationRate>) -> Result<Self, ExplaineeError> {
        match (variant, rate) {
            (Variant::PriorOnly, Some(_)) => Err(ExplaineeError::UnexpectedRate),
            (Variant::PriorOnly, None) => Ok(Self { variant, rate: None }),
            (_, None) => Err(ExplaineeError::MissingRate(variant)),
            (_, Some(r)) => Ok(Self {
                variant,
                rate: Some(r),
            }),
        }
    }

    pub fn full(rate: GeneralizationRate) -> Self {
        Self {
            variant: Variant::Full,
            rate: Some(rate),
        }
    }

    pub fn prior_only() -> Self {
        Self {
            variant: Variant::PriorOnly,
            rate: None,
        }
    }

    pub fn l1(rate: GeneralizationRate) -> Self {
        Self {
            variant: Variant::L1,
            rate: Some(rate),
        }
    }

    pub fn beta(rate: GeneralizationRate) -> Self {
        Self {
            variant: Variant::Beta,
            rate: Some(rate),
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn rate(&self) -> Option<GeneralizationRate> {
        self.rate
    }

    /// Same variant, different rate. Used by the fitting loop.
    pub fn with_rate(&self, rate: GeneralizationRate) -> Self {
        match self.variant {
            Variant::PriorOnly => *self,
            v => Self {
                variant: v,
                rate: Some(rate),
            },
        }
    }
}

/// Everything the posterior needs for one trial. Similarity readings are
/// optional because not every variant needs every reading, and L1 evidence
/// can be unavailable (zero-mass maps).
#[derive(Debug, Clone, PartialEq)]
pub struct TrialEvidence {
    prior_truth: f64,
    pub sim_truth: Option<SimilarityScore>,
    pub sim_foil: Option<SimilarityScore>,
    pub l1_truth: Option<L1Distance>,
    pub l1_foil: Option<L1Distance>,
}

impl TrialEvidence {
    pub fn new(prior_truth: f64) -> Result<Self, ExplaineeError> {
        if !(0.0..=1.0).contains(&prior_truth) {
            return Err(ExplaineeError::BadPrior(prior_truth));
        }
        Ok(Self {
            prior_truth,
            sim_truth: None,
            sim_foil: None,
            l1_truth: None,
            l1_foil: None,
        })
    }

    pub fn prior_truth(&self) -> f64 {
        self.prior_truth
    }

    pub fn with_similarities(mut self, truth: SimilarityScore, foil: SimilarityScore) -> Self {
        self.sim_truth = Some(truth);
        self.sim_foil = Some(foil);
        self
    }

    pub fn with_l1(mut self, truth: L1Distance, foil: L1Distance) -> Self {
        self.l1_truth = Some(truth);
        self.l1_foil = Some(foil);
        self
    }
}

/// Computes the sims an explanation map provides for both classes.
///
/// Cosine evidence is always available. L1 evidence is `None` when either
/// map has zero mass; variants that need it will then fail loudly for this
/// trial instead of silently inventing numbers.
pub fn build_evidence(
    observed: &FloatGrid,
    consensus_truth: &FloatGrid,
    consensus_foil: &FloatGrid,
    prior_truth: f64,
) -> Result<TrialEvidence, ExplaineeError> {
    let mut ev = TrialEvidence::new(prior_truth)?;
    let sim_t = scaled_similarity(observed, consensus_truth)?;
    let sim_f = scaled_similarity(observed, consensus_foil)?;
    ev = ev.with_similarities(sim_t, sim_f);
    match (
        normalized_l1(observed, consensus_truth),
        normalized_l1(observed, consensus_foil),
    ) {
        (Ok(dt), Ok(df)) => Ok(ev.with_l1(dt, df)),
        (Err(SimilarityError::ZeroMass), _) | (_, Err(SimilarityError::ZeroMass)) => {
            log::warn!("zero-mass map: L1 evidence unavailable for this trial");
            Ok(ev)
        }
        (Err(e), _) | (_, Err(e)) => Err(e.into()),
    }
}

/// Warns the first time a degenerate-likelihood fallback fires; later hits
/// log at debug. Rate fitting scans extreme rates where underflow is
/// routine, and one line per evaluation would swamp the log.
fn warn_fallback_once(flag: &core::sync::atomic::AtomicBool, message: &str) {
    use core::sync::atomic::Ordering;
    if !flag.swap(true, Ordering::Relaxed) {
        log::warn!("{message} (further occurrences logged at debug level)");
    } else {
        log::debug!("{message}");
    }
}

static BOTH_ZERO_WARNED: core::sync::atomic::AtomicBool =
    core::sync::atomic::AtomicBool::new(false);
static UNDERFLOW_WARNED: core::sync::atomic::AtomicBool =
    core::sync::atomic::AtomicBool::new(false);

/// Two-class Bayes rule p*l_t / (p*l_t + (1-p)*l_f), with the exact
/// shortcuts the likelihood ratio admits.
///
/// When both likelihoods compare equal the evidence is uninformative and the
/// prior is returned unchanged (exactly; no rounding through the normalizer).
/// This also covers the degenerate both-zero case, which additionally warns.
pub fn posterior_from_likelihoods(prior_truth: f64, like_truth: f64, like_foil: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&prior_truth));
    debug_assert!(like_truth >= 0.0 && like_foil >= 0.0);
    if like_truth == like_foil {
        if like_truth == 0.0 {
            warn_fallback_once(
                &BOTH_ZERO_WARNED,
                "both class likelihoods are zero; falling back to the prior",
            );
        }
        return prior_truth;
    }
    let num = prior_truth * like_truth;
    let den = num + (1.0 - prior_truth) * like_foil;
    if den == 0.0 {
        // Possible only through underflow with unequal likelihoods.
        warn_fallback_once(
            &UNDERFLOW_WARNED,
            "posterior normalizer underflowed to zero; falling back to the prior",
        );
        return prior_truth;
    }
    num / den
}

/// General k-class Bayes rule over unnormalized priors and likelihoods.
pub fn posterior_multi(priors: &[f64], likelihoods: &[f64]) -> Result<Vec<f64>, ExplaineeError> {
    if priors.len() != likelihoods.len() || priors.is_empty() {
        return Err(ExplaineeError::MissingEvidence {
            variant: Variant::Full,
            what: "matching prior/likelihood vectors",
        });
    }
    for &p in priors {
        if !(p >= 0.0) || !p.is_finite() {
            return Err(ExplaineeError::BadPrior(p));
        }
    }
    let weights: Vec<f64> = priors
        .iter()
        .zip(likelihoods)
        .map(|(&p, &l)| p * l)
        .collect();
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        let prior_total: f64 = priors.iter().sum();
        if prior_total == 0.0 {
            return Err(ExplaineeError::BadPrior(0.0));
        }
        log::warn!("all posterior weights are zero; falling back to normalized priors");
        return Ok(priors.iter().map(|&p| p / prior_total).collect());
    }
    Ok(weights.iter().map(|&w| w / total).collect())
}

/// Posterior probability of the ground-truth class given one trial's
/// evidence under a model variant.
pub fn posterior(evidence: &TrialEvidence, spec: &ModelSpec) -> Result<f64, ExplaineeError> {
    let prior = evidence.prior_truth;
    match spec.variant {
        Variant::PriorOnly => Ok(prior),
        Variant::Full => {
            let (st, sf) = require_sims(evidence, Variant::Full)?;
            let rate = spec.rate.expect("parametric spec always carries a rate");
            let lt = exp_generalization(st.value(), rate)?;
            let lf = exp_generalization(sf.value(), rate)?;
            Ok(posterior_from_likelihoods(prior, lt, lf))
        }
        Variant::Beta => {
            let (st, sf) = require_sims(evidence, Variant::Beta)?;
            let rate = spec.rate.expect("parametric spec always carries a rate");
            let lt = beta_generalization(st.value(), rate)?;
            let lf = beta_generalization(sf.value(), rate)?;
            Ok(posterior_from_likelihoods(prior, lt, lf))
        }
        Variant::L1 => {
            let (dt, df) = match (evidence.l1_truth, evidence.l1_foil) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(ExplaineeError::MissingEvidence {
                        variant: Variant::L1,
                        what: "L1 distance",
                    })
                }
            };
            let rate = spec.rate.expect("parametric spec always carries a rate");
            let lt = exp_generalization_l1(dt.value(), rate)?;
            let lf = exp_generalization_l1(df.value(), rate)?;
            Ok(posterior_from_likelihoods(prior, lt, lf))
        }
    }
}

fn require_sims(
    evidence: &TrialEvidence,
    variant: Variant,
) -> Result<(SimilarityScore, SimilarityScore), ExplaineeError> {
    match (evidence.sim_truth, evidence.sim_foil) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(ExplaineeError::MissingEvidence {
            variant,
            what: "cosine similarity",
        }),
    }
}

/// Probability the observer picks the class the classifier picked.
pub fn fidelity(posterior_truth: f64, ai_class: ClassRole) -> f64 {
    match ai_class {
        ClassRole::Truth => posterior_truth,
        ClassRole::Foil => 1.0 - posterior_truth,
    }
}

/// Model output for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorRecord {
    pub trial_id: String,
    pub posterior_truth: f64,
    pub fidelity: f64,
}

/// Runs the model over a whole trial list.
///
/// `consensus` is keyed by (trial id, class role); `observed` holds the
/// explanation map shown for each trial. All artifacts a variant needs must
/// be present for every trial; missing ones are reported together, by id.
/// Output order equals the trial list order.
pub fn predict_corpus(
    trials: &[TrialSpec],
    priors: &BTreeMap<String, f64>,
    consensus: &BTreeMap<(String, ClassRole), FloatGrid>,
    observed: &BTreeMap<String, crate::grid::SaliencyMap>,
    spec: &ModelSpec,
) -> Result<Vec<PosteriorRecord>, ExplaineeError> {
    let needs_maps = spec.variant() != Variant::PriorOnly;
    let mut missing: Vec<String> = Vec::new();
    for trial in trials {
        let id = &trial.trial_id;
        let mut absent = !priors.contains_key(id);
        if needs_maps {
            absent |= !observed.contains_key(id)
                || !consensus.contains_key(&(id.clone(), ClassRole::Truth))
                || !consensus.contains_key(&(id.clone(), ClassRole::Foil));
        }
        if absent {
            missing.push(id.clone());
        }
    }
    if !missing.is_empty() {
        return Err(ExplaineeError::MissingArtifacts {
            kind: if needs_maps {
                "prior or map artifacts"
            } else {
                "prior"
            },
            trial_ids: missing,
        });
    }

    let mut out = Vec::with_capacity(trials.len());
    for trial in trials {
        let id = &trial.trial_id;
        let prior = priors[id];
        let evidence = if needs_maps {
            let obs = &observed[id];
            let cons_t = &consensus[&(id.clone(), ClassRole::Truth)];
            let cons_f = &consensus[&(id.clone(), ClassRole::Foil)];
            build_evidence(obs.grid(), cons_t, cons_f, prior)?
        } else {
            TrialEvidence::new(prior)?
        };
        let post = posterior(&evidence, spec)?;
        out.push(PosteriorRecord {
            trial_id: id.clone(),
            posterior_truth: post,
            fidelity: fidelity(post, trial.ai_class),
        });
    }
    Ok(out)
}

/// Samples `n` independent 2AFC choices with truth probability `p_truth`.
pub fn sample_responses(p_truth: f64, n: usize, seed: u64) -> Result<Vec<ClassRole>, ExplaineeError> {
    if !(0.0..=1.0).contains(&p_truth) {
        return Err(ExplaineeError::BadPrior(p_truth));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            if next_unit_f64(&mut rng) < p_truth {
                ClassRole::Truth
            } else {
                ClassRole::Foil
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;
    use crate::grid::SaliencyMap;

    fn rate(v: f64) -> GeneralizationRate {
        GeneralizationRate::new(v).unwrap()
    }

    fn sim(v: f64) -> SimilarityScore {
        SimilarityScore::new(v).unwrap()
    }

    #[test]
    fn posterior_reference_points() {
        let ev = TrialEvidence::new(0.5)
            .unwrap()
            .with_similarities(sim(1.0), sim(0.0));
        let p = posterior(&ev, &ModelSpec::full(rate(1.0))).unwrap();
        assert!((p - 0.731_058_578_630_004_879_3).abs() < 1e-15);

        let ev2 = TrialEvidence::new(0.5)
            .unwrap()
            .with_similarities(sim(0.9), sim(0.3));
        let p2 = posterior(&ev2, &ModelSpec::full(rate(2.0))).unwrap();
        assert!((p2 - 0.768_524_783_499_017_642_9).abs() < 1e-15);
    }

    #[test]
    fn extreme_priors_are_absorbing() {
        let ev = TrialEvidence::new(0.0)
            .unwrap()
            .with_similarities(sim(1.0), sim(0.0));
        assert_eq!(posterior(&ev, &ModelSpec::full(rate(5.0))).unwrap(), 0.0);
        let ev1 = TrialEvidence::new(1.0)
            .unwrap()
            .with_similarities(sim(0.0), sim(1.0));
        assert_eq!(posterior(&ev1, &ModelSpec::full(rate(5.0))).unwrap(), 1.0);
    }

    #[test]
    fn equal_likelihoods_return_prior_bitwise() {
        for prior in [0.1, 0.3, 0.7310585786300049, 0.9] {
            let p = posterior_from_likelihoods(prior, 0.25, 0.25);
            assert_eq!(p.to_bits(), prior.to_bits());
            let z = posterior_from_likelihoods(prior, 0.0, 0.0);
            assert_eq!(z.to_bits(), prior.to_bits());
        }
    }

    #[test]
    fn beta_at_rate_one_collapses_to_prior_exactly() {
        let ev = TrialEvidence::new(0.638_712_934_5)
            .unwrap()
            .with_similarities(sim(0.82), sim(0.17));
        let p = posterior(&ev, &ModelSpec::beta(rate(1.0))).unwrap();
        assert_eq!(p.to_bits(), 0.638_712_934_5_f64.to_bits());
    }

    #[test]
    fn prior_only_ignores_evidence() {
        let ev = TrialEvidence::new(0.77)
            .unwrap()
            .with_similarities(sim(1.0), sim(0.0));
        assert_eq!(posterior(&ev, &ModelSpec::prior_only()).unwrap(), 0.77);
    }

    #[test]
    fn l1_variant_uses_distances() {
        let ev = TrialEvidence::new(0.5)
            .unwrap()
            .with_l1(L1Distance::new(0.0).unwrap(), L1Distance::new(1.0).unwrap());
        let p = posterior(&ev, &ModelSpec::l1(rate(1.0))).unwrap();
        // Likelihood ratio e, so posterior = e / (e + 1).
        let e = core::f64::consts::E;
        assert!((p - e / (e + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn missing_evidence_is_loud() {
        let ev = TrialEvidence::new(0.5).unwrap();
        assert!(matches!(
            posterior(&ev, &ModelSpec::full(rate(1.0))),
            Err(ExplaineeError::MissingEvidence { .. })
        ));
        assert!(matches!(
            posterior(&ev, &ModelSpec::l1(rate(1.0))),
            Err(ExplaineeError::MissingEvidence { .. })
        ));
    }

    #[test]
    fn spec_construction_rules() {
        assert!(ModelSpec::new(Variant::Full, None).is_err());
        assert!(ModelSpec::new(Variant::PriorOnly, Some(rate(1.0))).is_err());
        assert!(ModelSpec::new(Variant::PriorOnly, None).is_ok());
        assert!(ModelSpec::new(Variant::Beta, Some(rate(2.0))).is_ok());
    }

    #[test]
    fn fidelity_tracks_ai_choice() {
        assert_eq!(fidelity(0.7, ClassRole::Truth), 0.7);
        assert!((fidelity(0.7, ClassRole::Foil) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn sample_responses_degenerate_and_lln() {
        let all_truth = sample_responses(1.0, 500, 7).unwrap();
        assert!(all_truth.iter().all(|&c| c == ClassRole::Truth));
        let all_foil = sample_responses(0.0, 500, 7).unwrap();
        assert!(all_foil.iter().all(|&c| c == ClassRole::Foil));

        let n = 100_000;
        let draws = sample_responses(0.73, n, 11).unwrap();
        let frac = draws.iter().filter(|&&c| c == ClassRole::Truth).count() as f64 / n as f64;
        assert!((frac - 0.73).abs() < 0.005, "frac {frac}");

        let again = sample_responses(0.73, n, 11).unwrap();
        assert_eq!(draws, again);
    }

    #[test]
    fn predict_corpus_reports_all_missing_trials() {
        let trials = vec![
            TrialSpec {
                trial_id: "t1".to_string(),
                image_path: "i1".to_string(),
                truth_class: "a".to_string(),
                foil_class: "b".to_string(),
                ai_class: ClassRole::Truth,
            },
            TrialSpec {
                trial_id: "t2".to_string(),
                image_path: "i2".to_string(),
                truth_class: "c".to_string(),
                foil_class: "d".to_string(),
                ai_class: ClassRole::Foil,
            },
        ];
        let mut priors = BTreeMap::new();
        priors.insert("t1".to_string(), 0.6);
        priors.insert("t2".to_string(), 0.4);
        let err = predict_corpus(
            &trials,
            &priors,
            &BTreeMap::new(),
            &BTreeMap::new(),
            &ModelSpec::full(rate(1.0)),
        )
        .unwrap_err();
        match err {
            ExplaineeError::MissingArtifacts { trial_ids, .. } => {
                assert_eq!(trial_ids, vec!["t1".to_string(), "t2".to_string()]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn predict_corpus_prior_only_needs_no_maps() {
        let trials = vec![TrialSpec {
            trial_id: "t1".to_string(),
            image_path: "i1".to_string(),
            truth_class: "a".to_string(),
            foil_class: "b".to_string(),
            ai_class: ClassRole::Foil,
        }];
        let mut priors = BTreeMap::new();
        priors.insert("t1".to_string(), 0.6);
        let recs = predict_corpus(
            &trials,
            &priors,
            &BTreeMap::new(),
            &BTreeMap::new(),
            &ModelSpec::prior_only(),
        )
        .unwrap();
        assert_eq!(recs[0].posterior_truth, 0.6);
        assert!((recs[0].fidelity - 0.4).abs() < 1e-15);
    }

    #[test]
    fn predict_corpus_full_matches_manual_computation() {
        let trials = vec![TrialSpec {
            trial_id: "t1".to_string(),
            image_path: "i1".to_string(),
            truth_class: "a".to_string(),
            foil_class: "b".to_string(),
            ai_class: ClassRole::Truth,
        }];
        let mut priors = BTreeMap::new();
        priors.insert("t1".to_string(), 0.5);
        let mut consensus = BTreeMap::new();
        consensus.insert(
            ("t1".to_string(), ClassRole::Truth),
            FloatGrid::new(2, 1, 1, vec![0.0, 1.0]).unwrap(),
        );
        consensus.insert(
            ("t1".to_string(), ClassRole::Foil),
            FloatGrid::new(2, 1, 1, vec![1.0, 0.0]).unwrap(),
        );
        let mut observed = BTreeMap::new();
        observed.insert(
            "t1".to_string(),
            SaliencyMap::new(FloatGrid::new(2, 1, 1, vec![0.0, 1.0]).unwrap()).unwrap(),
        );
        let recs = predict_corpus(
            &trials,
            &priors,
            &consensus,
            &observed,
            &ModelSpec::full(rate(1.0)),
        )
        .unwrap();
        // sim_truth = 1, sim_foil = 0 at prior 0.5: the first reference point.
        assert!((recs[0].posterior_truth - 0.731_058_578_630_004_879_3).abs() < 1e-15);
    }
}
