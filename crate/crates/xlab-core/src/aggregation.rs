//! Aggregating participant data: outlier exclusion over drawn masks,
//! consensus (mean) masks, response proportions, and the response-time
//! filter.
//!
//! Exclusion is iterative: score every unit's mean L2 deviation from the
//! current per-trial aggregates against a half-normal fitted to those
//! deviations, drop units above the z threshold, recompute, and repeat until
//! a pass drops no one.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::FloatGrid;
use crate::study::{ClassRole, Condition, MaskRecord, ResponseRecord, TrialSpec};

#[derive(Debug, Error, PartialEq)]
pub enum AggregationError {
    #[error("no mask records to aggregate")]
    NoMasks,
    #[error("exclusion threshold must be finite and >= 1, got {0}")]
    BadThreshold(f64),
    #[error("no {condition} responses for trials: {}", trial_ids.join(", "))]
    NoResponses {
        condition: &'static str,
        trial_ids: Vec<String>,
    },
    #[error("all masks for trial {trial_id} ({target}) were excluded")]
    EmptyGroup { trial_id: String, target: &'static str },
}

/// What gets excluded as one unit: a whole participant, or one
/// participant-trial mask in per-image mode.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExclusionUnit {
    pub participant_id: String,
    /// `None` in participant mode.
    pub trial_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionMode {
    Participant,
    PerImage,
}

/// One unit's deviation score in one pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitScore {
    pub unit: ExclusionUnit,
    pub mean_deviation: f64,
    pub z: f64,
}

/// One pass of the exclusion loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionIteration {
    pub sigma_hat: f64,
    pub scores: Vec<UnitScore>,
    pub excluded: Vec<ExclusionUnit>,
}

/// Full record of an exclusion run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub threshold: f64,
    pub mode: ExclusionMode,
    pub iterations: Vec<ExclusionIteration>,
    pub excluded: Vec<ExclusionUnit>,
    pub included: Vec<ExclusionUnit>,
}

impl ExclusionReport {
    pub fn is_excluded(&self, participant_id: &str, trial_id: &str) -> bool {
        self.excluded.iter().any(|u| {
            u.participant_id == participant_id
                && u.trial_id.as_deref().map_or(true, |t| t == trial_id)
        })
    }
}

/// Half-normal z-scores for a list of mean deviations.
///
/// The scale is sigma-hat = sqrt(mean of squared deviations). When every
/// deviation is zero the scale is zero and all z-scores are defined as 0,
/// which terminates the exclusion loop without dropping anyone.
pub fn half_normal_scores(means: &[f64]) -> (f64, Vec<f64>) {
    if means.is_empty() {
        return (0.0, vec![]);
    }
    let ms: f64 = means.iter().map(|m| m * m).sum::<f64>() / means.len() as f64;
    let sigma = libm::sqrt(ms);
    if sigma == 0.0 {
        return (0.0, vec![0.0; means.len()]);
    }
    (sigma, means.iter().map(|m| m / sigma).collect())
}

/// Participant-level exclusion (the default granularity).
pub fn exclude_outliers(
    masks: &[MaskRecord],
    threshold: f64,
) -> Result<ExclusionReport, AggregationError> {
    exclude_outliers_with_mode(masks, threshold, ExclusionMode::Participant)
}

/// Exclusion at a chosen granularity.
pub fn exclude_outliers_with_mode(
    masks: &[MaskRecord],
    threshold: f64,
    mode: ExclusionMode,
) -> Result<ExclusionReport, AggregationError> {
    if masks.is_empty() {
        return Err(AggregationError::NoMasks);
    }
    if !threshold.is_finite() || threshold < 1.0 {
        return Err(AggregationError::BadThreshold(threshold));
    }

    let unit_of = |m: &MaskRecord| ExclusionUnit {
        participant_id: m.participant_id.clone(),
        trial_id: match mode {
            ExclusionMode::Participant => None,
            ExclusionMode::PerImage => Some(m.trial_id.clone()),
        },
    };

    let all_units: BTreeSet<ExclusionUnit> = masks.iter().map(&unit_of).collect();
    let mut included = all_units.clone();
    let mut iterations: Vec<ExclusionIteration> = Vec::new();

    loop {
        // Per-(trial, class) aggregate over currently included masks.
        let mut sums: BTreeMap<(&str, ClassRole), (Vec<f64>, usize)> = BTreeMap::new();
        for m in masks {
            if !included.contains(&unit_of(m)) {
                continue;
            }
            let entry = sums
                .entry((m.trial_id.as_str(), m.target))
                .or_insert_with(|| (vec![0.0; m.mask.values().len()], 0));
            for (acc, &v) in entry.0.iter_mut().zip(m.mask.values()) {
                *acc += v;
            }
            entry.1 += 1;
        }
        let aggregates: BTreeMap<(&str, ClassRole), Vec<f64>> = sums
            .into_iter()
            .map(|(key, (sum, n))| {
                (key, sum.into_iter().map(|s| s / n as f64).collect())
            })
            .collect();

        // Mean L2 deviation per included unit.
        let mut dev: BTreeMap<ExclusionUnit, (f64, usize)> = BTreeMap::new();
        for m in masks {
            let unit = unit_of(m);
            if !included.contains(&unit) {
                continue;
            }
            let agg = &aggregates[&(m.trial_id.as_str(), m.target)];
            let sq: f64 = m
                .mask
                .values()
                .iter()
                .zip(agg)
                .map(|(&v, &a)| (v - a) * (v - a))
                .sum();
            let entry = dev.entry(unit).or_insert((0.0, 0));
            entry.0 += libm::sqrt(sq);
            entry.1 += 1;
        }

        let units: Vec<ExclusionUnit> = dev.keys().cloned().collect();
        let means: Vec<f64> = dev.values().map(|(s, n)| s / *n as f64).collect();
        let (sigma_hat, zs) = half_normal_scores(&means);

        let scores: Vec<UnitScore> = units
            .iter()
            .zip(means.iter().zip(&zs))
            .map(|(unit, (&mean_deviation, &z))| UnitScore {
                unit: unit.clone(),
                mean_deviation,
                z,
            })
            .collect();
        let newly: Vec<ExclusionUnit> = scores
            .iter()
            .filter(|s| s.z > threshold)
            .map(|s| s.unit.clone())
            .collect();

        iterations.push(ExclusionIteration {
            sigma_hat,
            scores,
            excluded: newly.clone(),
        });

        if newly.is_empty() {
            break;
        }
        for u in &newly {
            included.remove(u);
        }
        if included.is_empty() {
            log::warn!("exclusion removed every unit; stopping");
            break;
        }
    }

    let excluded: Vec<ExclusionUnit> = all_units.difference(&included).cloned().collect();
    Ok(ExclusionReport {
        threshold,
        mode,
        iterations,
        excluded,
        included: included.into_iter().collect(),
    })
}

/// Pixelwise mean mask over included participants, per (trial, target).
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMask {
    pub trial_id: String,
    pub target: ClassRole,
    pub grid: FloatGrid,
    pub n_included: usize,
}

/// Averages the included masks of each (trial, target) group. A group whose
/// masks were all excluded is an error: downstream similarity would
/// otherwise silently run against nothing.
pub fn aggregate_consensus(
    masks: &[MaskRecord],
    report: &ExclusionReport,
) -> Result<Vec<ConsensusMask>, AggregationError> {
    if masks.is_empty() {
        return Err(AggregationError::NoMasks);
    }
    let mut groups: BTreeMap<(&str, ClassRole), (Vec<f64>, usize, &FloatGrid)> = BTreeMap::new();
    let mut seen: BTreeSet<(&str, ClassRole)> = BTreeSet::new();
    for m in masks {
        seen.insert((m.trial_id.as_str(), m.target));
        if report.is_excluded(&m.participant_id, &m.trial_id) {
            continue;
        }
        let entry = groups
            .entry((m.trial_id.as_str(), m.target))
            .or_insert_with(|| (vec![0.0; m.mask.values().len()], 0, &m.mask));
        for (acc, &v) in entry.0.iter_mut().zip(m.mask.values()) {
            *acc += v;
        }
        entry.1 += 1;
    }
    for (trial_id, target) in seen {
        if !groups.contains_key(&(trial_id, target)) {
            return Err(AggregationError::EmptyGroup {
                trial_id: trial_id.into(),
                target: target.as_str(),
            });
        }
    }
    groups
        .into_iter()
        .map(|((trial_id, target), (sum, n, proto))| {
            let values: Vec<f64> = sum.into_iter().map(|s| s / n as f64).collect();
            let grid = FloatGrid::new(proto.width(), proto.height(), 1, values)
                .expect("consensus of valid masks is valid");
            Ok(ConsensusMask {
                trial_id: trial_id.into(),
                target,
                grid,
                n_included: n,
            })
        })
        .collect()
}

/// A per-trial response proportion with its sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub value: f64,
    pub n: usize,
}

/// Per-trial proportions of truth choices. Serves both as the prior table
/// (control condition) and the empirical table (explanation condition).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProportionTable {
    pub entries: BTreeMap<String, Proportion>,
}

impl ProportionTable {
    pub fn get(&self, trial_id: &str) -> Option<Proportion> {
        self.entries.get(trial_id).copied()
    }

    pub fn values_by_trial(&self) -> BTreeMap<String, f64> {
        self.entries
            .iter()
            .map(|(k, p)| (k.clone(), p.value))
            .collect()
    }
}

fn proportions(
    trials: &[TrialSpec],
    responses: &[ResponseRecord],
    condition: Condition,
    clamp: bool,
) -> Result<ProportionTable, AggregationError> {
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in responses {
        if r.condition != condition {
            continue;
        }
        let entry = counts.entry(r.trial_id.as_str()).or_insert((0, 0));
        if r.choice == ClassRole::Truth {
            entry.0 += 1;
        }
        entry.1 += 1;
    }
    let missing: Vec<String> = trials
        .iter()
        .filter(|t| !counts.contains_key(t.trial_id.as_str()))
        .map(|t| t.trial_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(AggregationError::NoResponses {
            condition: condition.as_str(),
            trial_ids: missing,
        });
    }
    let mut entries = BTreeMap::new();
    for trial in trials {
        let (truths, n) = counts[trial.trial_id.as_str()];
        let mut value = truths as f64 / n as f64;
        if clamp {
            let eps = 1.0 / (2.0 * n as f64);
            value = value.clamp(eps, 1.0 - eps);
        }
        entries.insert(trial.trial_id.clone(), Proportion { value, n });
    }
    Ok(ProportionTable { entries })
}

/// Control-condition truth proportions; the observer's prior. With `clamp`
/// the proportion is pulled into [1/(2n), 1 - 1/(2n)] so degenerate 0/1
/// priors cannot absorb the posterior.
pub fn estimate_priors(
    trials: &[TrialSpec],
    responses: &[ResponseRecord],
    clamp: bool,
) -> Result<ProportionTable, AggregationError> {
    proportions(trials, responses, Condition::Control, clamp)
}

/// Explanation-condition truth proportions; the behavior the model is fit to.
pub fn empirical_proportions(
    trials: &[TrialSpec],
    responses: &[ResponseRecord],
) -> Result<ProportionTable, AggregationError> {
    proportions(trials, responses, Condition::Explanation, false)
}

/// Minimum total response time (seconds) per participant and condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtThresholds {
    pub control_seconds: f64,
    pub explanation_seconds: f64,
}

impl Default for RtThresholds {
    fn default() -> Self {
        Self {
            control_seconds: 180.0,
            explanation_seconds: 300.0,
        }
    }
}

/// Participants dropped by the response-time filter, per condition.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RtFilterReport {
    pub dropped: Vec<(String, Condition)>,
}

/// Drops all responses of participants whose total response time in a
/// condition falls below that condition's threshold.
pub fn rt_filter(
    responses: &[ResponseRecord],
    thresholds: RtThresholds,
) -> (Vec<ResponseRecord>, RtFilterReport) {
    let mut totals: BTreeMap<(&str, Condition), f64> = BTreeMap::new();
    for r in responses {
        *totals
            .entry((r.participant_id.as_str(), r.condition))
            .or_insert(0.0) += r.rt_seconds;
    }
    let limit = |c: Condition| match c {
        Condition::Control => thresholds.control_seconds,
        Condition::Explanation => thresholds.explanation_seconds,
    };
    let dropped: Vec<(String, Condition)> = totals
        .iter()
        .filter(|(&(_, c), &total)| total < limit(c))
        .map(|(&(p, c), _)| (p.into(), c))
        .collect();
    let retained = responses
        .iter()
        .filter(|r| {
            totals[&(r.participant_id.as_str(), r.condition)] >= limit(r.condition)
        })
        .cloned()
        .collect();
    (retained, RtFilterReport { dropped })
}
