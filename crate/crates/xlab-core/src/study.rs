//! Study records: the trial manifest, forced-choice responses, and drawn
//! masks, plus whole-corpus referential validation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{FloatGrid, GridError};

/// Which of the two candidate classes a record refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassRole {
    Truth,
    Foil,
}

impl ClassRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassRole::Truth => "truth",
            ClassRole::Foil => "foil",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "truth" => Some(ClassRole::Truth),
            "foil" => Some(ClassRole::Foil),
            _ => None,
        }
    }

    pub fn other(self) -> Self {
        match self {
            ClassRole::Truth => ClassRole::Foil,
            ClassRole::Foil => ClassRole::Truth,
        }
    }
}

/// Experimental condition a response was collected under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Control,
    Explanation,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Control => "control",
            Condition::Explanation => "explanation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "control" => Some(Condition::Control),
            "explanation" => Some(Condition::Explanation),
            _ => None,
        }
    }
}

/// One 2AFC trial: a stimulus, the true class, a foil, and which of the two
/// the classifier chose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub trial_id: String,
    pub image_path: String,
    pub truth_class: String,
    pub foil_class: String,
    pub ai_class: ClassRole,
}

impl TrialSpec {
    pub fn validate(&self) -> Result<(), StudyError> {
        if self.trial_id.is_empty() {
            return Err(StudyError::EmptyTrialId);
        }
        if self.truth_class == self.foil_class {
            return Err(StudyError::DegenerateClassPair {
                trial_id: self.trial_id.clone(),
            });
        }
        Ok(())
    }

    /// Label of the class in a given role.
    pub fn class_label(&self, role: ClassRole) -> &str {
        match role {
            ClassRole::Truth => &self.truth_class,
            ClassRole::Foil => &self.foil_class,
        }
    }

    /// True when the classifier picked the ground-truth class.
    pub fn ai_correct(&self) -> bool {
        self.ai_class == ClassRole::Truth
    }
}

/// One participant's forced choice on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub participant_id: String,
    pub trial_id: String,
    pub condition: Condition,
    pub choice: ClassRole,
    pub rt_seconds: f64,
}

/// One drawn mask: a participant's guess at the evidence for a class.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskRecord {
    pub participant_id: String,
    pub trial_id: String,
    pub target: ClassRole,
    pub mask: FloatGrid,
}

#[derive(Debug, Error, PartialEq)]
pub enum StudyError {
    #[error("trial id must not be empty")]
    EmptyTrialId,
    #[error("trial {trial_id}: truth and foil class are identical")]
    DegenerateClassPair { trial_id: String },
    #[error("duplicate trial id {0}")]
    DuplicateTrial(String),
    #[error("{kind} references unknown trial {trial_id}")]
    UnknownTrial {
        kind: &'static str,
        trial_id: String,
    },
    #[error("duplicate response for participant {participant_id}, trial {trial_id}, condition {condition}")]
    DuplicateResponse {
        participant_id: String,
        trial_id: String,
        condition: &'static str,
    },
    #[error("duplicate mask for participant {participant_id}, trial {trial_id}, target {target}")]
    DuplicateMask {
        participant_id: String,
        trial_id: String,
        target: &'static str,
    },
    #[error(
        "response rt for participant {participant_id}, trial {trial_id} must be finite and >= 0, got {rt}"
    )]
    BadResponseTime {
        participant_id: String,
        trial_id: String,
        rt: f64,
    },
    #[error("mask for participant {participant_id}, trial {trial_id}: {source}")]
    BadMask {
        participant_id: String,
        trial_id: String,
        source: GridError,
    },
    #[error(
        "trial {trial_id}: mask from participant {participant_id} is {got_w}x{got_h}, others are {want_w}x{want_h}"
    )]
    MaskShapeMismatch {
        trial_id: String,
        participant_id: String,
        want_w: usize,
        want_h: usize,
        got_w: usize,
        got_h: usize,
    },
}

/// A validated study: trials plus all responses and masks that reference
/// them. Construction sorts every list into a canonical order, so corpora
/// built from permuted inputs compare equal.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyCorpus {
    trials: Vec<TrialSpec>,
    responses: Vec<ResponseRecord>,
    masks: Vec<MaskRecord>,
}

impl StudyCorpus {
    pub fn new(
        mut trials: Vec<TrialSpec>,
        mut responses: Vec<ResponseRecord>,
        mut masks: Vec<MaskRecord>,
    ) -> Result<Self, StudyError> {
        let mut ids = BTreeSet::new();
        for trial in &trials {
            trial.validate()?;
            if !ids.insert(trial.trial_id.clone()) {
                return Err(StudyError::DuplicateTrial(trial.trial_id.clone()));
            }
        }

        let mut seen_responses = BTreeSet::new();
        for r in &responses {
            if !ids.contains(&r.trial_id) {
                return Err(StudyError::UnknownTrial {
                    kind: "response",
                    trial_id: r.trial_id.clone(),
                });
            }
            if !r.rt_seconds.is_finite() || r.rt_seconds < 0.0 {
                return Err(StudyError::BadResponseTime {
                    participant_id: r.participant_id.clone(),
                    trial_id: r.trial_id.clone(),
                    rt: r.rt_seconds,
                });
            }
            if !seen_responses.insert((r.participant_id.clone(), r.trial_id.clone(), r.condition)) {
                return Err(StudyError::DuplicateResponse {
                    participant_id: r.participant_id.clone(),
                    trial_id: r.trial_id.clone(),
                    condition: r.condition.as_str(),
                });
            }
        }

        let mut seen_masks = BTreeSet::new();
        let mut shapes: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for m in &masks {
            if !ids.contains(&m.trial_id) {
                return Err(StudyError::UnknownTrial {
                    kind: "mask",
                    trial_id: m.trial_id.clone(),
                });
            }
            crate::grid::SaliencyMap::new(m.mask.clone()).map_err(|source| {
                StudyError::BadMask {
                    participant_id: m.participant_id.clone(),
                    trial_id: m.trial_id.clone(),
                    source,
                }
            })?;
            let shape = (m.mask.width(), m.mask.height());
            match shapes.get(m.trial_id.as_str()) {
                Some(&(w, h)) if (w, h) != shape => {
                    return Err(StudyError::MaskShapeMismatch {
                        trial_id: m.trial_id.clone(),
                        participant_id: m.participant_id.clone(),
                        want_w: w,
                        want_h: h,
                        got_w: shape.0,
                        got_h: shape.1,
                    });
                }
                Some(_) => {}
                None => {
                    shapes.insert(m.trial_id.as_str(), shape);
                }
            }
            if !seen_masks.insert((m.participant_id.clone(), m.trial_id.clone(), m.target)) {
                return Err(StudyError::DuplicateMask {
                    participant_id: m.participant_id.clone(),
                    trial_id: m.trial_id.clone(),
                    target: m.target.as_str(),
                });
            }
        }

        if responses.is_empty() {
            log::warn!("study corpus has no responses");
        }

        trials.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
        responses.sort_by(|a, b| {
            (&a.participant_id, &a.trial_id, a.condition).cmp(&(
                &b.participant_id,
                &b.trial_id,
                b.condition,
            ))
        });
        masks.sort_by(|a, b| {
            (&a.participant_id, &a.trial_id, a.target).cmp(&(
                &b.participant_id,
                &b.trial_id,
                b.target,
            ))
        });

        Ok(Self {
            trials,
            responses,
            masks,
        })
    }

    /// Trials in canonical (id-sorted) order.
    pub fn trials(&self) -> &[TrialSpec] {
        &self.trials
    }

    pub fn responses(&self) -> &[ResponseRecord] {
        &self.responses
    }

    pub fn masks(&self) -> &[MaskRecord] {
        &self.masks
    }

    pub fn trial(&self, trial_id: &str) -> Option<&TrialSpec> {
        self.trials
            .binary_search_by(|t| t.trial_id.as_str().cmp(trial_id))
            .ok()
            .map(|i| &self.trials[i])
    }

    pub fn responses_in(&self, condition: Condition) -> impl Iterator<Item = &ResponseRecord> {
        self.responses.iter().filter(move |r| r.condition == condition)
    }

    pub fn masks_for(&self, target: ClassRole) -> impl Iterator<Item = &MaskRecord> {
        self.masks.iter().filter(move |m| m.target == target)
    }

    /// Replaces the response list (used by response-time filtering).
    /// Re-validates nothing beyond referential integrity because the records
    /// came from this corpus.
    pub fn with_responses(mut self, responses: Vec<ResponseRecord>) -> Self {
        self.responses = responses;
        self.responses.sort_by(|a, b| {
            (&a.participant_id, &a.trial_id, a.condition).cmp(&(
                &b.participant_id,
                &b.trial_id,
                b.condition,
            ))
        });
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::string::ToString;
    use alloc::vec;

    fn trial(id: &str) -> TrialSpec {
        TrialSpec {
            trial_id: id.to_string(),
            image_path: format!("images/{id}.fgrid"),
            truth_class: format!("{id}_t"),
            foil_class: format!("{id}_f"),
            ai_class: ClassRole::Truth,
        }
    }

    fn response(p: &str, t: &str, cond: Condition) -> ResponseRecord {
        ResponseRecord {
            participant_id: p.to_string(),
            trial_id: t.to_string(),
            condition: cond,
            choice: ClassRole::Truth,
            rt_seconds: 2.0,
        }
    }

    fn mask(p: &str, t: &str, role: ClassRole) -> MaskRecord {
        MaskRecord {
            participant_id: p.to_string(),
            trial_id: t.to_string(),
            target: role,
            mask: FloatGrid::filled(2, 2, 1, 0.5),
        }
    }

    #[test]
    fn accepts_and_canonicalizes_valid_input() {
        let corpus = StudyCorpus::new(
            vec![trial("t2"), trial("t1")],
            vec![
                response("p2", "t1", Condition::Control),
                response("p1", "t2", Condition::Explanation),
                response("p1", "t1", Condition::Control),
            ],
            vec![mask("d1", "t2", ClassRole::Foil), mask("d1", "t1", ClassRole::Truth)],
        )
        .unwrap();
        assert_eq!(corpus.trials()[0].trial_id, "t1");
        assert_eq!(corpus.responses()[0].participant_id, "p1");
        assert_eq!(corpus.masks()[0].trial_id, "t1");
        assert!(corpus.trial("t2").is_some());
        assert!(corpus.trial("t9").is_none());
    }

    #[test]
    fn ingestion_is_order_independent() {
        let trials = vec![trial("a"), trial("b"), trial("c")];
        let responses = vec![
            response("p1", "a", Condition::Control),
            response("p2", "b", Condition::Explanation),
            response("p1", "c", Condition::Control),
        ];
        let masks = vec![mask("d1", "a", ClassRole::Truth), mask("d2", "b", ClassRole::Foil)];

        let forward = StudyCorpus::new(trials.clone(), responses.clone(), masks.clone()).unwrap();
        let mut rt = trials;
        rt.reverse();
        let mut rr = responses;
        rr.reverse();
        let mut rm = masks;
        rm.reverse();
        let backward = StudyCorpus::new(rt, rr, rm).unwrap();
        assert_eq!(forward, backward);
    }

    #[test]
    fn rejects_referential_and_uniqueness_violations() {
        let err = StudyCorpus::new(
            vec![trial("t1")],
            vec![response("p1", "t9", Condition::Control)],
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, StudyError::UnknownTrial { kind: "response", .. }));

        let err = StudyCorpus::new(vec![trial("t1"), trial("t1")], vec![], vec![]).unwrap_err();
        assert_eq!(err, StudyError::DuplicateTrial("t1".to_string()));

        let err = StudyCorpus::new(
            vec![trial("t1")],
            vec![
                response("p1", "t1", Condition::Control),
                response("p1", "t1", Condition::Control),
            ],
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, StudyError::DuplicateResponse { .. }));

        let err = StudyCorpus::new(
            vec![trial("t1")],
            vec![],
            vec![mask("d1", "t1", ClassRole::Truth), mask("d1", "t1", ClassRole::Truth)],
        )
        .unwrap_err();
        assert!(matches!(err, StudyError::DuplicateMask { .. }));
    }

    #[test]
    fn rejects_shape_drift_and_bad_values() {
        let mut odd = mask("d2", "t1", ClassRole::Truth);
        odd.mask = FloatGrid::filled(3, 2, 1, 0.1);
        let err = StudyCorpus::new(
            vec![trial("t1")],
            vec![],
            vec![mask("d1", "t1", ClassRole::Truth), odd],
        )
        .unwrap_err();
        assert!(matches!(err, StudyError::MaskShapeMismatch { .. }));

        let mut hot = mask("d1", "t1", ClassRole::Truth);
        hot.mask = FloatGrid::new(1, 1, 1, vec![1.5]).unwrap();
        let err = StudyCorpus::new(vec![trial("t1")], vec![], vec![hot]).unwrap_err();
        assert!(matches!(err, StudyError::BadMask { .. }));

        let mut slow = response("p1", "t1", Condition::Control);
        slow.rt_seconds = -1.0;
        let err = StudyCorpus::new(vec![trial("t1")], vec![slow], vec![]).unwrap_err();
        assert!(matches!(err, StudyError::BadResponseTime { .. }));
    }

    #[test]
    fn rejects_degenerate_trial() {
        let mut t = trial("t1");
        t.foil_class = t.truth_class.clone();
        assert!(matches!(
            StudyCorpus::new(vec![t], vec![], vec![]),
            Err(StudyError::DegenerateClassPair { .. })
        ));
    }
}
