use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Correction, Dimension, DimensionAnswer, HierarchicalRecord, Round, Verification};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "text", rename_all = "snake_case")]
pub enum DimensionDecision {
    Accept,
    Replace(String),
}

/// A reviewer's verdict on one record. Dimensions without an entry are
/// accepted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationDecision {
    #[serde(default)]
    pub dimensions: BTreeMap<Dimension, DimensionDecision>,
}

impl VerificationDecision {
    pub fn accept_all() -> Self {
        Self::default()
    }

    pub fn replace(mut self, dimension: Dimension, text: impl Into<String>) -> Self {
        self.dimensions.insert(dimension, DimensionDecision::Replace(text.into()));
        self
    }

    fn replacements(&self) -> impl Iterator<Item = (Dimension, &str)> {
        self.dimensions.iter().filter_map(|(d, dec)| match dec {
            DimensionDecision::Replace(t) => Some((*d, t.as_str())),
            DimensionDecision::Accept => None,
        })
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum VerifyError {
    #[error("record {report_id} is {state:?}; it cannot take a round {round} decision")]
    RoundOrder { report_id: String, state: Verification, round: u8 },
    #[error("replacement text for {0} is empty")]
    EmptyReplacement(Dimension),
    #[error("reviewer id is empty")]
    MissingReviewer,
}

/// Applies one reviewer decision for `round` and returns the new record
/// state; `record` is left untouched on error.
///
/// Accepting everything advances to `round1_passed`/`round2_passed`. Any
/// replacement rewrites the answer, logs the correction and marks the
/// record `corrected` for that round.
pub fn submit_verification(
    record: &HierarchicalRecord,
    decision: &VerificationDecision,
    reviewer_id: &str,
    round: Round,
) -> Result<HierarchicalRecord, VerifyError> {
    if reviewer_id.trim().is_empty() {
        return Err(VerifyError::MissingReviewer);
    }
    if record.verification.next_round() != Some(round) {
        return Err(VerifyError::RoundOrder {
            report_id: record.report_id.clone(),
            state: record.verification,
            round: round.into(),
        });
    }
    for (d, text) in decision.replacements() {
        if text.trim().is_empty() {
            return Err(VerifyError::EmptyReplacement(d));
        }
    }

    let mut next = record.clone();
    let mut corrected = false;
    for (d, text) in decision.replacements() {
        let old = next.answers[d.ordinal()].answer_text.clone();
        next.answers[d.ordinal()] = DimensionAnswer::from_text(d, text, Vec::new());
        next.correction_log.push(Correction {
            dimension: d,
            old_text: old,
            new_text: next.answers[d.ordinal()].answer_text.clone(),
            reviewer_id: reviewer_id.to_string(),
            round,
        });
        corrected = true;
    }
    next.verification = match (corrected, round) {
        (true, r) => Verification::Corrected { round: r },
        (false, Round::One) => Verification::Round1Passed,
        (false, Round::Two) => Verification::Round2Passed,
    };
    next.version = record.version + 1;
    Ok(next)
}
