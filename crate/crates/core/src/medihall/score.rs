use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{HallucinationLabel, MedihallError, SentenceJudgment};
use crate::scalar::{mean, Scalar};

/// Mean sentence weight of `labels`, summed in order. This is the one
/// place the weighted mean is computed.
pub fn weighted_mean<T: Scalar>(labels: &[HallucinationLabel]) -> Option<T> {
    let weights: Vec<T> = labels.iter().map(|l| l.weight()).collect();
    mean(&weights)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediHallResult<T> {
    pub report_id: String,
    /// `S_i` per sentence; `None` while the sentence is pending.
    pub sentence_scores: Vec<Option<T>>,
    pub n: usize,
    /// Absent while any sentence is pending.
    pub score: Option<T>,
    pub counts: BTreeMap<HallucinationLabel, usize>,
    pub pending_count: usize,
}

impl<T: Scalar> MediHallResult<T> {
    pub fn is_final(&self) -> bool {
        self.pending_count == 0
    }
}

/// Scores one report from its sentence judgments.
pub fn medihall_score<T: Scalar>(judgments: &[SentenceJudgment]) -> Result<MediHallResult<T>, MedihallError> {
    let Some(first) = judgments.first() else {
        return Err(MedihallError::EmptyReport);
    };
    let mut counts: BTreeMap<HallucinationLabel, usize> = HallucinationLabel::ALL.iter().map(|l| (*l, 0)).collect();
    let mut labels = Vec::with_capacity(judgments.len());
    let mut sentence_scores = Vec::with_capacity(judgments.len());
    let mut pending_count = 0;
    for (position, j) in judgments.iter().enumerate() {
        if j.report_id != first.report_id {
            return Err(MedihallError::MixedReports(first.report_id.clone(), j.report_id.clone()));
        }
        if j.sentence.index != position {
            return Err(MedihallError::BadIndices { position, found: j.sentence.index });
        }
        match j.resolution.label() {
            Some(l) => {
                *counts.entry(l).or_default() += 1;
                labels.push(l);
                sentence_scores.push(Some(l.weight()));
            }
            None => {
                pending_count += 1;
                sentence_scores.push(None);
            }
        }
    }
    let score = if pending_count == 0 { weighted_mean(&labels) } else { None };
    Ok(MediHallResult {
        report_id: first.report_id.clone(),
        sentence_scores,
        n: judgments.len(),
        score,
        counts,
        pending_count,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusScore<T> {
    pub score: T,
    pub reports: usize,
    pub aggregation: String,
}

/// Unweighted mean of final per-report scores. Refuses, naming them, when
/// any report is still provisional.
pub fn corpus_medihall<T: Scalar>(results: &[MediHallResult<T>]) -> Result<CorpusScore<T>, MedihallError> {
    let pending: Vec<String> = results.iter().filter(|r| r.score.is_none()).map(|r| r.report_id.clone()).collect();
    if !pending.is_empty() {
        return Err(MedihallError::PendingReports(pending));
    }
    let scores: Vec<T> = results.iter().filter_map(|r| r.score).collect();
    let score = mean(&scores).ok_or(MedihallError::NoReports)?;
    Ok(CorpusScore { score, reports: scores.len(), aggregation: "unweighted-mean".into() })
}

/// Fraction of sentences on which both judges produced the same label.
pub fn agreement_rate(judgments: &[SentenceJudgment]) -> Option<f64> {
    if judgments.is_empty() {
        return None;
    }
    let agreed = judgments
        .iter()
        .filter(|j| matches!((j.verdicts[0].label(), j.verdicts[1].label()), (Some(a), Some(b)) if a == b))
        .count();
    Some(agreed as f64 / judgments.len() as f64)
}
