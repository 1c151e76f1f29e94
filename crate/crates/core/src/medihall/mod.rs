//! Sentence-level hallucination scoring.
//!
//! Every sentence of a candidate report is labelled by two judges. When
//! they agree, the agreed label stands; otherwise the sentence stays
//! pending until a human adjudicates it. A report's score is the mean of
//! its sentence weights and is only defined once no sentence is pending.

mod human;
mod judge;
mod score;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Sentence, Stage, StageRecord};
use crate::scalar::Scalar;

pub use human::{human_score, HumanEvalTally, HumanScoreReport};
pub use judge::{
    judge_report, judge_sentence, parse_label_response, render_judge_prompt, FixedJudge, Judge, JudgeError,
    RemoteJudge, JUDGE_PROMPT_ID,
};
pub use score::{agreement_rate, corpus_medihall, medihall_score, weighted_mean, CorpusScore, MediHallResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HallucinationLabel {
    /// A disease omitted or fabricated.
    Catastrophic,
    /// The type of a disease misjudged.
    Critical,
    /// Shape, size or location of a finding misjudged.
    Attribute,
    Correct,
}

impl HallucinationLabel {
    pub const ALL: [HallucinationLabel; 4] = [
        HallucinationLabel::Catastrophic,
        HallucinationLabel::Critical,
        HallucinationLabel::Attribute,
        HallucinationLabel::Correct,
    ];

    /// Sentence score for this label: 0, 0.3, 0.6 and 1.
    pub fn weight<T: Scalar>(self) -> T {
        match self {
            HallucinationLabel::Catastrophic => T::ratio(0, 1),
            HallucinationLabel::Critical => T::ratio(3, 10),
            HallucinationLabel::Attribute => T::ratio(6, 10),
            HallucinationLabel::Correct => T::ratio(1, 1),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            HallucinationLabel::Catastrophic => "Catastrophic",
            HallucinationLabel::Critical => "Critical",
            HallucinationLabel::Attribute => "Attribute",
            HallucinationLabel::Correct => "Correct",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for HallucinationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HallucinationLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().trim_end_matches('.');
        HallucinationLabel::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(t))
            .ok_or_else(|| format!("unknown label {s:?} (Catastrophic, Critical, Attribute, Correct)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub sentence_index: usize,
    pub label: HallucinationLabel,
    pub judge_id: String,
    #[serde(default)]
    pub rationale: String,
    #[serde(default)]
    pub raw_response: String,
}

/// What one judge seat produced for a sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum JudgeOutcome {
    Verdict(JudgeVerdict),
    /// The judge answered but no label could be parsed.
    Missing {
        judge_id: String,
        sentence_index: usize,
        error: String,
        raw_response: String,
    },
}

impl JudgeOutcome {
    pub fn judge_id(&self) -> &str {
        match self {
            JudgeOutcome::Verdict(v) => &v.judge_id,
            JudgeOutcome::Missing { judge_id, .. } => judge_id,
        }
    }

    pub fn label(&self) -> Option<HallucinationLabel> {
        match self {
            JudgeOutcome::Verdict(v) => Some(v.label),
            JudgeOutcome::Missing { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjudication {
    pub label: HallucinationLabel,
    pub adjudicator_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Resolution {
    Agreed { label: HallucinationLabel },
    Adjudicated { label: HallucinationLabel, adjudicator_id: String },
    Pending,
}

impl Resolution {
    pub fn label(&self) -> Option<HallucinationLabel> {
        match self {
            Resolution::Agreed { label } | Resolution::Adjudicated { label, .. } => Some(*label),
            Resolution::Pending => None,
        }
    }

    pub fn is_pending(&self) -> bool {
        matches!(self, Resolution::Pending)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolved {
    pub resolution: Resolution,
    /// An adjudication was supplied for agreeing verdicts and dropped.
    pub ignored_adjudication: bool,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum MedihallError {
    #[error("both verdicts come from judge {0}; two distinct judges are required")]
    SameJudge(String),
    #[error("adjudicator id is empty")]
    MissingAdjudicator,
    #[error("report has no sentences; MediHall score is undefined")]
    EmptyReport,
    #[error("judgments mix reports {0} and {1}")]
    MixedReports(String, String),
    #[error("sentence indices must run 0..N in order; found {found} at position {position}")]
    BadIndices { position: usize, found: usize },
    #[error("reports still pending adjudication: {}", .0.join(", "))]
    PendingReports(Vec<String>),
    #[error("no reports to aggregate")]
    NoReports,
    #[error("invalid human evaluation tally: {0}")]
    BadTally(String),
}

/// Applies the two-judge precedence rule.
///
/// Equal labels resolve to `Agreed`; a supplied adjudication is then
/// ignored. Otherwise the adjudication decides, or the sentence stays
/// `Pending`.
pub fn resolve(verdicts: &[JudgeOutcome; 2], adjudication: Option<&Adjudication>) -> Result<Resolved, MedihallError> {
    if verdicts[0].judge_id() == verdicts[1].judge_id() {
        return Err(MedihallError::SameJudge(verdicts[0].judge_id().to_string()));
    }
    if let Some(a) = adjudication {
        if a.adjudicator_id.trim().is_empty() {
            return Err(MedihallError::MissingAdjudicator);
        }
    }
    match (verdicts[0].label(), verdicts[1].label()) {
        (Some(a), Some(b)) if a == b => {
            if adjudication.is_some() {
                log::warn!("adjudication supplied for agreeing verdicts ({a}); ignored");
            }
            Ok(Resolved { resolution: Resolution::Agreed { label: a }, ignored_adjudication: adjudication.is_some() })
        }
        _ => Ok(Resolved {
            resolution: match adjudication {
                Some(a) => Resolution::Adjudicated { label: a.label, adjudicator_id: a.adjudicator_id.clone() },
                None => Resolution::Pending,
            },
            ignored_adjudication: false,
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceJudgment {
    pub report_id: String,
    pub sentence: Sentence,
    pub verdicts: [JudgeOutcome; 2],
    pub resolution: Resolution,
}

impl SentenceJudgment {
    pub fn new(
        report_id: impl Into<String>,
        sentence: Sentence,
        verdicts: [JudgeOutcome; 2],
    ) -> Result<Self, MedihallError> {
        let resolution = resolve(&verdicts, None)?.resolution;
        Ok(SentenceJudgment { report_id: report_id.into(), sentence, verdicts, resolution })
    }

    /// Records a human decision. Returns whether it changed the resolution.
    pub fn adjudicate(&mut self, adjudication: &Adjudication) -> Result<bool, MedihallError> {
        let r = resolve(&self.verdicts, Some(adjudication))?;
        if r.ignored_adjudication {
            return Ok(false);
        }
        self.resolution = r.resolution;
        Ok(true)
    }

    pub fn needs_adjudication(&self) -> bool {
        self.resolution.is_pending()
    }

    pub fn check(&self) -> Result<(), String> {
        if self.verdicts[0].judge_id() == self.verdicts[1].judge_id() {
            return Err("verdicts must come from distinct judges".into());
        }
        let agreed = matches!((self.verdicts[0].label(), self.verdicts[1].label()), (Some(a), Some(b)) if a == b);
        match (&self.resolution, agreed) {
            (Resolution::Agreed { label }, true) if Some(*label) == self.verdicts[0].label() => Ok(()),
            (Resolution::Agreed { .. }, _) => Err("agreed resolution does not match verdicts".into()),
            (_, true) => Err("agreeing verdicts must resolve as agreed".into()),
            _ => Ok(()),
        }
    }
}

/// A judgment as persisted in the judgments stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub run_id: String,
    #[serde(flatten)]
    pub judgment: SentenceJudgment,
}

impl JudgmentRecord {
    pub fn id_for(run_id: &str, report_id: &str, sentence_index: usize) -> String {
        format!("{run_id}/{report_id}#{sentence_index}")
    }
}

impl StageRecord for JudgmentRecord {
    const STAGE: Stage = Stage::Judgments;

    fn record_id(&self) -> String {
        Self::id_for(&self.run_id, &self.judgment.report_id, self.judgment.sentence.index)
    }

    fn parent(&self) -> Option<(Stage, String)> {
        Some((Stage::Raw, self.judgment.report_id.clone()))
    }

    fn check(&self) -> Result<(), String> {
        self.judgment.check()
    }
}

/// Flat export row for one judged sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentExport {
    pub report_id: String,
    pub sentence_index: usize,
    pub sentence_text: String,
    pub verdicts: [JudgeOutcome; 2],
    pub resolution: Resolution,
    pub s_i: Option<f64>,
}

impl From<&SentenceJudgment> for JudgmentExport {
    fn from(j: &SentenceJudgment) -> Self {
        JudgmentExport {
            report_id: j.report_id.clone(),
            sentence_index: j.sentence.index,
            sentence_text: j.sentence.text.clone(),
            verdicts: j.verdicts.clone(),
            resolution: j.resolution.clone(),
            s_i: j.resolution.label().map(|l| l.weight::<f64>()),
        }
    }
}
