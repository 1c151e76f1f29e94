//! Six-dimension decomposition of reports and its two-round human
//! verification.

mod lexicon;
mod remote;
mod verify;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{RawReport, Stage, StageRecord};
use crate::llm::{LlmError, RemoteConfig};

pub use lexicon::{rule_segment, Lexicon, LexiconEntry, LexiconError, RuleSegmenter, DEFAULT_LEXICON_ID};
pub use remote::{parse_tagged_block, render_segment_prompt, RemoteSegmenter, SEGMENT_PROMPT_ID};
pub use verify::{submit_verification, DimensionDecision, VerificationDecision, VerifyError};

/// Answer text used for a dimension the report says nothing about.
pub const SENTINEL: &str = "Not mentioned in the report.";

/// The six facets, in chain order from global to fine-grained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Modality,
    Organ,
    Size,
    AbnormalLocation,
    Symptoms,
    OverallHealth,
}

impl Dimension {
    pub const ALL: [Dimension; 6] = [
        Dimension::Modality,
        Dimension::Organ,
        Dimension::Size,
        Dimension::AbnormalLocation,
        Dimension::Symptoms,
        Dimension::OverallHealth,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(k: usize) -> Option<Dimension> {
        Self::ALL.get(k).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Modality => "modality",
            Dimension::Organ => "organ",
            Dimension::Size => "size",
            Dimension::AbnormalLocation => "abnormal_location",
            Dimension::Symptoms => "symptoms",
            Dimension::OverallHealth => "overall_health",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        Dimension::ALL.into_iter().find(|d| d.as_str() == key).ok_or_else(|| format!("unknown dimension {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionAnswer {
    pub dimension: Dimension,
    pub answer_text: String,
    pub mentioned: bool,
    /// Character spans into the report text supporting the answer.
    #[serde(default)]
    pub evidence_spans: Vec<(usize, usize)>,
}

impl DimensionAnswer {
    pub fn absent(dimension: Dimension) -> Self {
        DimensionAnswer { dimension, answer_text: SENTINEL.to_string(), mentioned: false, evidence_spans: Vec::new() }
    }

    /// An answer from free text; empty text or the sentinel itself yields
    /// an absent answer.
    pub fn from_text(dimension: Dimension, text: &str, evidence_spans: Vec<(usize, usize)>) -> Self {
        let text = text.trim();
        if text.is_empty() || text.eq_ignore_ascii_case(SENTINEL) {
            return Self::absent(dimension);
        }
        DimensionAnswer { dimension, answer_text: text.to_string(), mentioned: true, evidence_spans }
    }

    pub fn check(&self) -> Result<(), String> {
        match (self.mentioned, self.answer_text == SENTINEL) {
            (false, false) => Err(format!("{}: unmentioned answer must be the sentinel", self.dimension)),
            (true, true) => Err(format!("{}: mentioned answer equals the sentinel", self.dimension)),
            (true, false) if self.answer_text.trim().is_empty() => {
                Err(format!("{}: mentioned answer is empty", self.dimension))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Round {
    One,
    Two,
}

impl TryFrom<u8> for Round {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Round::One),
            2 => Ok(Round::Two),
            other => Err(format!("verification round must be 1 or 2, got {other}")),
        }
    }
}

impl From<Round> for u8 {
    fn from(r: Round) -> u8 {
        match r {
            Round::One => 1,
            Round::Two => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Verification {
    Unverified,
    Round1Passed,
    Round2Passed,
    Corrected { round: Round },
}

impl Verification {
    /// Whether the record may be turned into training data.
    pub fn is_final(self) -> bool {
        matches!(self, Verification::Round2Passed | Verification::Corrected { round: Round::Two })
    }

    /// The round this record is waiting for, if any.
    pub fn next_round(self) -> Option<Round> {
        match self {
            Verification::Unverified => Some(Round::One),
            Verification::Round1Passed | Verification::Corrected { round: Round::One } => Some(Round::Two),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correction {
    pub dimension: Dimension,
    pub old_text: String,
    pub new_text: String,
    pub reviewer_id: String,
    pub round: Round,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchicalRecord {
    pub report_id: String,
    pub answers: Vec<DimensionAnswer>,
    pub backend_id: String,
    pub verification: Verification,
    /// Bumped on every verification decision; 0 straight from a backend.
    #[serde(default)]
    pub version: u64,
    #[serde(default)]
    pub correction_log: Vec<Correction>,
}

impl HierarchicalRecord {
    pub fn new(report_id: impl Into<String>, backend_id: impl Into<String>, answers: Vec<DimensionAnswer>) -> Self {
        HierarchicalRecord {
            report_id: report_id.into(),
            answers,
            backend_id: backend_id.into(),
            verification: Verification::Unverified,
            version: 0,
            correction_log: Vec::new(),
        }
    }

    pub fn answer(&self, dimension: Dimension) -> &DimensionAnswer {
        &self.answers[dimension.ordinal()]
    }

    pub fn check(&self) -> Result<(), String> {
        if self.answers.len() != 6 {
            return Err(format!("expected 6 answers, found {}", self.answers.len()));
        }
        for (k, a) in self.answers.iter().enumerate() {
            if a.dimension.ordinal() != k {
                return Err(format!("answer {k} has dimension {}, expected {}", a.dimension, Dimension::ALL[k]));
            }
            a.check()?;
        }
        Ok(())
    }

    /// Evidence spans must index inside the text the record was built from.
    pub fn check_spans(&self, report_text: &str) -> Result<(), String> {
        let len = report_text.chars().count();
        for a in &self.answers {
            for &(s, e) in &a.evidence_spans {
                if s >= e || e > len {
                    return Err(format!("{}: span ({s},{e}) outside text of length {len}", a.dimension));
                }
            }
        }
        Ok(())
    }

    pub fn snapshot_id(&self) -> String {
        format!("{}@v{}", self.report_id, self.version)
    }
}

impl StageRecord for HierarchicalRecord {
    const STAGE: Stage = Stage::Decomposed;

    fn record_id(&self) -> String {
        self.report_id.clone()
    }

    fn parent(&self) -> Option<(Stage, String)> {
        Some((Stage::Raw, self.report_id.clone()))
    }

    fn check(&self) -> Result<(), String> {
        HierarchicalRecord::check(self)
    }
}

/// A record state after a verification decision, stored in the verified
/// stage. Each decision appends a new snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VerifiedRecord(pub HierarchicalRecord);

impl StageRecord for VerifiedRecord {
    const STAGE: Stage = Stage::Verified;

    fn record_id(&self) -> String {
        self.0.snapshot_id()
    }

    fn parent(&self) -> Option<(Stage, String)> {
        if self.0.version <= 1 {
            Some((Stage::Decomposed, self.0.report_id.clone()))
        } else {
            Some((Stage::Verified, format!("{}@v{}", self.0.report_id, self.0.version - 1)))
        }
    }

    fn check(&self) -> Result<(), String> {
        if self.0.version == 0 {
            return Err("verified snapshot must have version >= 1".into());
        }
        self.0.check()
    }
}

#[derive(Debug, Error)]
pub enum DecomposeError {
    #[error("report {report_id} has empty text")]
    EmptyReport { report_id: String },
    #[error("backend failure for report {report_id}: {source}")]
    Backend {
        report_id: String,
        #[source]
        source: LlmError,
    },
    #[error("backend response for report {report_id} violates the six-dimension schema: {message}")]
    SchemaViolation { report_id: String, message: String, raw_response: String },
}

impl DecomposeError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, DecomposeError::Backend { source, .. } if source.is_retriable())
    }
}

/// A segmentation backend.
pub trait Segmenter: Send + Sync {
    fn backend_id(&self) -> &str;

    fn segment(&self, report: &RawReport) -> Result<HierarchicalRecord, DecomposeError>;

    fn is_deterministic(&self) -> bool;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendKind {
    RemoteLlm {
        #[serde(flatten)]
        remote: RemoteConfig,
        #[serde(default = "default_prompt_id")]
        prompt_template_id: String,
    },
    RuleBased {
        #[serde(default = "default_lexicon_id")]
        lexicon_id: String,
    },
}

fn default_prompt_id() -> String {
    SEGMENT_PROMPT_ID.to_string()
}

fn default_lexicon_id() -> String {
    DEFAULT_LEXICON_ID.to_string()
}

/// Declarative backend configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationBackend {
    pub backend_id: String,
    #[serde(flatten)]
    pub kind: BackendKind,
}

impl SegmentationBackend {
    pub fn rule_based() -> Self {
        SegmentationBackend {
            backend_id: format!("rule:{DEFAULT_LEXICON_ID}"),
            kind: BackendKind::RuleBased { lexicon_id: DEFAULT_LEXICON_ID.to_string() },
        }
    }
}

/// Segments one report with the given backend.
pub fn segment_report(report: &RawReport, backend: &dyn Segmenter) -> Result<HierarchicalRecord, DecomposeError> {
    if report.report_text.trim().is_empty() {
        return Err(DecomposeError::EmptyReport { report_id: report.report_id.clone() });
    }
    let record = backend.segment(report)?;
    record.check().map_err(|message| DecomposeError::SchemaViolation {
        report_id: report.report_id.clone(),
        message,
        raw_response: String::new(),
    })?;
    Ok(record)
}

/// Segments many reports with at most `in_flight` concurrent backend calls.
/// Output order follows input order.
pub fn segment_all(
    reports: &[RawReport],
    backend: &dyn Segmenter,
    in_flight: usize,
) -> Vec<Result<HierarchicalRecord, DecomposeError>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(in_flight.max(1)).build();
    match pool {
        Ok(pool) => pool.install(|| reports.par_iter().map(|r| segment_report(r, backend)).collect()),
        Err(_) => reports.iter().map(|r| segment_report(r, backend)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_order_is_fixed() {
        let names: Vec<_> = Dimension::ALL.iter().map(|d| d.as_str()).collect();
        assert_eq!(names, ["modality", "organ", "size", "abnormal_location", "symptoms", "overall_health"]);
        for (k, d) in Dimension::ALL.iter().enumerate() {
            assert_eq!(d.ordinal(), k);
            assert_eq!(Dimension::from_ordinal(k), Some(*d));
        }
        assert_eq!("Abnormal Location".parse::<Dimension>(), Ok(Dimension::AbnormalLocation));
    }

    #[test]
    fn sentinel_bytes() {
        assert_eq!(SENTINEL.as_bytes(), b"Not mentioned in the report.");
        let a = DimensionAnswer::from_text(Dimension::Size, "  ", vec![]);
        assert!(!a.mentioned);
        assert!(a.check().is_ok());
    }

    #[test]
    fn record_check_catches_misordering() {
        let mut answers: Vec<_> = Dimension::ALL.iter().map(|d| DimensionAnswer::absent(*d)).collect();
        let rec = HierarchicalRecord::new("r", "b", answers.clone());
        assert!(rec.check().is_ok());
        answers.swap(0, 1);
        assert!(HierarchicalRecord::new("r", "b", answers.clone()).check().is_err());
        answers.pop();
        assert!(HierarchicalRecord::new("r", "b", answers).check().is_err());
    }

    #[test]
    fn verification_serializes_with_round() {
        let v = Verification::Corrected { round: Round::One };
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"{"state":"corrected","round":1}"#);
        assert_eq!(serde_json::from_str::<Verification>(&s).unwrap(), v);
        assert!(serde_json::from_str::<Verification>(r#"{"state":"corrected","round":3}"#).is_err());
    }

    #[test]
    fn backend_config_round_trip() {
        let json = r#"{"backend_id":"gpt","kind":"remote_llm","endpoint":"http://x","model":"m"}"#;
        let b: SegmentationBackend = serde_json::from_str(json).unwrap();
        match &b.kind {
            BackendKind::RemoteLlm { remote, prompt_template_id } => {
                assert_eq!(remote.retries, 3);
                assert_eq!(prompt_template_id, SEGMENT_PROMPT_ID);
            }
            _ => panic!("wrong kind"),
        }
    }
}
