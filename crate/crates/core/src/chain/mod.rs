//! Hierarchical QA pairs and their chain refactoring.
//!
//! The chained pair for dimension `k` carries the answers of dimensions
//! `0..k` as a prelude. Each prelude answer is rendered as a sentence
//! (terminal punctuation added when missing) followed by one space, and the
//! dimension's question follows:
//!
//! ```text
//! PA chest radiograph. lungs; heart. What is the size of any abnormality in this image?
//! ```

mod emit;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Stage, StageRecord};
use crate::decompose::{Dimension, HierarchicalRecord, Verification, SENTINEL};

pub use emit::{emit_dataset, EmitMode, EmitOptions, EmitSummary, TrainingExample, ORIGINAL_REPORT_PROMPT};

const BUILTIN_TEMPLATES: &str = include_str!("../../data/templates.v1.json");

/// Versioned question table, one question per dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionTemplates {
    pub version: String,
    pub questions: BTreeMap<Dimension, String>,
}

impl QuestionTemplates {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_TEMPLATES).expect("builtin templates parse")
    }

    pub fn parse(text: &str) -> Result<Self, ChainError> {
        let t: QuestionTemplates = serde_json::from_str(text).map_err(|e| ChainError::Templates(e.to_string()))?;
        for d in Dimension::ALL {
            match t.questions.get(&d) {
                Some(q) if !q.trim().is_empty() => {}
                _ => return Err(ChainError::Templates(format!("no question for {d}"))),
            }
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, ChainError> {
        let text = fs::read_to_string(path).map_err(|e| ChainError::Templates(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn question(&self, d: Dimension) -> &str {
        &self.questions[&d]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub report_id: String,
    pub dimension: Dimension,
    pub question_text: String,
    pub answer_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainedQAPair {
    pub report_id: String,
    pub dimension: Dimension,
    pub prelude: Vec<String>,
    pub question_text: String,
    pub answer_text: String,
    pub serialized_prompt: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainOptions {
    /// Keep "not mentioned" answers in preludes.
    pub include_sentinels: bool,
    /// Chain records that have not passed both review rounds.
    pub allow_unverified: bool,
}

impl Default for ChainOptions {
    fn default() -> Self {
        ChainOptions { include_sentinels: true, allow_unverified: false }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("record {report_id} is {state:?}; only records verified in round 2 can be chained")]
    Unverified { report_id: String, state: Verification },
    #[error("expected six pairs in canonical order: {0}")]
    BadPairs(String),
    #[error("invalid question templates: {0}")]
    Templates(String),
}

/// One QA pair per dimension, answers copied verbatim.
pub fn build_qa_pairs(
    record: &HierarchicalRecord,
    templates: &QuestionTemplates,
    allow_unverified: bool,
) -> Result<Vec<QAPair>, ChainError> {
    if !record.verification.is_final() {
        if !allow_unverified {
            return Err(ChainError::Unverified { report_id: record.report_id.clone(), state: record.verification });
        }
        log::warn!("chaining unverified record {} ({:?}) by override", record.report_id, record.verification);
    }
    record.check().map_err(ChainError::BadPairs)?;
    Ok(Dimension::ALL
        .iter()
        .map(|d| QAPair {
            report_id: record.report_id.clone(),
            dimension: *d,
            question_text: templates.question(*d).to_string(),
            answer_text: record.answer(*d).answer_text.clone(),
        })
        .collect())
}

/// Renders one prelude answer as a declarative sentence.
pub fn render_prelude_answer(answer: &str) -> String {
    let a = answer.trim();
    if a.ends_with(['.', '!', '?']) {
        a.to_string()
    } else {
        format!("{a}.")
    }
}

pub fn serialize_prompt(prelude: &[String], question: &str) -> String {
    let mut out = String::new();
    for a in prelude {
        out.push_str(&render_prelude_answer(a));
        out.push(' ');
    }
    out.push_str(question);
    out
}

/// Turns six canonical QA pairs into chained pairs.
pub fn refactor_chain(pairs: &[QAPair], include_sentinels: bool) -> Result<Vec<ChainedQAPair>, ChainError> {
    if pairs.len() != 6 {
        return Err(ChainError::BadPairs(format!("got {} pairs", pairs.len())));
    }
    for (k, p) in pairs.iter().enumerate() {
        if p.dimension.ordinal() != k {
            return Err(ChainError::BadPairs(format!("pair {k} has dimension {}", p.dimension)));
        }
        if p.report_id != pairs[0].report_id {
            return Err(ChainError::BadPairs("pairs come from different reports".into()));
        }
    }
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let prelude: Vec<String> = pairs[..k]
                .iter()
                .map(|q| q.answer_text.clone())
                .filter(|a| include_sentinels || a != SENTINEL)
                .collect();
            let serialized_prompt = serialize_prompt(&prelude, &p.question_text);
            ChainedQAPair {
                report_id: p.report_id.clone(),
                dimension: p.dimension,
                prelude,
                question_text: p.question_text.clone(),
                answer_text: p.answer_text.clone(),
                serialized_prompt,
            }
        })
        .collect())
}

/// The chained pairs of one record as stored in the chain stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainedRecord {
    pub report_id: String,
    /// Version of the hierarchical record the pairs were built from.
    pub source_version: u64,
    pub source_verification: Verification,
    pub template_version: String,
    pub pairs: Vec<ChainedQAPair>,
}

impl ChainedRecord {
    pub fn build(
        record: &HierarchicalRecord,
        templates: &QuestionTemplates,
        options: ChainOptions,
    ) -> Result<Self, ChainError> {
        let pairs = build_qa_pairs(record, templates, options.allow_unverified)?;
        Ok(ChainedRecord {
            report_id: record.report_id.clone(),
            source_version: record.version,
            source_verification: record.verification,
            template_version: templates.version.clone(),
            pairs: refactor_chain(&pairs, options.include_sentinels)?,
        })
    }
}

impl StageRecord for ChainedRecord {
    const STAGE: Stage = Stage::Chained;

    fn record_id(&self) -> String {
        format!("{}@v{}", self.report_id, self.source_version)
    }

    fn parent(&self) -> Option<(Stage, String)> {
        if self.source_version == 0 {
            Some((Stage::Decomposed, self.report_id.clone()))
        } else {
            Some((Stage::Verified, format!("{}@v{}", self.report_id, self.source_version)))
        }
    }

    fn check(&self) -> Result<(), String> {
        if self.pairs.len() != 6 {
            return Err(format!("expected 6 chained pairs, found {}", self.pairs.len()));
        }
        for (k, p) in self.pairs.iter().enumerate() {
            if p.dimension.ordinal() != k {
                return Err(format!("pair {k} has dimension {}", p.dimension));
            }
        }
        Ok(())
    }
}
