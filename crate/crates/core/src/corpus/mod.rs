//! Raw report ingestion, sentence segmentation and the record store.

mod sentences;
pub mod store;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use sentences::{split_sentences, Sentence};
pub use store::{RecordStore, Stage, StageRecord, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One source report as it appears in the raw corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawReport {
    pub report_id: String,
    pub split: Split,
    #[serde(default)]
    pub image_refs: Vec<String>,
    pub report_text: String,
    pub source: String,
    /// Set on reports produced by augmentation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augment_mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl RawReport {
    pub fn new(report_id: impl Into<String>, split: Split, report_text: impl Into<String>) -> Self {
        RawReport {
            report_id: report_id.into(),
            split,
            image_refs: Vec::new(),
            report_text: report_text.into(),
            source: String::new(),
            augment_mode: None,
            seed: None,
        }
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    pub fn with_images<I, S>(mut self, refs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.image_refs = refs.into_iter().map(Into::into).collect();
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.report_id.trim().is_empty() {
            return Err("empty report_id".into());
        }
        if self.report_text.trim().is_empty() {
            return Err("empty report_text".into());
        }
        Ok(())
    }

    pub fn sentences(&self) -> Vec<Sentence> {
        split_sentences(&self.report_text)
    }
}

/// A line of the raw corpus that could not be turned into a [`RawReport`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedLine {
    /// 1-based line number in the input file.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadedCorpus {
    pub reports: Vec<RawReport>,
    pub rejects: Vec<RejectedLine>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus file {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate report_id values: {}", .ids.join(", "))]
    DuplicateIds { ids: Vec<String> },
}

/// Reads a line-delimited raw corpus.
///
/// Malformed lines and empty reports are collected in
/// [`LoadedCorpus::rejects`]; duplicate ids abort the whole load. When
/// `source_tag` is non-empty it overrides the per-line `source` field.
pub fn load_raw_corpus(path: &Path, source_tag: &str) -> Result<LoadedCorpus, CorpusError> {
    let text =
        fs::read_to_string(path).map_err(|source| CorpusError::Unreadable { path: path.to_path_buf(), source })?;
    parse_raw_corpus(&text, source_tag)
}

pub fn parse_raw_corpus(text: &str, source_tag: &str) -> Result<LoadedCorpus, CorpusError> {
    let mut out = LoadedCorpus::default();
    let mut first_line: BTreeMap<String, usize> = BTreeMap::new();
    let mut duplicates: Vec<String> = Vec::new();
    let mut seen_dup: HashSet<String> = HashSet::new();

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut report: RawReport = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                out.rejects.push(RejectedLine { line: line_no, reason: e.to_string() });
                continue;
            }
        };
        if !source_tag.is_empty() {
            report.source = source_tag.to_string();
        }
        if let Err(reason) = report.validate() {
            out.rejects.push(RejectedLine { line: line_no, reason });
            continue;
        }
        if first_line.insert(report.report_id.clone(), line_no).is_some() && seen_dup.insert(report.report_id.clone()) {
            duplicates.push(report.report_id.clone());
        }
        out.reports.push(report);
    }

    if !duplicates.is_empty() {
        return Err(CorpusError::DuplicateIds { ids: duplicates });
    }
    Ok(out)
}
