//! Remote LLM segmentation over a tagged-block text protocol.
//!
//! One request per report. The model must answer with
//!
//! ```text
//! <comt>
//! modality: ...
//! organ: ...
//! size: ...
//! abnormal_location: ...
//! symptoms: ...
//! overall_health: ...
//! </comt>
//! ```
//!
//! Anything outside the block is ignored; a block that does not name each
//! dimension exactly once is a schema violation.

use std::collections::BTreeMap;
use std::sync::Mutex;

use super::{DecomposeError, Dimension, DimensionAnswer, HierarchicalRecord, Segmenter, SENTINEL};
use crate::corpus::RawReport;
use crate::llm::{LlmTransport, RetryPolicy};

pub const SEGMENT_PROMPT_ID: &str = "comt-segment-v1";

const OPEN: &str = "<comt>";
const CLOSE: &str = "</comt>";

pub fn render_segment_prompt(report_text: &str) -> String {
    let mut p = String::new();
    p.push_str("You segment radiology reports into six fixed dimensions.\n");
    p.push_str("Use only information stated in the report. ");
    p.push_str(&format!("If the report says nothing about a dimension, answer exactly: {SENTINEL}\n"));
    p.push_str("Reply with this block and nothing else, one line per dimension:\n");
    p.push_str(OPEN);
    p.push('\n');
    for d in Dimension::ALL {
        p.push_str(&format!("{}: <answer>\n", d.as_str()));
    }
    p.push_str(CLOSE);
    p.push_str("\n\nReport:\n");
    p.push_str(report_text.trim());
    p.push('\n');
    p
}

/// Parses a tagged block into six answers in canonical order.
pub fn parse_tagged_block(response: &str) -> Result<Vec<DimensionAnswer>, String> {
    let body = match (response.find(OPEN), response.find(CLOSE)) {
        (Some(a), Some(b)) if a < b => &response[a + OPEN.len()..b],
        (Some(_), _) | (_, Some(_)) => return Err("unbalanced <comt> block".into()),
        (None, None) => response,
    };
    let mut found: BTreeMap<Dimension, String> = BTreeMap::new();
    for line in body.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once(':') else {
            return Err(format!("line without a dimension tag: {line:?}"));
        };
        let dimension: Dimension = key.parse()?;
        if found.insert(dimension, value.trim().to_string()).is_some() {
            return Err(format!("dimension {dimension} given twice"));
        }
    }
    let missing: Vec<&str> = Dimension::ALL.iter().filter(|d| !found.contains_key(d)).map(|d| d.as_str()).collect();
    if !missing.is_empty() {
        return Err(format!("missing dimensions: {}", missing.join(", ")));
    }
    Ok(Dimension::ALL.iter().map(|d| DimensionAnswer::from_text(*d, &found[d], Vec::new())).collect())
}

pub struct RemoteSegmenter<T: LlmTransport> {
    backend_id: String,
    transport: T,
    retry: RetryPolicy,
    archive: Mutex<Vec<(String, String)>>,
}

impl<T: LlmTransport> RemoteSegmenter<T> {
    pub fn new(backend_id: impl Into<String>, transport: T, retry: RetryPolicy) -> Self {
        RemoteSegmenter { backend_id: backend_id.into(), transport, retry, archive: Mutex::new(Vec::new()) }
    }

    /// Every raw response received so far, as `(report_id, response)`.
    pub fn archived_responses(&self) -> Vec<(String, String)> {
        self.archive.lock().map(|a| a.clone()).unwrap_or_default()
    }
}

impl<T: LlmTransport> Segmenter for RemoteSegmenter<T> {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn segment(&self, report: &RawReport) -> Result<HierarchicalRecord, DecomposeError> {
        let prompt = render_segment_prompt(&report.report_text);
        let raw = self
            .retry
            .run(|| self.transport.complete(&prompt))
            .map_err(|source| DecomposeError::Backend { report_id: report.report_id.clone(), source })?;
        if let Ok(mut a) = self.archive.lock() {
            a.push((report.report_id.clone(), raw.clone()));
        }
        let answers = parse_tagged_block(&raw).map_err(|message| DecomposeError::SchemaViolation {
            report_id: report.report_id.clone(),
            message,
            raw_response: raw.clone(),
        })?;
        Ok(HierarchicalRecord::new(report.report_id.clone(), self.backend_id.clone(), answers))
    }

    fn is_deterministic(&self) -> bool {
        false
    }
}
