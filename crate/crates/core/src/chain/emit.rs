use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ChainedRecord;
use crate::corpus::{RawReport, RecordStore, Split, StoreError};
use crate::decompose::Dimension;

pub const ORIGINAL_REPORT_PROMPT: &str = "Write the medical report for this image.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmitMode {
    Chained,
    FlatQa,
    OriginalReport,
}

impl EmitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EmitMode::Chained => "chained",
            EmitMode::FlatQa => "flat-qa",
            EmitMode::OriginalReport => "original-report",
        }
    }
}

impl std::str::FromStr for EmitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chained" => Ok(EmitMode::Chained),
            "flat-qa" => Ok(EmitMode::FlatQa),
            "original-report" => Ok(EmitMode::OriginalReport),
            other => Err(format!("unknown mode {other:?} (chained, flat-qa, original-report)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmitOptions {
    pub mode: EmitMode,
    /// Emit only these dimensions; `None` emits all six.
    pub dimensions: Option<Vec<Dimension>>,
}

impl EmitOptions {
    pub fn new(mode: EmitMode) -> Self {
        EmitOptions { mode, dimensions: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub example_id: String,
    pub report_id: String,
    pub image_refs: Vec<String>,
    pub prompt: String,
    pub target: String,
    pub dimension: Option<Dimension>,
    pub mode: EmitMode,
    pub template_version: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmitSummary {
    pub counts: BTreeMap<Split, usize>,
    pub total: usize,
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

/// Writes one `<split>.jsonl` per split under `out_dir`, sorted by report
/// id then dimension. Identical store contents give identical bytes.
pub fn emit_dataset(store: &RecordStore, out_dir: &Path, options: &EmitOptions) -> Result<EmitSummary, StoreError> {
    let raw: Vec<RawReport> = store.read()?;
    let by_id: HashMap<&str, &RawReport> = raw.iter().map(|r| (r.report_id.as_str(), r)).collect();
    let keep = |d: Dimension| options.dimensions.as_ref().is_none_or(|ds| ds.contains(&d));

    let mut examples: Vec<(Split, TrainingExample)> = Vec::new();
    let mut warnings = Vec::new();
    match options.mode {
        EmitMode::OriginalReport => {
            for r in &raw {
                examples.push((
                    r.split,
                    TrainingExample {
                        example_id: format!("{}:{}", options.mode.as_str(), r.report_id),
                        report_id: r.report_id.clone(),
                        image_refs: r.image_refs.clone(),
                        prompt: ORIGINAL_REPORT_PROMPT.to_string(),
                        target: r.report_text.clone(),
                        dimension: None,
                        mode: options.mode,
                        template_version: None,
                    },
                ));
            }
        }
        EmitMode::Chained | EmitMode::FlatQa => {
            let mut latest: BTreeMap<String, ChainedRecord> = BTreeMap::new();
            for c in store.read::<ChainedRecord>()? {
                match latest.get(&c.report_id) {
                    Some(prev) if prev.source_version >= c.source_version => {}
                    _ => {
                        latest.insert(c.report_id.clone(), c);
                    }
                }
            }
            for c in latest.values() {
                let Some(r) = by_id.get(c.report_id.as_str()) else {
                    warnings.push(format!("chained record {} has no raw report", c.report_id));
                    continue;
                };
                for p in c.pairs.iter().filter(|p| keep(p.dimension)) {
                    let prompt = match options.mode {
                        EmitMode::Chained => p.serialized_prompt.clone(),
                        _ => p.question_text.clone(),
                    };
                    examples.push((
                        r.split,
                        TrainingExample {
                            example_id: format!("{}:{}:{}", options.mode.as_str(), c.report_id, p.dimension),
                            report_id: c.report_id.clone(),
                            image_refs: r.image_refs.clone(),
                            prompt,
                            target: p.answer_text.clone(),
                            dimension: Some(p.dimension),
                            mode: options.mode,
                            template_version: Some(c.template_version.clone()),
                        },
                    ));
                }
            }
        }
    }
    examples.sort_by(|a, b| a.1.report_id.cmp(&b.1.report_id).then(a.1.dimension.cmp(&b.1.dimension)));
    if examples.is_empty() {
        let msg = format!("no records available for {} emission; writing empty files", options.mode.as_str());
        log::warn!("{msg}");
        warnings.push(msg);
    }

    fs::create_dir_all(out_dir).map_err(|source| StoreError::Io { path: out_dir.to_path_buf(), source })?;
    let mut summary = EmitSummary { warnings, ..EmitSummary::default() };
    for split in Split::ALL {
        let path = out_dir.join(format!("{split}.jsonl"));
        let tmp = out_dir.join(format!(".{split}.jsonl.tmp"));
        let io = |source| StoreError::Io { path: path.clone(), source };
        let mut w = BufWriter::new(File::create(&tmp).map_err(io)?);
        let mut n = 0;
        for (_, ex) in examples.iter().filter(|(s, _)| *s == split) {
            let line = serde_json::to_string(ex).expect("example serializes");
            w.write_all(line.as_bytes()).map_err(io)?;
            w.write_all(b"\n").map_err(io)?;
            n += 1;
        }
        w.flush().map_err(io)?;
        drop(w);
        fs::rename(&tmp, &path).map_err(io)?;
        summary.counts.insert(split, n);
        summary.total += n;
        summary.files.push(path);
    }
    Ok(summary)
}
