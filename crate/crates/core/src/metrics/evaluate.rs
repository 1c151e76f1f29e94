use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    bertscore, meteor, normalize_tokenize, rouge_l, rouge_n, BertScoreOptions, EmbedError, EmbeddingBackend,
    MeteorParams, Prf, METEOR_VARIANT, NORMALIZATION_ID,
};

/// One line of a candidates or references file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRecord {
    pub report_id: String,
    #[serde(alias = "report_text")]
    pub text: String,
}

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: duplicate report ids: {}", .ids.join(", "))]
    Duplicate { path: PathBuf, ids: Vec<String> },
    #[error("candidates without a reference: {}", .0.join(", "))]
    MissingReferences(Vec<String>),
    #[error("bertscore failed for {report_id}: {source}")]
    Embed {
        report_id: String,
        #[source]
        source: EmbedError,
    },
}

pub fn load_texts(path: &Path) -> Result<Vec<TextRecord>, EvaluateError> {
    let text = fs::read_to_string(path).map_err(|source| EvaluateError::Io { path: path.to_path_buf(), source })?;
    let mut out: Vec<TextRecord> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut dups = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TextRecord = serde_json::from_str(line).map_err(|e| EvaluateError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(rec.report_id.clone()) {
            dups.insert(rec.report_id.clone());
        }
        out.push(rec);
    }
    if !dups.is_empty() {
        return Err(EvaluateError::Duplicate { path: path.to_path_buf(), ids: dups.into_iter().collect() });
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalOptions {
    pub meteor: MeteorParams,
    pub bertscore: BertScoreOptions,
    pub in_flight: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportScores {
    pub report_id: String,
    pub rouge1: Prf<f64>,
    pub rouge2: Prf<f64>,
    pub rouge_l: Prf<f64>,
    pub meteor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bertscore: Option<Prf<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub reports: usize,
    pub rouge1_f1: f64,
    pub rouge2_f1: f64,
    pub rouge_l_f1: f64,
    pub meteor: f64,
    pub bertscore_f1: Option<f64>,
    pub aggregation: String,
    pub meteor_variant: String,
    pub normalization: String,
    pub embedding_backend: Option<String>,
    /// References that had no candidate and were skipped.
    pub unmatched_references: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub reports: Vec<ReportScores>,
    pub summary: EvalSummary,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Scores every candidate against the reference with the same id.
/// Output follows candidate order; corpus figures are arithmetic means of
/// per-report scores.
pub fn evaluate_pairs(
    candidates: &[TextRecord],
    references: &[TextRecord],
    embedding: Option<&dyn EmbeddingBackend>,
    options: &EvalOptions,
) -> Result<EvalOutput, EvaluateError> {
    let refs: HashMap<&str, &TextRecord> = references.iter().map(|r| (r.report_id.as_str(), r)).collect();
    let missing: Vec<String> =
        candidates.iter().filter(|c| !refs.contains_key(c.report_id.as_str())).map(|c| c.report_id.clone()).collect();
    if !missing.is_empty() {
        return Err(EvaluateError::MissingReferences(missing));
    }
    let cand_ids: BTreeSet<&str> = candidates.iter().map(|c| c.report_id.as_str()).collect();
    let unmatched_references: Vec<String> =
        references.iter().filter(|r| !cand_ids.contains(r.report_id.as_str())).map(|r| r.report_id.clone()).collect();
    if !unmatched_references.is_empty() {
        log::warn!("{} references have no candidate and are skipped", unmatched_references.len());
    }

    let score_one = |c: &TextRecord| -> Result<ReportScores, EvaluateError> {
        let cand = normalize_tokenize(&c.text);
        let reference = normalize_tokenize(&refs[c.report_id.as_str()].text);
        let bert = embedding
            .map(|b| bertscore(&cand, &reference, b, &options.bertscore))
            .transpose()
            .map_err(|source| EvaluateError::Embed { report_id: c.report_id.clone(), source })?;
        Ok(ReportScores {
            report_id: c.report_id.clone(),
            rouge1: rouge_n(&cand, &reference, 1).expect("same normalization"),
            rouge2: rouge_n(&cand, &reference, 2).expect("same normalization"),
            rouge_l: rouge_l(&cand, &reference).expect("same normalization"),
            meteor: meteor(&cand, &reference, &options.meteor),
            bertscore: bert,
        })
    };
    let run = || candidates.par_iter().map(score_one).collect::<Result<Vec<_>, _>>();
    let reports = match rayon::ThreadPoolBuilder::new().num_threads(options.in_flight.max(1)).build() {
        Ok(pool) => pool.install(run)?,
        Err(_) => run()?,
    };

    let summary = EvalSummary {
        reports: reports.len(),
        rouge1_f1: mean(reports.iter().map(|r| r.rouge1.f1)),
        rouge2_f1: mean(reports.iter().map(|r| r.rouge2.f1)),
        rouge_l_f1: mean(reports.iter().map(|r| r.rouge_l.f1)),
        meteor: mean(reports.iter().map(|r| r.meteor)),
        bertscore_f1: embedding.map(|_| mean(reports.iter().filter_map(|r| r.bertscore.map(|b| b.f1)))),
        aggregation: "arithmetic-mean".into(),
        meteor_variant: METEOR_VARIANT.into(),
        normalization: NORMALIZATION_ID.into(),
        embedding_backend: embedding.map(|b| b.backend_id()),
        unmatched_references,
    };
    Ok(EvalOutput { reports, summary })
}
