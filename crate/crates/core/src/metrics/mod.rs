//! Reference-based text metrics: ROUGE-1/2/L, a METEOR variant with
//! exact and stem matching, and BERTScore over a pluggable embedding
//! backend.

mod bertscore;
mod evaluate;
mod meteor;

use std::collections::HashMap;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bertscore::{
    bertscore, BertScoreOptions, EmbedError, EmbeddingBackend, EmbeddingConfig, EmbeddingKind, HashedEmbeddings,
    OrthogonalEmbeddings, RemoteEmbeddings,
};
pub use evaluate::{
    evaluate_pairs, load_texts, EvalOptions, EvalOutput, EvalSummary, EvaluateError, ReportScores, TextRecord,
};
pub use meteor::{meteor, meteor_alignment, stem, Alignment, MeteorParams, METEOR_VARIANT};

pub const NORMALIZATION_ID: &str = "lower-alnum-decimal-v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<String>,
    pub normalization: String,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Lowercases, turns punctuation into separators and splits on
/// whitespace. A `.` or `,` between two digits stays, so "1.5" is one
/// token.
pub fn normalize_tokenize(text: &str) -> TokenSeq {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        let numeric_sep = (c == '.' || c == ',')
            && i > 0
            && chars[i - 1].is_ascii_digit()
            && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
        if c.is_alphanumeric() || numeric_sep {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            tokens.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    TokenSeq { tokens, normalization: NORMALIZATION_ID.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
    /// Set when an input was too short to score.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl<T: Float> Prf<T> {
    pub fn new(precision: T, recall: T) -> Self {
        let sum = precision + recall;
        let f1 = if sum == T::zero() { T::zero() } else { (T::one() + T::one()) * precision * recall / sum };
        Prf { precision, recall, f1, degenerate: false }
    }

    pub fn degenerate() -> Self {
        Prf { precision: T::zero(), recall: T::zero(), f1: T::zero(), degenerate: true }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("ROUGE-N supports n = 1 or 2, got {0}")]
    UnsupportedN(usize),
    #[error("token sequences use different normalizations: {0} vs {1}")]
    NormalizationMismatch(String, String),
}

fn ratio<T: Float>(num: usize, den: usize) -> T {
    T::from(num).expect("count fits") / T::from(den).expect("count fits")
}

fn check_norm(a: &TokenSeq, b: &TokenSeq) -> Result<(), MetricError> {
    if a.normalization != b.normalization {
        return Err(MetricError::NormalizationMismatch(a.normalization.clone(), b.normalization.clone()));
    }
    Ok(())
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram overlap.
pub fn rouge_n<T: Float>(candidate: &TokenSeq, reference: &TokenSeq, n: usize) -> Result<Prf<T>, MetricError> {
    if !(1..=2).contains(&n) {
        return Err(MetricError::UnsupportedN(n));
    }
    check_norm(candidate, reference)?;
    if candidate.len() < n || reference.len() < n {
        return Ok(Prf::degenerate());
    }
    let cand = ngram_counts(&candidate.tokens, n);
    let refc = ngram_counts(&reference.tokens, n);
    let overlap: usize = cand.iter().map(|(g, c)| (*c).min(refc.get(g).copied().unwrap_or(0))).sum();
    let cand_total = candidate.len() + 1 - n;
    let ref_total = reference.len() + 1 - n;
    Ok(Prf::new(ratio(overlap, cand_total), ratio(overlap, ref_total)))
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: Float>(candidate: &TokenSeq, reference: &TokenSeq) -> Result<Prf<T>, MetricError> {
    check_norm(candidate, reference)?;
    if candidate.is_empty() || reference.is_empty() {
        return Ok(Prf::degenerate());
    }
    let l = lcs_len(&candidate.tokens, &reference.tokens);
    Ok(Prf::new(ratio(l, candidate.len()), ratio(l, reference.len())))
}
