//! Comparison corpora: model rephrasings and token-level insert, swap and
//! delete augmentation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::store::sha256_hex;
use crate::corpus::RawReport;
use crate::llm::{LlmError, LlmTransport, RetryPolicy};

pub const DEFAULT_RATE: f64 = 0.1;
pub const REPHRASE_PROMPT_ID: &str = "comt-rephrase-v1";

const NEGATIONS: &[&str] = &["no", "not", "without"];
const UNITS: &[&str] = &["mm", "cm", "m", "ml", "cc", "l", "mg", "g", "kg", "mcg", "hu", "mmhg", "bpm", "ms"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    Rephrase,
    EdaInsert,
    EdaSwap,
    EdaDelete,
}

impl AugmentMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AugmentMode::Rephrase => "rephrase",
            AugmentMode::EdaInsert => "eda_insert",
            AugmentMode::EdaSwap => "eda_swap",
            AugmentMode::EdaDelete => "eda_delete",
        }
    }
}

impl fmt::Display for AugmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AugmentMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [AugmentMode::Rephrase, AugmentMode::EdaInsert, AugmentMode::EdaSwap, AugmentMode::EdaDelete]
            .into_iter()
            .find(|m| m.as_str() == s.replace('-', "_"))
            .ok_or_else(|| format!("unknown augment mode {s:?} (rephrase, eda_insert, eda_swap, eda_delete)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub mode: AugmentMode,
    /// Fraction of tokens affected; ignored for rephrasing.
    pub rate: f64,
    pub seed: u64,
}

impl AugmentSpec {
    pub fn new(mode: AugmentMode, rate: f64, seed: u64) -> Result<Self, AugmentError> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(AugmentError::BadRate(rate));
        }
        Ok(AugmentSpec { mode, rate, seed })
    }
}

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("rate must lie in [0, 1], got {0}")]
    BadRate(f64),
    #[error("{0} is not a token-level mode")]
    NotEda(AugmentMode),
    #[error("report {report_id}: deleting {k} of {n} tokens would empty it")]
    CannotDeleteAll { report_id: String, k: usize, n: usize },
    #[error("report {report_id}: {mode} needs {needed} eligible positions, only {available} available")]
    NotEnoughTokens { report_id: String, mode: AugmentMode, needed: usize, available: usize },
    #[error("report {report_id}: rephrasing backend failed: {source}")]
    Backend {
        report_id: String,
        #[source]
        source: LlmError,
    },
    #[error("report {report_id}: rephrasing came back empty")]
    EmptyRephrase { report_id: String },
}

impl AugmentError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, AugmentError::Backend { source, .. } if source.is_retriable())
    }
}

/// `⌈rate·n⌉`, ignoring float noise below 1e-9 (so 0.7·10 is 7, not 8).
pub fn affected_count(rate: f64, n: usize) -> usize {
    let x = rate * n as f64;
    let k = (x - 1e-9).ceil().max(0.0) as usize;
    k.min(n)
}

/// Per-report seed: the run seed mixed with a hash of the report id, so
/// results do not depend on processing order.
pub fn report_seed(seed: u64, report_id: &str) -> u64 {
    let digest = sha256_hex(report_id.as_bytes());
    seed ^ u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}

fn core(token: &str) -> String {
    token.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

fn is_negation(token: &str) -> bool {
    NEGATIONS.contains(&core(token).as_str())
}

/// Negations, anything containing a digit, and measurement units.
pub fn is_protected(token: &str) -> bool {
    let c = core(token);
    NEGATIONS.contains(&c.as_str()) || token.chars().any(|ch| ch.is_ascii_digit()) || UNITS.contains(&c.as_str())
}

fn below(rng: &mut ChaCha8Rng, bound: usize) -> usize {
    rng.gen_range(0..bound as u64) as usize
}

/// `k` distinct items of `pool`, in pool order.
fn choose(rng: &mut ChaCha8Rng, pool: &[usize], k: usize) -> Vec<usize> {
    let mut pool = pool.to_vec();
    for i in 0..k {
        let j = i + below(rng, pool.len() - i);
        pool.swap(i, j);
    }
    let mut picked = pool[..k].to_vec();
    picked.sort_unstable();
    picked
}

fn derived(report: &RawReport, spec: &AugmentSpec, text: String) -> RawReport {
    RawReport {
        report_id: format!("{}#{}", report.report_id, spec.mode),
        split: report.split,
        image_refs: report.image_refs.clone(),
        report_text: text,
        source: report.source.clone(),
        augment_mode: Some(spec.mode.to_string()),
        seed: Some(spec.seed),
    }
}

/// Token-level augmentation over whitespace tokens.
///
/// With `k = ⌈rate·n⌉`: insert duplicates `k` distinct tokens in place,
/// swap performs `k` adjacent swaps, delete removes `k` unprotected
/// tokens. Swaps never involve a protected token. When `k = 0` the text
/// is returned unchanged; otherwise tokens are rejoined with single
/// spaces.
pub fn eda_transform(report: &RawReport, spec: &AugmentSpec) -> Result<RawReport, AugmentError> {
    if !(0.0..=1.0).contains(&spec.rate) {
        return Err(AugmentError::BadRate(spec.rate));
    }
    if spec.mode == AugmentMode::Rephrase {
        return Err(AugmentError::NotEda(spec.mode));
    }
    let tokens: Vec<&str> = report.report_text.split_whitespace().collect();
    let n = tokens.len();
    let k = affected_count(spec.rate, n);
    if k == 0 {
        return Ok(derived(report, spec, report.report_text.clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(report_seed(spec.seed, &report.report_id));
    let not_enough = |needed, available| AugmentError::NotEnoughTokens {
        report_id: report.report_id.clone(),
        mode: spec.mode,
        needed,
        available,
    };

    let out: Vec<&str> = match spec.mode {
        AugmentMode::EdaInsert => {
            let all: Vec<usize> = (0..n).collect();
            let picked = choose(&mut rng, &all, k);
            let mut out = Vec::with_capacity(n + k);
            let mut next = picked.iter().peekable();
            for (i, t) in tokens.iter().enumerate() {
                out.push(*t);
                if next.peek() == Some(&&i) {
                    out.push(*t);
                    next.next();
                }
            }
            out
        }
        AugmentMode::EdaDelete => {
            if k >= n {
                return Err(AugmentError::CannotDeleteAll { report_id: report.report_id.clone(), k, n });
            }
            let deletable: Vec<usize> = (0..n).filter(|&i| !is_protected(tokens[i])).collect();
            if deletable.len() < k {
                return Err(not_enough(k, deletable.len()));
            }
            let picked = choose(&mut rng, &deletable, k);
            tokens.iter().enumerate().filter(|(i, _)| picked.binary_search(i).is_err()).map(|(_, t)| *t).collect()
        }
        AugmentMode::EdaSwap => {
            let pairs: Vec<usize> = (0..n.saturating_sub(1))
                .filter(|&i| !is_protected(tokens[i]) && !is_protected(tokens[i + 1]))
                .collect();
            if pairs.is_empty() {
                return Err(not_enough(1, 0));
            }
            let mut out = tokens.clone();
            for _ in 0..k {
                let i = pairs[below(&mut rng, pairs.len())];
                out.swap(i, i + 1);
            }
            out
        }
        AugmentMode::Rephrase => unreachable!(),
    };
    debug_assert!(out.iter().filter(|t| is_negation(t)).count() >= tokens.iter().filter(|t| is_negation(t)).count());
    Ok(derived(report, spec, out.join(" ")))
}

pub trait Rephraser: Send + Sync {
    fn rephraser_id(&self) -> String;
    fn rephrase(&self, text: &str) -> Result<String, LlmError>;
}

pub fn render_rephrase_prompt(text: &str) -> String {
    format!(
        "Rewrite the following radiology report in different words. Keep every finding, negation, \
         measurement and location exactly as stated. Do not add or remove findings. \
         Reply with the rewritten report only.\n\nReport:\n{}",
        text.trim()
    )
}

pub struct RemoteRephraser<T> {
    id: String,
    transport: T,
    retry: RetryPolicy,
}

impl<T: LlmTransport> RemoteRephraser<T> {
    pub fn new(id: impl Into<String>, transport: T, retry: RetryPolicy) -> Self {
        RemoteRephraser { id: id.into(), transport, retry }
    }
}

impl<T: LlmTransport> Rephraser for RemoteRephraser<T> {
    fn rephraser_id(&self) -> String {
        self.id.clone()
    }

    fn rephrase(&self, text: &str) -> Result<String, LlmError> {
        let prompt = render_rephrase_prompt(text);
        self.retry.run(|| self.transport.complete(&prompt))
    }
}

/// A derived report with id `<id>#rephrase`. The original is untouched.
pub fn rephrase_report(report: &RawReport, rephraser: &dyn Rephraser, seed: u64) -> Result<RawReport, AugmentError> {
    let text = rephraser
        .rephrase(&report.report_text)
        .map_err(|source| AugmentError::Backend { report_id: report.report_id.clone(), source })?;
    if text.trim().is_empty() {
        return Err(AugmentError::EmptyRephrase { report_id: report.report_id.clone() });
    }
    let spec = AugmentSpec { mode: AugmentMode::Rephrase, rate: 0.0, seed };
    Ok(derived(report, &spec, text.trim().to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentRejection {
    pub report_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentOutcome {
    pub reports: Vec<RawReport>,
    pub rejections: Vec<AugmentRejection>,
}

/// Augments every report. Reports that cannot be transformed are listed
/// as rejections; a failing rephrasing backend aborts the run.
pub fn augment_corpus(
    reports: &[RawReport],
    spec: &AugmentSpec,
    rephraser: Option<&dyn Rephraser>,
    in_flight: usize,
) -> Result<AugmentOutcome, AugmentError> {
    if spec.mode != AugmentMode::Rephrase && !(0.0..=1.0).contains(&spec.rate) {
        return Err(AugmentError::BadRate(spec.rate));
    }
    let one = |r: &RawReport| match (spec.mode, rephraser) {
        (AugmentMode::Rephrase, Some(b)) => rephrase_report(r, b, spec.seed),
        (AugmentMode::Rephrase, None) => Err(AugmentError::Backend {
            report_id: r.report_id.clone(),
            source: LlmError::BadResponse("no rephrasing backend configured".into()),
        }),
        _ => eda_transform(r, spec),
    };
    let run = || reports.par_iter().map(one).collect::<Vec<_>>();
    let results = match rayon::ThreadPoolBuilder::new().num_threads(in_flight.max(1)).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    };
    let mut out = AugmentOutcome::default();
    for (r, res) in reports.iter().zip(results) {
        match res {
            Ok(a) => out.reports.push(a),
            Err(e @ AugmentError::Backend { .. }) => return Err(e),
            Err(e) => {
                log::warn!("{e}; original retained");
                out.rejections.push(AugmentRejection { report_id: r.report_id.clone(), reason: e.to_string() });
            }
        }
    }
    Ok(out)
}
