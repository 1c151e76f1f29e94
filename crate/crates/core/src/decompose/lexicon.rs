//! Deterministic keyword segmentation.
//!
//! Modality and overall-health answers are whole clauses: every sentence
//! holding a trigger contributes its text (header and enumerator removed).
//! Modality keeps the clause verbatim; overall health is lowercased with
//! filler words dropped. The other four dimensions collect matched terms,
//! merging adjacent hits of the same dimension into one phrase ("left
//! pleural"). Size, location and symptom terms inside a negated clause
//! ("no pleural effusion") are not reported as findings.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DecomposeError, Dimension, DimensionAnswer, HierarchicalRecord, Segmenter};
use crate::corpus::{split_sentences, RawReport};

pub const DEFAULT_LEXICON_ID: &str = "comt-lexicon-v1";
const DEFAULT_LEXICON: &str = include_str!("../../data/lexicon.v1.jsonl");

const NEGATIONS: &[&str] = &["no", "not", "without", "negative"];
const FILLER: &[&str] = &["the", "a", "an", "is", "are", "was", "were", "be", "been", "there"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub dimension: Dimension,
    /// Space-separated words matched case-insensitively on word
    /// boundaries. A trailing `*` on a word matches any suffix; the word
    /// `<num>` matches a numeral.
    pub pattern: String,
    #[serde(default)]
    pub priority: i32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum PatternWord {
    Exact(String),
    Prefix(String),
    Number,
}

impl PatternWord {
    fn matches(&self, token: &str) -> bool {
        match self {
            PatternWord::Exact(w) => token == w,
            PatternWord::Prefix(p) => token.starts_with(p.as_str()),
            PatternWord::Number => is_number(token),
        }
    }
}

#[derive(Debug, Clone)]
struct CompiledEntry {
    dimension: Dimension,
    words: Vec<PatternWord>,
    priority: i32,
}

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("cannot read lexicon {path}: {message}")]
    Unreadable { path: String, message: String },
    #[error("lexicon line {line}: {message}")]
    BadEntry { line: usize, message: String },
}

#[derive(Debug, Clone)]
pub struct Lexicon {
    id: String,
    entries: Vec<CompiledEntry>,
}

impl Lexicon {
    /// The lexicon shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_LEXICON_ID, DEFAULT_LEXICON).expect("builtin lexicon parses")
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        let text = fs::read_to_string(path)
            .map_err(|e| LexiconError::Unreadable { path: path.display().to_string(), message: e.to_string() })?;
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("lexicon").to_string();
        Self::parse(&id, &text)
    }

    pub fn parse(id: &str, text: &str) -> Result<Self, LexiconError> {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: LexiconEntry = serde_json::from_str(line)
                .map_err(|e| LexiconError::BadEntry { line: idx + 1, message: e.to_string() })?;
            entries.push(compile(&entry).map_err(|message| LexiconError::BadEntry { line: idx + 1, message })?);
        }
        Ok(Lexicon { id: id.to_string(), entries })
    }

    pub fn from_entries(id: &str, entries: &[LexiconEntry]) -> Result<Self, LexiconError> {
        let compiled = entries
            .iter()
            .enumerate()
            .map(|(i, e)| compile(e).map_err(|message| LexiconError::BadEntry { line: i + 1, message }))
            .collect::<Result<_, _>>()?;
        Ok(Lexicon { id: id.to_string(), entries: compiled })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn compile(entry: &LexiconEntry) -> Result<CompiledEntry, String> {
    let words: Vec<PatternWord> = entry
        .pattern
        .split_whitespace()
        .map(|w| {
            let w = w.to_lowercase();
            if w == "<num>" {
                PatternWord::Number
            } else if let Some(stem) = w.strip_suffix('*') {
                PatternWord::Prefix(stem.to_string())
            } else {
                PatternWord::Exact(w)
            }
        })
        .collect();
    if words.is_empty() {
        return Err("empty pattern".into());
    }
    if words.iter().any(|w| matches!(w, PatternWord::Prefix(p) | PatternWord::Exact(p) if p.is_empty())) {
        return Err(format!("degenerate pattern {:?}", entry.pattern));
    }
    Ok(CompiledEntry { dimension: entry.dimension, words, priority: entry.priority })
}

fn is_number(token: &str) -> bool {
    let mut dots = 0;
    let mut digits = 0;
    for c in token.chars() {
        match c {
            '0'..='9' => digits += 1,
            '.' => dots += 1,
            _ => return false,
        }
    }
    digits > 0 && dots <= 1
}

#[derive(Debug, Clone)]
struct Token {
    lower: String,
    span: (usize, usize),
    clause: usize,
}

/// Word tokens of `chars[start..end]` with absolute character spans.
fn tokens(chars: &[char], start: usize, end: usize) -> Vec<Token> {
    let mut out = Vec::new();
    let mut clause = 0;
    let mut i = start;
    while i < end {
        let c = chars[i];
        if matches!(c, ',' | ';' | ':') {
            clause += 1;
        }
        if !c.is_alphanumeric() {
            i += 1;
            continue;
        }
        let s = i;
        while i < end
            && (chars[i].is_alphanumeric()
                || (matches!(chars[i], '-' | '\'' | '.') && i + 1 < end && chars[i + 1].is_alphanumeric()))
        {
            i += 1;
        }
        let lower: String = chars[s..i].iter().collect::<String>().to_lowercase();
        if lower == "but" || lower == "however" {
            clause += 1;
        }
        out.push(Token { lower, span: (s, i), clause });
    }
    out
}

struct Hit {
    dimension: Dimension,
    first: usize,
    last: usize,
    priority: i32,
}

fn hits(lexicon: &Lexicon, toks: &[Token]) -> Vec<Hit> {
    let mut out = Vec::new();
    for entry in &lexicon.entries {
        let n = entry.words.len();
        if n > toks.len() {
            continue;
        }
        for p in 0..=toks.len() - n {
            if entry.words.iter().zip(&toks[p..p + n]).all(|(w, t)| w.matches(&t.lower)) {
                out.push(Hit { dimension: entry.dimension, first: p, last: p + n - 1, priority: entry.priority });
            }
        }
    }
    out
}

fn is_clause_dimension(d: Dimension) -> bool {
    matches!(d, Dimension::Modality | Dimension::OverallHealth)
}

fn negatable(d: Dimension) -> bool {
    matches!(d, Dimension::Size | Dimension::AbnormalLocation | Dimension::Symptoms)
}

#[derive(Default)]
struct Collected {
    phrases: Vec<String>,
    spans: Vec<(usize, usize)>,
}

impl Collected {
    fn push(&mut self, phrase: String, span: (usize, usize)) {
        if phrase.is_empty() {
            return;
        }
        if !self.phrases.contains(&phrase) {
            self.phrases.push(phrase);
        }
        self.spans.push(span);
    }
}

/// Segments `text` into six answers using `lexicon`. Pure and
/// deterministic.
pub fn rule_segment(text: &str, lexicon: &Lexicon) -> Vec<DimensionAnswer> {
    let chars: Vec<char> = text.chars().collect();
    let mut collected: Vec<Collected> = (0..6).map(|_| Collected::default()).collect();

    for sentence in split_sentences(text) {
        let (s_start, s_end) = clause_bounds(&chars, sentence.span);
        if s_start >= s_end {
            continue;
        }
        let toks = tokens(&chars, s_start, s_end);
        let found = hits(lexicon, &toks);

        let mut clause_dims: Vec<Dimension> =
            found.iter().map(|h| h.dimension).filter(|d| is_clause_dimension(*d)).collect();
        clause_dims.sort();
        clause_dims.dedup();
        for d in clause_dims {
            let raw: String = chars[s_start..s_end].iter().collect();
            let phrase = match d {
                Dimension::OverallHealth => condense(&raw),
                _ => raw,
            };
            collected[d.ordinal()].push(phrase, (s_start, s_end));
        }

        // term dimensions: each token goes to its strongest hit
        let mut term_hits: Vec<&Hit> = found.iter().filter(|h| !is_clause_dimension(h.dimension)).collect();
        term_hits.sort_by(|a, b| {
            b.priority
                .cmp(&a.priority)
                .then((b.last - b.first).cmp(&(a.last - a.first)))
                .then(a.dimension.cmp(&b.dimension))
                .then(a.first.cmp(&b.first))
        });
        let mut owner: Vec<Option<Dimension>> = vec![None; toks.len()];
        for h in term_hits {
            if owner[h.first..=h.last].iter().all(Option::is_none) {
                for o in &mut owner[h.first..=h.last] {
                    *o = Some(h.dimension);
                }
            }
        }
        let negated: Vec<bool> = toks
            .iter()
            .enumerate()
            .map(|(i, t)| toks[..i].iter().any(|p| p.clause == t.clause && NEGATIONS.contains(&p.lower.as_str())))
            .collect();

        let mut i = 0;
        while i < toks.len() {
            let Some(d) = owner[i] else {
                i += 1;
                continue;
            };
            let mut j = i;
            while j + 1 < toks.len() && owner[j + 1] == Some(d) && toks[j + 1].clause == toks[i].clause {
                j += 1;
            }
            if !(negatable(d) && negated[i]) {
                let span = (toks[i].span.0, toks[j].span.1);
                let phrase: String = chars[span.0..span.1].iter().collect::<String>().to_lowercase();
                collected[d.ordinal()].push(phrase, span);
            }
            i = j + 1;
        }
    }

    Dimension::ALL
        .iter()
        .zip(collected)
        .map(|(d, c)| {
            if c.phrases.is_empty() {
                DimensionAnswer::absent(*d)
            } else {
                DimensionAnswer::from_text(*d, &c.phrases.join("; "), c.spans)
            }
        })
        .collect()
}

/// Sentence span without a leading section header ("Impression:"), list
/// enumerator ("2.") or trailing terminators.
fn clause_bounds(chars: &[char], (mut s, mut e): (usize, usize)) -> (usize, usize) {
    while e > s && matches!(chars[e - 1], '.' | '!' | '?' | ')' | ']' | '"' | '\'' | ' ') {
        e -= 1;
    }
    // header: up to three words then a colon
    if let Some(colon) = (s..e).find(|&k| chars[k] == ':') {
        let head: String = chars[s..colon].iter().collect();
        if head.split_whitespace().count() <= 3 && head.chars().all(|c| c.is_alphabetic() || c == ' ') {
            s = colon + 1;
        }
    }
    while s < e && chars[s].is_whitespace() {
        s += 1;
    }
    let mut k = s;
    while k < e && chars[k].is_ascii_digit() {
        k += 1;
    }
    if k > s && k < e && matches!(chars[k], '.' | ')') && k + 1 < e && chars[k + 1].is_whitespace() {
        s = k + 1;
        while s < e && chars[s].is_whitespace() {
            s += 1;
        }
    }
    (s, e)
}

fn condense(clause: &str) -> String {
    clause
        .split_whitespace()
        .filter(|w| {
            let bare: String = w.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
            !FILLER.contains(&bare.as_str())
        })
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// The offline segmentation backend.
#[derive(Debug, Clone)]
pub struct RuleSegmenter {
    backend_id: String,
    lexicon: Lexicon,
}

impl RuleSegmenter {
    pub fn new(lexicon: Lexicon) -> Self {
        RuleSegmenter { backend_id: format!("rule:{}", lexicon.id()), lexicon }
    }

    pub fn builtin() -> Self {
        Self::new(Lexicon::builtin())
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }
}

impl Segmenter for RuleSegmenter {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn segment(&self, report: &RawReport) -> Result<HierarchicalRecord, DecomposeError> {
        let answers = rule_segment(&report.report_text, &self.lexicon);
        Ok(HierarchicalRecord::new(report.report_id.clone(), self.backend_id.clone(), answers))
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}
