//! Candidate reports with known hallucinations.
//!
//! Each reference sentence draws a target label from the configured
//! rates and is mutated to match it. The ledger of actual labels is the
//! ground truth that the scorer must reproduce.

mod oracle;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::store::sha256_hex;
use crate::corpus::{split_sentences, RawReport};
use crate::decompose::{Dimension, HierarchicalRecord};
use crate::medihall::{weighted_mean, HallucinationLabel};
use crate::scalar::Scalar;

pub use oracle::{
    sensitivity_sweep, validate_pipeline, ConfusionMatrix, JudgeMode, Mismatch, OracleJudge, SweepPoint,
    ValidationReport, ORACLE_ID, ORACLE_SECOND_ID,
};

const BUILTIN_TABLES: &str = include_str!("../../data/confusion.v1.json");

#[derive(Debug, Error)]
pub enum InjectError {
    #[error("invalid injection rates: {0}")]
    BadRates(String),
    #[error("report {0} has no sentences")]
    EmptyReport(String),
    #[error("confusion tables: {0}")]
    Tables(String),
    #[error("report {report_id}: mutated text no longer splits into the same {expected} sentences")]
    Resplit { report_id: String, expected: usize },
}

/// Probabilities of each hallucination type per sentence; the rest of the
/// mass leaves sentences untouched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectionRates {
    #[serde(rename = "Catastrophic")]
    pub catastrophic: f64,
    #[serde(rename = "Critical")]
    pub critical: f64,
    #[serde(rename = "Attribute")]
    pub attribute: f64,
}

impl InjectionRates {
    pub fn new(catastrophic: f64, critical: f64, attribute: f64) -> Result<Self, InjectError> {
        let r = InjectionRates { catastrophic, critical, attribute };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), InjectError> {
        for (name, v) in
            [("Catastrophic", self.catastrophic), ("Critical", self.critical), ("Attribute", self.attribute)]
        {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(InjectError::BadRates(format!("{name} rate {v} must be >= 0")));
            }
        }
        let sum = self.catastrophic + self.critical + self.attribute;
        if sum > 1.0 + 1e-12 {
            return Err(InjectError::BadRates(format!("rates sum to {sum}, more than 1")));
        }
        Ok(())
    }

    /// Label whose band contains `u`, for `u` uniform in `[0, 1)`.
    pub fn draw(&self, u: f64) -> HallucinationLabel {
        if u < self.catastrophic {
            HallucinationLabel::Catastrophic
        } else if u < self.catastrophic + self.critical {
            HallucinationLabel::Critical
        } else if u < self.catastrophic + self.critical + self.attribute {
            HallucinationLabel::Attribute
        } else {
            HallucinationLabel::Correct
        }
    }
}

/// Parses `cat=0.2,crit=0.1,attr=0.1`; omitted types default to 0.
impl FromStr for InjectionRates {
    type Err = InjectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut r = InjectionRates { catastrophic: 0.0, critical: 0.0, attribute: 0.0 };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| InjectError::BadRates(format!("expected key=value, got {part:?}")))?;
            let v: f64 = v.trim().parse().map_err(|_| InjectError::BadRates(format!("bad number in {part:?}")))?;
            match k.trim().to_ascii_lowercase().as_str() {
                "cat" | "catastrophic" => r.catastrophic = v,
                "crit" | "critical" => r.critical = v,
                "attr" | "attribute" => r.attribute = v,
                other => return Err(InjectError::BadRates(format!("unknown rate key {other:?} (cat, crit, attr)"))),
            }
        }
        r.validate()?;
        Ok(r)
    }
}

impl fmt::Display for InjectionRates {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cat={},crit={},attr={}", self.catastrophic, self.critical, self.attribute)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectionSpec {
    pub rates: InjectionRates,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTables {
    pub version: String,
    pub disease_groups: Vec<Vec<String>>,
    pub attribute_groups: Vec<Vec<String>>,
    pub fabrications: Vec<String>,
    pub normal_statements: Vec<String>,
}

impl ConfusionTables {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_TABLES).expect("builtin confusion tables are valid")
    }

    pub fn load(path: &Path) -> Result<Self, InjectError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| InjectError::Tables(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, InjectError> {
        let t: ConfusionTables = serde_json::from_str(text).map_err(|e| InjectError::Tables(e.to_string()))?;
        let mut seen = HashSet::new();
        for g in t.disease_groups.iter().chain(&t.attribute_groups) {
            if g.len() < 2 {
                return Err(InjectError::Tables(format!("group {g:?} needs at least two members")));
            }
            for w in g {
                if !seen.insert(w.to_lowercase()) {
                    return Err(InjectError::Tables(format!("{w:?} appears in more than one group")));
                }
            }
        }
        if t.fabrications.is_empty() || t.normal_statements.is_empty() {
            return Err(InjectError::Tables("fabrications and normal_statements must be non-empty".into()));
        }
        for s in t.fabrications.iter().chain(&t.normal_statements) {
            if split_sentences(s).len() != 1 {
                return Err(InjectError::Tables(format!("{s:?} is not a single sentence")));
            }
        }
        Ok(t)
    }

    fn group_of<'a>(groups: &'a [Vec<String>], word: &str) -> Option<&'a Vec<String>> {
        groups.iter().find(|g| g.iter().any(|w| w.eq_ignore_ascii_case(word)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mutation {
    None,
    Fabrication {
        finding: String,
    },
    /// The sentence's disease is dropped in favour of an unrelated normal
    /// statement, keeping the sentence count.
    Omission {
        replacement: String,
    },
    DiseaseSwap {
        from: String,
        to: String,
    },
    AttributeSwap {
        from: String,
        to: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub report_id: String,
    pub sentence_index: usize,
    /// Label drawn from the rates.
    pub target: HallucinationLabel,
    /// Label actually injected; this is the ground truth.
    pub label: HallucinationLabel,
    pub original: String,
    pub mutated: String,
    pub mutation: Mutation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedReport {
    pub report_id: String,
    pub candidate_text: String,
    pub entries: Vec<LedgerEntry>,
    pub expected_score: f64,
}

impl InjectedReport {
    pub fn labels(&self) -> Vec<HallucinationLabel> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn expected<T: Scalar>(&self) -> T {
        weighted_mean(&self.labels()).expect("injected reports have at least one sentence")
    }

    pub fn candidate(&self, reference: &RawReport) -> RawReport {
        RawReport { report_text: self.candidate_text.clone(), ..reference.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedCorpus {
    pub spec: InjectionSpec,
    pub tables_version: String,
    pub reports: Vec<InjectedReport>,
}

impl InjectedCorpus {
    pub fn expected_corpus_score<T: Scalar>(&self) -> Option<T> {
        let scores: Vec<T> = self.reports.iter().map(|r| r.expected()).collect();
        crate::scalar::mean(&scores)
    }

    pub fn ledger(&self) -> impl Iterator<Item = &LedgerEntry> {
        self.reports.iter().flat_map(|r| &r.entries)
    }
}

fn sentence_rng(seed: u64, report_id: &str, index: usize, stream: u64) -> ChaCha8Rng {
    let digest = sha256_hex(format!("{report_id}#{index}").as_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ u64::from_str_radix(&digest[..16], 16).expect("hex digest"));
    rng.set_stream(stream);
    rng
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[rng.gen_range(0..items.len() as u64) as usize]
}

/// Word tokens of a sentence as `(start, end)` byte ranges.
fn words(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, text.len()));
    }
    out
}

fn match_case(original: &str, replacement: &str) -> String {
    if original.chars().next().is_some_and(char::is_uppercase) {
        let mut c = replacement.chars();
        c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
    } else {
        replacement.to_string()
    }
}

/// Positions of words that belong to one of `groups`, restricted to
/// `preferred` when any of those occur.
fn swappable(text: &str, groups: &[Vec<String>], preferred: &HashSet<String>) -> Vec<(usize, usize)> {
    let hits: Vec<(usize, usize)> =
        words(text).into_iter().filter(|&(s, e)| ConfusionTables::group_of(groups, &text[s..e]).is_some()).collect();
    let pref: Vec<(usize, usize)> =
        hits.iter().copied().filter(|&(s, e)| preferred.contains(&text[s..e].to_lowercase())).collect();
    if pref.is_empty() {
        hits
    } else {
        pref
    }
}

fn swap_in(rng: &mut ChaCha8Rng, text: &str, groups: &[Vec<String>], at: (usize, usize)) -> (String, String, String) {
    let from = &text[at.0..at.1];
    let group = ConfusionTables::group_of(groups, from).expect("position was matched against the groups");
    let others: Vec<&String> = group.iter().filter(|w| !w.eq_ignore_ascii_case(from)).collect();
    let to = match_case(from, pick(rng, &others));
    let mutated = format!("{}{}{}", &text[..at.0], to, &text[at.1..]);
    (mutated, from.to_string(), to)
}

/// Terms the record puts in its size and location answers.
fn attribute_terms(record: Option<&HierarchicalRecord>) -> HashSet<String> {
    let Some(r) = record else { return HashSet::new() };
    [Dimension::Size, Dimension::AbnormalLocation]
        .iter()
        .filter(|d| r.answer(**d).mentioned)
        .flat_map(|d| {
            let t = &r.answer(*d).answer_text;
            words(t).into_iter().map(|(s, e)| t[s..e].to_lowercase()).collect::<Vec<_>>()
        })
        .collect()
}

fn mutate_sentence(
    report_id: &str,
    index: usize,
    original: &str,
    target: HallucinationLabel,
    tables: &ConfusionTables,
    preferred_attrs: &HashSet<String>,
    seed: u64,
) -> LedgerEntry {
    use HallucinationLabel::*;
    let mut rng = sentence_rng(seed, report_id, index, 1);
    let diseases = swappable(original, &tables.disease_groups, &HashSet::new());
    let attrs = swappable(original, &tables.attribute_groups, preferred_attrs);

    // Labels that cannot be realised fall back to the next milder one that
    // can, so a higher target never yields a lower weight.
    let (label, note) = match target {
        Critical if diseases.is_empty() && !attrs.is_empty() => {
            (Attribute, Some("no disease term; re-rolled Critical to Attribute".to_string()))
        }
        Critical if diseases.is_empty() => {
            (Correct, Some("no disease or attribute term; re-rolled Critical to Correct".into()))
        }
        Attribute if attrs.is_empty() => (Correct, Some("no attribute term; re-rolled Attribute to Correct".into())),
        t => (t, None),
    };
    if let Some(n) = &note {
        log::debug!("{report_id}#{index}: {n}");
    }

    let (mutated, mutation) = match label {
        Correct => (original.to_string(), Mutation::None),
        Catastrophic if !diseases.is_empty() && rng.gen_bool(0.5) => {
            let replacement = pick(&mut rng, &tables.normal_statements).clone();
            (replacement.clone(), Mutation::Omission { replacement })
        }
        Catastrophic => {
            let finding = pick(&mut rng, &tables.fabrications).clone();
            (finding.clone(), Mutation::Fabrication { finding })
        }
        Critical => {
            let at = *pick(&mut rng, &diseases);
            let (m, from, to) = swap_in(&mut rng, original, &tables.disease_groups, at);
            (m, Mutation::DiseaseSwap { from, to })
        }
        Attribute => {
            let at = *pick(&mut rng, &attrs);
            let (m, from, to) = swap_in(&mut rng, original, &tables.attribute_groups, at);
            (m, Mutation::AttributeSwap { from, to })
        }
    };
    LedgerEntry {
        report_id: report_id.to_string(),
        sentence_index: index,
        target,
        label,
        original: original.to_string(),
        mutated,
        mutation,
        note,
    }
}

/// Builds one candidate report. The label draw for a sentence depends
/// only on the seed, the report id and the sentence index.
pub fn inject(
    reference: &RawReport,
    record: Option<&HierarchicalRecord>,
    spec: &InjectionSpec,
    tables: &ConfusionTables,
) -> Result<InjectedReport, InjectError> {
    spec.rates.validate()?;
    let sentences = split_sentences(&reference.report_text);
    if sentences.is_empty() {
        return Err(InjectError::EmptyReport(reference.report_id.clone()));
    }
    let preferred = attribute_terms(record);
    let entries: Vec<LedgerEntry> = sentences
        .iter()
        .map(|s| {
            let u: f64 = sentence_rng(spec.seed, &reference.report_id, s.index, 0).gen();
            let target = spec.rates.draw(u);
            mutate_sentence(&reference.report_id, s.index, &s.text, target, tables, &preferred, spec.seed)
        })
        .collect();
    let candidate_text = entries.iter().map(|e| e.mutated.as_str()).collect::<Vec<_>>().join(" ");
    let resplit = split_sentences(&candidate_text);
    if resplit.len() != entries.len() || resplit.iter().zip(&entries).any(|(s, e)| s.text != e.mutated) {
        return Err(InjectError::Resplit { report_id: reference.report_id.clone(), expected: entries.len() });
    }
    let labels: Vec<HallucinationLabel> = entries.iter().map(|e| e.label).collect();
    Ok(InjectedReport {
        report_id: reference.report_id.clone(),
        candidate_text,
        expected_score: weighted_mean(&labels).expect("non-empty"),
        entries,
    })
}

pub fn inject_corpus(
    references: &[RawReport],
    records: &BTreeMap<String, HierarchicalRecord>,
    spec: &InjectionSpec,
    tables: &ConfusionTables,
) -> Result<InjectedCorpus, InjectError> {
    spec.rates.validate()?;
    let reports = references
        .par_iter()
        .map(|r| inject(r, records.get(&r.report_id), spec, tables))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(InjectedCorpus { spec: *spec, tables_version: tables.version.clone(), reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use crate::decompose::{segment_report, RuleSegmenter};
    use crate::Exact;
    use proptest::prelude::*;
    use HallucinationLabel::*;

    const TEXT: &str = "PA chest radiograph. There is a small left pleural effusion. Mild pulmonary edema. \
                        The heart size is normal. No pneumothorax.";

    fn reference() -> RawReport {
        RawReport::new("r1", Split::Test, TEXT)
    }

    fn spec(cat: f64, crit: f64, attr: f64, seed: u64) -> InjectionSpec {
        InjectionSpec { rates: InjectionRates::new(cat, crit, attr).unwrap(), seed }
    }

    #[test]
    fn rates_parse_and_validate() {
        let r: InjectionRates = "cat=0.2,crit=0.1,attr=0.1".parse().unwrap();
        assert_eq!(r, InjectionRates { catastrophic: 0.2, critical: 0.1, attribute: 0.1 });
        assert!("cat=0.8,crit=0.3".parse::<InjectionRates>().is_err());
        assert!("cat=-0.1".parse::<InjectionRates>().is_err());
        assert!("dog=0.1".parse::<InjectionRates>().is_err());
        assert_eq!(r.draw(0.0), Catastrophic);
        assert_eq!(r.draw(0.25), Critical);
        assert_eq!(r.draw(0.35), Attribute);
        assert_eq!(r.draw(0.4), Correct);
    }

    #[test]
    fn zero_rates_leave_text_alone() {
        let out = inject(&reference(), None, &spec(0.0, 0.0, 0.0, 3), &ConfusionTables::builtin()).unwrap();
        assert_eq!(out.candidate_text, TEXT);
        assert_eq!(out.expected_score, 1.0);
    }

    #[test]
    fn full_catastrophic_scores_zero() {
        let out = inject(&reference(), None, &spec(1.0, 0.0, 0.0, 3), &ConfusionTables::builtin()).unwrap();
        assert!(out.entries.iter().all(|e| e.label == Catastrophic && e.mutated != e.original));
        assert_eq!(out.expected_score, 0.0);
    }

    #[test]
    fn critical_swaps_disease_or_rerolls() {
        let out = inject(&reference(), None, &spec(0.0, 1.0, 0.0, 11), &ConfusionTables::builtin()).unwrap();
        let labels = out.labels();
        // modality sentence: no disease, no attribute term
        assert_eq!(labels[0], Correct);
        assert!(out.entries[0].note.is_some());
        assert_eq!(labels[1], Critical);
        assert!(matches!(&out.entries[1].mutation, Mutation::DiseaseSwap { from, .. } if from == "effusion"));
        assert_eq!(out.entries[1].mutated, "There is a small left pleural thickening.");
        assert_eq!(labels[2], Critical);
        // "The heart size is normal." has neither a disease nor an attribute term
        assert_eq!(labels[3], Correct);
    }

    #[test]
    fn attribute_swap_keeps_case() {
        let out = inject(&reference(), None, &spec(0.0, 0.0, 1.0, 5), &ConfusionTables::builtin()).unwrap();
        let e = &out.entries[2];
        assert_eq!(e.label, Attribute);
        assert_eq!(e.mutated, "Severe pulmonary edema.");
    }

    #[test]
    fn record_terms_steer_attribute_swaps() {
        let r = RawReport::new("r2", Split::Test, "Small left effusion.");
        let rec = segment_report(&r, &RuleSegmenter::builtin()).unwrap();
        for seed in 0..10 {
            let out = inject(&r, Some(&rec), &spec(0.0, 0.0, 1.0, seed), &ConfusionTables::builtin()).unwrap();
            assert_eq!(out.entries[0].label, Attribute);
        }
    }

    #[test]
    fn worked_ledger_arithmetic() {
        let mut labels = vec![Correct; 7];
        labels.extend([Critical, Attribute, Catastrophic]);
        let expected: f64 = weighted_mean(&labels).unwrap();
        assert!((expected - 0.79).abs() < 1e-12);
        assert_eq!(weighted_mean::<Exact>(&labels).unwrap(), Exact::new(79, 100));
    }

    #[test]
    fn tables_reject_overlap() {
        let bad = BUILTIN_TABLES.replace("\"thickening\"", "\"edema\"");
        assert!(ConfusionTables::parse(&bad).is_err());
    }

    proptest! {
        #[test]
        fn deterministic_and_consistent(seed in any::<u64>(), cat in 0.0f64..0.4, crit in 0.0f64..0.3, attr in 0.0f64..0.3) {
            let s = spec(cat, crit, attr, seed);
            let tables = ConfusionTables::builtin();
            let a = inject(&reference(), None, &s, &tables).unwrap();
            let b = inject(&reference(), None, &s, &tables).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.entries.len(), 5);
            for e in &a.entries {
                prop_assert!(e.label >= e.target);
                prop_assert_eq!(e.label == Correct, e.mutated == e.original);
            }
            let exact: Exact = a.expected();
            prop_assert!((exact.to_f64_lossy() - a.expected_score).abs() < 1e-12);
        }
    }
}
