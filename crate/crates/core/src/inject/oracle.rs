use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{inject_corpus, ConfusionTables, InjectError, InjectedCorpus, InjectionSpec, LedgerEntry};
use crate::corpus::{RawReport, Sentence};
use crate::decompose::HierarchicalRecord;
use crate::medihall::{
    agreement_rate, corpus_medihall, judge_report, medihall_score, FixedJudge, HallucinationLabel, Judge, JudgeError,
    JudgeVerdict, MediHallResult, MedihallError, SentenceJudgment,
};

pub const ORACLE_ID: &str = "oracle";
/// Both seats need distinct judge ids, so the second oracle gets its own.
pub const ORACLE_SECOND_ID: &str = "oracle-2";
const ALWAYS_CORRECT_ID: &str = "always-correct";

/// Answers from the injection ledger.
#[derive(Debug, Clone)]
pub struct OracleJudge {
    judge_id: String,
    ledger: HashMap<(String, usize), (String, HallucinationLabel)>,
}

impl OracleJudge {
    pub fn new(judge_id: impl Into<String>, corpus: &InjectedCorpus) -> Self {
        Self::from_entries(judge_id, corpus.ledger())
    }

    pub fn from_entries<'a>(judge_id: impl Into<String>, entries: impl IntoIterator<Item = &'a LedgerEntry>) -> Self {
        let ledger = entries
            .into_iter()
            .map(|e| ((e.report_id.clone(), e.sentence_index), (e.mutated.clone(), e.label)))
            .collect();
        OracleJudge { judge_id: judge_id.into(), ledger }
    }
}

impl Judge for OracleJudge {
    fn judge_id(&self) -> &str {
        &self.judge_id
    }

    fn judge(&self, sentence: &Sentence, reference: &RawReport) -> Result<JudgeVerdict, JudgeError> {
        let unavailable = |message: String| JudgeError::Unavailable {
            judge_id: self.judge_id.clone(),
            report_id: reference.report_id.clone(),
            message,
        };
        let (text, label) = self
            .ledger
            .get(&(reference.report_id.clone(), sentence.index))
            .ok_or_else(|| unavailable(format!("no ledger entry for sentence {}", sentence.index)))?;
        if *text != sentence.text {
            return Err(unavailable(format!(
                "sentence {} differs from the ledger: {:?}",
                sentence.index, sentence.text
            )));
        }
        Ok(JudgeVerdict {
            sentence_index: sentence.index,
            label: *label,
            judge_id: self.judge_id.clone(),
            rationale: "ledger".into(),
            raw_response: format!("LABEL: {label}"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeMode {
    /// The oracle on both seats.
    Concordant,
    /// The oracle against a judge that calls everything Correct.
    Discordant,
}

/// Rows are ledger labels, columns resolved labels, both in
/// Catastrophic, Critical, Attribute, Correct order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 4]; 4],
    /// Sentences left pending, by ledger label.
    pub pending: [usize; 4],
}

impl ConfusionMatrix {
    pub fn is_identity(&self) -> bool {
        (0..4).all(|i| (0..4).all(|j| i == j || self.counts[i][j] == 0)) && self.pending.iter().all(|p| *p == 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub report_id: String,
    pub sentence_index: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub mode: JudgeMode,
    pub spec: InjectionSpec,
    pub tables_version: String,
    pub reports: usize,
    pub sentences: usize,
    pub label_counts: BTreeMap<HallucinationLabel, usize>,
    pub expected_corpus_score: f64,
    /// Absent when scoring refused because of pending sentences.
    pub computed_corpus_score: Option<f64>,
    pub agreement_rate: f64,
    pub confusion: ConfusionMatrix,
    pub pending_reports: Vec<String>,
    pub mismatches: Vec<Mismatch>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode: {:?}  rates: {}  seed: {}", self.mode, self.spec.rates, self.spec.seed);
        let _ = writeln!(s, "reports: {}  sentences: {}", self.reports, self.sentences);
        let counts: Vec<String> = self.label_counts.iter().map(|(l, n)| format!("{l}={n}")).collect();
        let _ = writeln!(s, "ledger labels: {}", counts.join(" "));
        let _ = writeln!(s, "expected corpus MediHall: {}", self.expected_corpus_score);
        match self.computed_corpus_score {
            Some(c) => {
                let _ = writeln!(s, "computed corpus MediHall: {c}");
            }
            None => {
                let _ =
                    writeln!(s, "computed corpus MediHall: refused ({} reports pending)", self.pending_reports.len());
            }
        }
        let _ = writeln!(s, "judge agreement: {:.4}", self.agreement_rate);
        let _ = writeln!(s, "confusion (rows ledger, cols resolved; Cat Crit Attr Corr | pending):");
        for (i, l) in HallucinationLabel::ALL.iter().enumerate() {
            let row: Vec<String> = self.confusion.counts[i].iter().map(|n| format!("{n:>6}")).collect();
            let _ = writeln!(s, "  {:<12}{} | {:>6}", l.as_str(), row.join(""), self.confusion.pending[i]);
        }
        for m in self.mismatches.iter().take(20) {
            let at = m.sentence_index.map(|i| format!("#{i}")).unwrap_or_default();
            let _ = writeln!(s, "MISMATCH {}{at}: {}", m.report_id, m.message);
        }
        let _ = writeln!(s, "{}", if self.passed { "PASS" } else { "FAIL" });
        s
    }
}

/// Injects, judges, resolves and scores `references`, then checks the
/// scores against the ledger.
///
/// Concordant mode passes when every report score equals its expected
/// score exactly and the confusion matrix is the identity. Discordant
/// mode passes when exactly the mutated sentences are pending and corpus
/// scoring refuses with exactly the reports that contain them.
pub fn validate_pipeline(
    references: &[RawReport],
    records: &BTreeMap<String, HierarchicalRecord>,
    spec: &InjectionSpec,
    tables: &ConfusionTables,
    mode: JudgeMode,
    in_flight: usize,
) -> Result<ValidationReport, InjectError> {
    let corpus = inject_corpus(references, records, spec, tables)?;
    let oracle = OracleJudge::new(ORACLE_ID, &corpus);
    let second_oracle = OracleJudge::new(ORACLE_SECOND_ID, &corpus);
    let always_correct = FixedJudge::new(ALWAYS_CORRECT_ID, HallucinationLabel::Correct);
    let second: &dyn Judge = match mode {
        JudgeMode::Concordant => &second_oracle,
        JudgeMode::Discordant => &always_correct,
    };

    let mut mismatches = Vec::new();
    let mut confusion = ConfusionMatrix::default();
    let mut all_judgments: Vec<SentenceJudgment> = Vec::new();
    let mut results: Vec<MediHallResult<f64>> = Vec::new();
    for (reference, injected) in references.iter().zip(&corpus.reports) {
        let candidate = injected.candidate(reference);
        let judgments =
            match judge_report(&reference.report_id, &candidate.report_text, reference, [&oracle, second], in_flight) {
                Ok(j) => j,
                Err(e) => {
                    mismatches.push(Mismatch {
                        report_id: reference.report_id.clone(),
                        sentence_index: None,
                        message: e.to_string(),
                    });
                    continue;
                }
            };
        if judgments.len() != injected.entries.len() {
            mismatches.push(Mismatch {
                report_id: reference.report_id.clone(),
                sentence_index: None,
                message: format!("{} sentences judged, ledger has {}", judgments.len(), injected.entries.len()),
            });
            continue;
        }
        for (j, e) in judgments.iter().zip(&injected.entries) {
            match j.resolution.label() {
                Some(l) => confusion.counts[e.label.index()][l.index()] += 1,
                None => confusion.pending[e.label.index()] += 1,
            }
            let mutated = e.label != HallucinationLabel::Correct;
            let ok = match mode {
                JudgeMode::Concordant => j.resolution.label() == Some(e.label),
                JudgeMode::Discordant => j.resolution.is_pending() == mutated,
            };
            if !ok {
                mismatches.push(Mismatch {
                    report_id: reference.report_id.clone(),
                    sentence_index: Some(e.sentence_index),
                    message: format!("ledger {} but resolution {:?}", e.label, j.resolution),
                });
            }
        }
        let result = medihall_score::<f64>(&judgments).expect("judgments come from one report in order");
        if mode == JudgeMode::Concordant && result.score != Some(injected.expected_score) {
            mismatches.push(Mismatch {
                report_id: reference.report_id.clone(),
                sentence_index: None,
                message: format!("score {:?} != expected {}", result.score, injected.expected_score),
            });
        }
        all_judgments.extend(judgments);
        results.push(result);
    }

    let expected_corpus_score: f64 = corpus.expected_corpus_score().unwrap_or(1.0);
    let expected_pending: Vec<String> = corpus
        .reports
        .iter()
        .filter(|r| r.entries.iter().any(|e| e.label != HallucinationLabel::Correct))
        .map(|r| r.report_id.clone())
        .collect();
    let (computed_corpus_score, pending_reports) = match corpus_medihall(&results) {
        Ok(c) => (Some(c.score), Vec::new()),
        Err(MedihallError::PendingReports(ids)) => (None, ids),
        Err(e) => {
            mismatches.push(Mismatch { report_id: String::new(), sentence_index: None, message: e.to_string() });
            (None, Vec::new())
        }
    };
    match mode {
        JudgeMode::Concordant => {
            if computed_corpus_score != Some(expected_corpus_score) {
                mismatches.push(Mismatch {
                    report_id: String::new(),
                    sentence_index: None,
                    message: format!("corpus score {computed_corpus_score:?} != expected {expected_corpus_score}"),
                });
            }
        }
        JudgeMode::Discordant => {
            if pending_reports != expected_pending {
                mismatches.push(Mismatch {
                    report_id: String::new(),
                    sentence_index: None,
                    message: format!(
                        "{} reports pending, {} contain mutations",
                        pending_reports.len(),
                        expected_pending.len()
                    ),
                });
            }
        }
    }

    let mut label_counts: BTreeMap<HallucinationLabel, usize> =
        HallucinationLabel::ALL.iter().map(|l| (*l, 0)).collect();
    for e in corpus.ledger() {
        *label_counts.entry(e.label).or_default() += 1;
    }
    let identity_ok = mode == JudgeMode::Discordant || confusion.is_identity();
    Ok(ValidationReport {
        mode,
        spec: *spec,
        tables_version: corpus.tables_version.clone(),
        reports: corpus.reports.len(),
        sentences: corpus.ledger().count(),
        label_counts,
        expected_corpus_score,
        computed_corpus_score,
        agreement_rate: agreement_rate(&all_judgments).unwrap_or(1.0),
        confusion,
        pending_reports,
        passed: mismatches.is_empty() && identity_ok,
        mismatches,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub catastrophic_rate: f64,
    pub expected: f64,
    pub computed: Option<f64>,
}

/// Corpus scores as the catastrophic rate varies with the other rates
/// held at `base`.
pub fn sensitivity_sweep(
    references: &[RawReport],
    records: &BTreeMap<String, HierarchicalRecord>,
    base: &InjectionSpec,
    catastrophic_rates: &[f64],
    tables: &ConfusionTables,
    in_flight: usize,
) -> Result<Vec<SweepPoint>, InjectError> {
    catastrophic_rates
        .iter()
        .map(|&r| {
            let mut spec = *base;
            spec.rates.catastrophic = r;
            let v = validate_pipeline(references, records, &spec, tables, JudgeMode::Concordant, in_flight)?;
            Ok(SweepPoint {
                catastrophic_rate: r,
                expected: v.expected_corpus_score,
                computed: v.computed_corpus_score,
            })
        })
        .collect()
}
