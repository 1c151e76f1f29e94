use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use super::{HallucinationLabel, JudgeOutcome, JudgeVerdict, MedihallError, SentenceJudgment};
use crate::corpus::{split_sentences, RawReport, Sentence};
use crate::llm::{LlmError, LlmTransport, RetryPolicy};

pub const JUDGE_PROMPT_ID: &str = "medihall-judge-v1";

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judge {judge_id} returned no parseable label: {raw_response:?}")]
    Parse { judge_id: String, raw_response: String },
    #[error("judge {judge_id} backend failed: {source}")]
    Backend {
        judge_id: String,
        #[source]
        source: LlmError,
    },
    #[error("judge {judge_id} cannot label report {report_id}: {message}")]
    Unavailable { judge_id: String, report_id: String, message: String },
    #[error(transparent)]
    Resolution(#[from] MedihallError),
}

impl JudgeError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, JudgeError::Backend { source, .. } if source.is_retriable())
    }
}

/// Labels one candidate sentence against the reference report.
pub trait Judge: Send + Sync {
    fn judge_id(&self) -> &str;
    fn judge(&self, sentence: &Sentence, reference: &RawReport) -> Result<JudgeVerdict, JudgeError>;
}

impl<J: Judge + ?Sized> Judge for Arc<J> {
    fn judge_id(&self) -> &str {
        (**self).judge_id()
    }

    fn judge(&self, sentence: &Sentence, reference: &RawReport) -> Result<JudgeVerdict, JudgeError> {
        (**self).judge(sentence, reference)
    }
}

pub fn render_judge_prompt(sentence: &Sentence, reference: &RawReport) -> String {
    format!(
        "You compare one sentence of a generated radiology report with the reference report.\n\
         Labels:\n\
         Catastrophic: a disease is fabricated or omitted.\n\
         Critical: a disease is present but its type is wrong.\n\
         Attribute: the finding is right but its shape, size or location is wrong.\n\
         Correct: consistent with the reference.\n\n\
         Reference report:\n{}\n\n\
         Sentence:\n{}\n\n\
         Answer with a line `LABEL: <Catastrophic|Critical|Attribute|Correct>` followed by a line `RATIONALE: <text>`.",
        reference.report_text.trim(),
        sentence.text
    )
}

fn render_reformat_prompt(previous: &str) -> String {
    format!(
        "Your previous answer did not contain a label.\n\
         Reply with exactly one line: LABEL: <Catastrophic|Critical|Attribute|Correct>\n\n\
         Previous answer:\n{previous}"
    )
}

/// Extracts `(label, rationale)` from a judge response.
///
/// Accepts a `LABEL:` line anywhere in the text, or a response consisting
/// of a bare label name.
pub fn parse_label_response(raw: &str) -> Option<(HallucinationLabel, String)> {
    let mut label = None;
    let mut rationale = String::new();
    for line in raw.lines().map(str::trim) {
        let lower = line.to_ascii_lowercase();
        if let Some(rest) = lower.strip_prefix("label:") {
            if label.is_none() {
                label = rest.trim().trim_matches(|c| c == '*' || c == '`').parse().ok();
            }
        } else if lower.starts_with("rationale:") {
            rationale = line["rationale:".len()..].trim().to_string();
        }
    }
    label.or_else(|| raw.trim().parse().ok()).map(|l| (l, rationale))
}

/// A judge backed by a chat model.
pub struct RemoteJudge<T> {
    judge_id: String,
    transport: T,
    retry: RetryPolicy,
}

impl<T: LlmTransport> RemoteJudge<T> {
    pub fn new(judge_id: impl Into<String>, transport: T, retry: RetryPolicy) -> Self {
        RemoteJudge { judge_id: judge_id.into(), transport, retry }
    }

    fn ask(&self, prompt: &str) -> Result<String, JudgeError> {
        self.retry
            .run(|| self.transport.complete(prompt))
            .map_err(|source| JudgeError::Backend { judge_id: self.judge_id.clone(), source })
    }
}

impl<T: LlmTransport> Judge for RemoteJudge<T> {
    fn judge_id(&self) -> &str {
        &self.judge_id
    }

    fn judge(&self, sentence: &Sentence, reference: &RawReport) -> Result<JudgeVerdict, JudgeError> {
        let first = self.ask(&render_judge_prompt(sentence, reference))?;
        let (parsed, raw_response) = match parse_label_response(&first) {
            Some(p) => (Some(p), first),
            None => {
                let second = self.ask(&render_reformat_prompt(&first))?;
                (parse_label_response(&second), format!("{first}\n---\n{second}"))
            }
        };
        let (label, rationale) = parsed
            .ok_or_else(|| JudgeError::Parse { judge_id: self.judge_id.clone(), raw_response: raw_response.clone() })?;
        Ok(JudgeVerdict {
            sentence_index: sentence.index,
            label,
            judge_id: self.judge_id.clone(),
            rationale,
            raw_response,
        })
    }
}

/// Gives every sentence the same label.
#[derive(Debug, Clone)]
pub struct FixedJudge {
    pub judge_id: String,
    pub label: HallucinationLabel,
}

impl FixedJudge {
    pub fn new(judge_id: impl Into<String>, label: HallucinationLabel) -> Self {
        FixedJudge { judge_id: judge_id.into(), label }
    }
}

impl Judge for FixedJudge {
    fn judge_id(&self) -> &str {
        &self.judge_id
    }

    fn judge(&self, sentence: &Sentence, _reference: &RawReport) -> Result<JudgeVerdict, JudgeError> {
        Ok(JudgeVerdict {
            sentence_index: sentence.index,
            label: self.label,
            judge_id: self.judge_id.clone(),
            rationale: String::new(),
            raw_response: format!("LABEL: {}", self.label),
        })
    }
}

/// Runs one judge on one sentence. A parse failure becomes a missing
/// verdict; backend failures are returned.
pub fn judge_sentence(
    judge: &dyn Judge,
    sentence: &Sentence,
    reference: &RawReport,
) -> Result<JudgeOutcome, JudgeError> {
    match judge.judge(sentence, reference) {
        Ok(v) => Ok(JudgeOutcome::Verdict(v)),
        Err(JudgeError::Parse { judge_id, raw_response }) => {
            log::warn!("judge {judge_id}: unparseable response for sentence {}", sentence.index);
            Ok(JudgeOutcome::Missing {
                judge_id,
                sentence_index: sentence.index,
                error: "no label in response".into(),
                raw_response,
            })
        }
        Err(e) => Err(e),
    }
}

/// Splits `candidate_text` into sentences and has both judges label each
/// one, with at most `in_flight` calls running at once across both seats.
pub fn judge_report(
    report_id: &str,
    candidate_text: &str,
    reference: &RawReport,
    judges: [&dyn Judge; 2],
    in_flight: usize,
) -> Result<Vec<SentenceJudgment>, JudgeError> {
    if judges[0].judge_id() == judges[1].judge_id() {
        return Err(MedihallError::SameJudge(judges[0].judge_id().to_string()).into());
    }
    let sentences = split_sentences(candidate_text);
    let jobs: Vec<(usize, usize)> = (0..sentences.len()).flat_map(|i| [(i, 0), (i, 1)]).collect();
    let run = || {
        jobs.par_iter()
            .map(|&(i, seat)| judge_sentence(judges[seat], &sentences[i], reference))
            .collect::<Result<Vec<_>, _>>()
    };
    let outcomes = rayon::ThreadPoolBuilder::new()
        .num_threads(in_flight.max(1))
        .build()
        .map(|pool| pool.install(run))
        .unwrap_or_else(|_| run())?;
    let mut outcomes = outcomes.into_iter();
    sentences
        .into_iter()
        .map(|s| {
            let a = outcomes.next().expect("two outcomes per sentence");
            let b = outcomes.next().expect("two outcomes per sentence");
            Ok(SentenceJudgment::new(report_id, s, [a, b])?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use HallucinationLabel::*;

    fn reference() -> RawReport {
        RawReport::new("r1", Split::Test, "The lungs are clear. No effusion.")
    }

    #[test]
    fn parses_label_lines() {
        assert_eq!(
            parse_label_response("LABEL: Critical\nRATIONALE: wrong disease"),
            Some((Critical, "wrong disease".into()))
        );
        assert_eq!(parse_label_response("Thinking...\nlabel: **attribute**"), Some((Attribute, String::new())));
        assert_eq!(parse_label_response("Correct."), Some((Correct, String::new())));
        assert_eq!(parse_label_response("probably fine"), None);
    }

    #[test]
    fn remote_judge_reformats_once() {
        let calls = AtomicUsize::new(0);
        let transport = |_p: &str| {
            let n = calls.fetch_add(1, Ordering::SeqCst);
            Ok(if n == 0 { "it looks fine".to_string() } else { "LABEL: Correct".to_string() })
        };
        let judge = RemoteJudge::new("gpt", transport, RetryPolicy::immediate(0));
        let s = Sentence { index: 0, text: "Lungs clear.".into(), span: (0, 12) };
        let v = judge.judge(&s, &reference()).unwrap();
        assert_eq!(v.label, Correct);
        assert_eq!(calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn unparseable_twice_becomes_missing_verdict() {
        let judge = RemoteJudge::new("gpt", |_p: &str| Ok("no idea".to_string()), RetryPolicy::immediate(0));
        let other = FixedJudge::new("gemini", Correct);
        let js = judge_report("r1", "Lungs clear. Heart normal.", &reference(), [&judge, &other], 2).unwrap();
        assert_eq!(js.len(), 2);
        assert!(js.iter().all(|j| j.needs_adjudication()));
        assert!(matches!(js[0].verdicts[0], JudgeOutcome::Missing { .. }));
    }

    #[test]
    fn timeouts_are_retriable_errors() {
        let judge = RemoteJudge::new("gpt", |_p: &str| Err(LlmError::Timeout), RetryPolicy::immediate(1));
        let other = FixedJudge::new("gemini", Correct);
        let err = judge_report("r1", "Lungs clear.", &reference(), [&judge, &other], 1).unwrap_err();
        assert!(err.is_retriable());
    }

    #[test]
    fn agreeing_fixed_judges() {
        let a = FixedJudge::new("a", Correct);
        let b = FixedJudge::new("b", Correct);
        let js = judge_report("r1", "Lungs clear. Heart normal. No effusion.", &reference(), [&a, &b], 4).unwrap();
        assert_eq!(js.len(), 3);
        assert!(js.iter().all(|j| j.resolution.label() == Some(Correct)));
        assert_eq!(js[2].sentence.index, 2);
    }

    #[test]
    fn same_judge_on_both_seats_rejected() {
        let a = FixedJudge::new("a", Correct);
        assert!(judge_report("r1", "X.", &reference(), [&a, &a], 1).is_err());
    }
}
