use serde::{Deserialize, Serialize};

/// A sentence of a report. `span` holds character (not byte) offsets into
/// the parent text, end exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
    pub span: (usize, usize),
}

const TERMINATORS: [char; 3] = ['.', '!', '?'];
const CLOSERS: [char; 5] = [')', ']', '"', '\'', '\u{201d}'];

// Compared lowercased, without the final period.
const ABBREVIATIONS: &[&str] =
    &["dr", "mr", "mrs", "ms", "prof", "vs", "etc", "approx", "fig", "st", "jr", "sr", "resp", "incl", "cf", "al"];

/// Splits `text` into sentences.
///
/// A `.`, `!` or `?` ends a sentence when it is followed by end of text, or
/// by whitespace and then an uppercase letter or a list enumerator such as
/// `2.`. Periods inside decimals, after known abbreviations, after dotted
/// initialisms (`e.g.`, `a.m.`) and after an enumerator at clause start do
/// not end a sentence.
pub fn split_sentences(text: &str) -> Vec<Sentence> {
    let chars: Vec<char> = text.chars().collect();
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut start: Option<usize> = None;
    let mut i = 0;

    while i < chars.len() {
        let c = chars[i];
        if start.is_none() {
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            start = Some(i);
        }
        let s = start.unwrap_or(i);
        if TERMINATORS.contains(&c) {
            let mut end = i + 1;
            while end < chars.len() && (TERMINATORS.contains(&chars[end]) || CLOSERS.contains(&chars[end])) {
                end += 1;
            }
            if is_boundary(&chars, s, i, end) {
                spans.push((s, end));
                start = None;
            }
            i = end;
            continue;
        }
        i += 1;
    }

    if let Some(s) = start {
        let mut end = chars.len();
        while end > s && chars[end - 1].is_whitespace() {
            end -= 1;
        }
        if end > s {
            spans.push((s, end));
        }
    }

    spans
        .into_iter()
        .enumerate()
        .map(|(index, (a, b))| Sentence { index, text: chars[a..b].iter().collect(), span: (a, b) })
        .collect()
}

fn is_boundary(chars: &[char], sentence_start: usize, term: usize, after: usize) -> bool {
    let next = next_non_ws(chars, after);
    let Some(next) = next else {
        return true;
    };
    if next == after {
        // terminator glued to the following character, e.g. "1.5" or "a.m"
        return false;
    }
    if !(chars[next].is_uppercase() || starts_enumerator(chars, next)) {
        return false;
    }
    if chars[term] != '.' {
        return true;
    }
    let word_start = word_start(chars, term);
    let word: String = chars[word_start..term].iter().collect::<String>().to_lowercase();
    if word.is_empty() {
        return true;
    }
    if ABBREVIATIONS.contains(&word.as_str()) || is_initialism(&word) {
        return false;
    }
    if is_enumerator_word(&word) && at_clause_start(chars, sentence_start, word_start) {
        return false;
    }
    true
}

fn next_non_ws(chars: &[char], from: usize) -> Option<usize> {
    (from..chars.len()).find(|&k| !chars[k].is_whitespace())
}

fn word_start(chars: &[char], term: usize) -> usize {
    let mut k = term;
    while k > 0 && (chars[k - 1].is_alphanumeric() || chars[k - 1] == '.') {
        k -= 1;
    }
    k
}

fn is_initialism(word: &str) -> bool {
    // "e.g", "a.m", "i.e"
    let parts: Vec<&str> = word.split('.').collect();
    parts.len() >= 2 && parts.iter().all(|p| p.chars().count() == 1 && p.chars().all(char::is_alphabetic))
}

fn is_enumerator_word(word: &str) -> bool {
    !word.is_empty() && word.len() <= 2 && word.chars().all(|c| c.is_ascii_digit())
}

fn starts_enumerator(chars: &[char], at: usize) -> bool {
    let mut k = at;
    while k < chars.len() && chars[k].is_ascii_digit() && k - at < 3 {
        k += 1;
    }
    if k == at || k - at > 2 || k >= chars.len() {
        return false;
    }
    if chars[k] != '.' && chars[k] != ')' {
        return false;
    }
    k + 1 >= chars.len() || chars[k + 1].is_whitespace()
}

fn at_clause_start(chars: &[char], sentence_start: usize, word_start: usize) -> bool {
    if word_start == sentence_start {
        return true;
    }
    let mut k = word_start;
    while k > sentence_start && chars[k - 1].is_whitespace() {
        k -= 1;
    }
    k > sentence_start && matches!(chars[k - 1], ':' | ';')
}
