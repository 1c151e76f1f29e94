use num_traits::Float;
use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use super::TokenSeq;

/// Exact and stem matching only; no synonym stage.
pub const METEOR_VARIANT: &str = "meteor-lite";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeteorParams {
    /// Recall weight in the harmonic mean; 0.9 gives `10PR / (R + 9P)`.
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
}

impl Default for MeteorParams {
    fn default() -> Self {
        MeteorParams { alpha: 0.9, gamma: 0.5, beta: 3.0 }
    }
}

pub fn stem(token: &str) -> String {
    Stemmer::create(Algorithm::English).stem(token).into_owned()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    /// `(candidate index, reference index)`, sorted by candidate index.
    pub pairs: Vec<(usize, usize)>,
    pub chunks: usize,
}

fn align_stage(cand: &[String], refs: &[String], cand_to_ref: &mut [Option<usize>], ref_used: &mut [bool]) {
    for i in 0..cand.len() {
        if cand_to_ref[i].is_some() {
            continue;
        }
        let free = |j: usize| !ref_used[j] && refs[j] == cand[i];
        // Prefer continuing the chunk the previous candidate token ended.
        let follow =
            i.checked_sub(1).and_then(|p| cand_to_ref[p]).map(|j| j + 1).filter(|&j| j < refs.len() && free(j));
        let run = |j: usize| {
            (0..)
                .take_while(|&k| {
                    i + k < cand.len()
                        && j + k < refs.len()
                        && cand_to_ref[i + k].is_none()
                        && !ref_used[j + k]
                        && refs[j + k] == cand[i + k]
                })
                .count()
        };
        let best = (0..refs.len()).filter(|&j| free(j)).fold(None, |best: Option<(usize, usize)>, j| {
            let len = run(j);
            match best {
                Some((_, l)) if l >= len => best,
                _ => Some((j, len)),
            }
        });
        if let Some(j) = follow.or(best.map(|(j, _)| j)) {
            cand_to_ref[i] = Some(j);
            ref_used[j] = true;
        }
    }
}

/// Aligns tokens by exact match, then by stem among the rest. Among
/// equal tokens the reference position that extends the current chunk
/// wins, then the one starting the longest run, then the leftmost.
pub fn meteor_alignment(candidate: &TokenSeq, reference: &TokenSeq) -> Alignment {
    let mut cand_to_ref = vec![None; candidate.len()];
    let mut ref_used = vec![false; reference.len()];
    align_stage(&candidate.tokens, &reference.tokens, &mut cand_to_ref, &mut ref_used);
    let stemmer = Stemmer::create(Algorithm::English);
    let cs: Vec<String> = candidate.tokens.iter().map(|t| stemmer.stem(t).into_owned()).collect();
    let rs: Vec<String> = reference.tokens.iter().map(|t| stemmer.stem(t).into_owned()).collect();
    align_stage(&cs, &rs, &mut cand_to_ref, &mut ref_used);

    let pairs: Vec<(usize, usize)> = cand_to_ref.iter().enumerate().filter_map(|(i, j)| j.map(|j| (i, j))).collect();
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for &(i, j) in &pairs {
        match prev {
            Some((pi, pj)) if i == pi + 1 && j == pj + 1 => {}
            _ => chunks += 1,
        }
        prev = Some((i, j));
    }
    Alignment { pairs, chunks }
}

pub fn meteor<T: Float>(candidate: &TokenSeq, reference: &TokenSeq, params: &MeteorParams) -> T {
    let al = meteor_alignment(candidate, reference);
    let m = al.pairs.len();
    if m == 0 {
        return T::zero();
    }
    let f = |v: f64| T::from(v).expect("finite parameter");
    let n = |v: usize| T::from(v).expect("count fits");
    let p = n(m) / n(candidate.len());
    let r = n(m) / n(reference.len());
    let alpha = f(params.alpha);
    let fmean = p * r / (alpha * p + (T::one() - alpha) * r);
    let penalty = f(params.gamma) * (n(al.chunks) / n(m)).powf(f(params.beta));
    fmean * (T::one() - penalty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{normalize_tokenize, NORMALIZATION_ID};

    fn seq(tokens: &[&str]) -> TokenSeq {
        TokenSeq { tokens: tokens.iter().map(|s| s.to_string()).collect(), normalization: NORMALIZATION_ID.into() }
    }

    #[test]
    fn no_overlap_scores_zero() {
        assert_eq!(meteor::<f64>(&seq(&["a"]), &seq(&["b"]), &MeteorParams::default()), 0.0);
        assert_eq!(meteor::<f64>(&seq(&[]), &seq(&["b"]), &MeteorParams::default()), 0.0);
    }

    #[test]
    fn identity_of_four_tokens() {
        let a = seq(&["a", "b", "c", "d"]);
        let al = meteor_alignment(&a, &a);
        assert_eq!(al.chunks, 1);
        let expected = 1.0 * (1.0 - 0.5 * (1.0f64 / 4.0).powi(3));
        assert_eq!(expected, 0.9921875);
        assert!((meteor::<f64>(&a, &a, &MeteorParams::default()) - expected).abs() < 1e-12);
    }

    #[test]
    fn swapped_tail() {
        let r = seq(&["a", "b", "c", "d"]);
        let c = seq(&["a", "b", "d", "c"]);
        let al = meteor_alignment(&c, &r);
        assert_eq!(al.pairs, vec![(0, 0), (1, 1), (2, 3), (3, 2)]);
        assert_eq!(al.chunks, 3);
        let expected = 1.0 - 0.5 * 0.75f64.powi(3);
        assert!((meteor::<f64>(&c, &r, &MeteorParams::default()) - expected).abs() < 1e-12);
        assert!((expected - 0.7891).abs() < 1e-4);
    }

    #[test]
    fn fmean_weights_recall() {
        // m = 2, P = 1, R = 0.5: 10PR / (R + 9P) = 5 / 9.5
        let r = seq(&["a", "b", "c", "d"]);
        let c = seq(&["a", "b"]);
        let fmean = 10.0 * 0.5 / (0.5 + 9.0);
        let expected = fmean * (1.0 - 0.5 * 0.5f64.powi(3));
        assert!((meteor::<f64>(&c, &r, &MeteorParams::default()) - expected).abs() < 1e-12);
    }

    #[test]
    fn stems_match_after_exact() {
        let r = normalize_tokenize("opacities noted");
        let c = normalize_tokenize("opacity noted");
        let al = meteor_alignment(&c, &r);
        assert_eq!(al.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(stem("effusions"), stem("effusion"));
    }

    #[test]
    fn repeated_tokens_prefer_contiguous_chunk() {
        let r = seq(&["the", "x", "the", "y"]);
        let c = seq(&["the", "y"]);
        let al = meteor_alignment(&c, &r);
        assert_eq!(al.pairs, vec![(0, 2), (1, 3)]);
        assert_eq!(al.chunks, 1);
    }
}
