//! Seeded synthetic chest radiograph reports for tests and benchmarks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{RawReport, Split};

const MODALITY: &[&str] = &[
    "PA and lateral views of the chest.",
    "Portable AP radiograph of the chest.",
    "Frontal and lateral chest radiographs.",
];
const DISEASES: &[&str] =
    &["consolidation", "atelectasis", "pneumonia", "edema", "effusion", "nodule", "opacity", "emphysema"];
const SIZES: &[&str] = &["small", "moderate", "large"];
const SEVERITY: &[&str] = &["mild", "severe"];
const SIDES: &[&str] = &["left", "right"];
const LEVELS: &[&str] = &["upper", "lower"];
const NORMALS: &[&str] = &[
    "The heart size is normal.",
    "There is no pneumothorax.",
    "The mediastinal contours are unremarkable.",
    "No acute osseous abnormality.",
    "The hila are normal.",
];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).expect("non-empty table")
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

fn finding(rng: &mut ChaCha8Rng) -> String {
    let disease = pick(rng, DISEASES);
    match rng.gen_range(0..4u32) {
        0 => format!("There is a {} {} {}.", pick(rng, SIZES), pick(rng, SIDES), disease),
        1 => format!(
            "{} {} in the {} {} lobe.",
            capitalize(pick(rng, SEVERITY)),
            disease,
            pick(rng, SIDES),
            pick(rng, LEVELS)
        ),
        2 => format!("{} {} at the {} base.", capitalize(pick(rng, SIZES)), disease, pick(rng, SIDES)),
        _ => format!("{} {} is seen.", capitalize(pick(rng, SEVERITY)), disease),
    }
}

pub fn synthetic_report(rng: &mut ChaCha8Rng, report_id: String, split: Split) -> RawReport {
    let mut sentences = vec![pick(rng, MODALITY).to_string()];
    for _ in 0..rng.gen_range(1..=3u32) {
        sentences.push(finding(rng));
    }
    let mut normals = NORMALS.to_vec();
    normals.shuffle(rng);
    sentences.extend(normals.iter().take(rng.gen_range(1..=2usize)).map(|s| s.to_string()));
    let images = [format!("{report_id}/frontal.png")];
    RawReport::new(report_id, split, sentences.join(" ")).with_source("synthetic").with_images(images)
}

/// `n` reports with ids `syn-00000`.., split 80/10/10 by position.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<RawReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let split = match i % 10 {
                8 => Split::Val,
                9 => Split::Test,
                _ => Split::Train,
            };
            synthetic_report(&mut rng, format!("syn-{i:05}"), split)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_well_formed() {
        let a = synthetic_corpus(20, 3);
        assert_eq!(a, synthetic_corpus(20, 3));
        assert_ne!(a, synthetic_corpus(20, 4));
        for r in &a {
            r.validate().unwrap();
            assert!(r.sentences().len() >= 3, "{}", r.report_text);
        }
        assert_eq!(a[8].split, Split::Val);
    }
}
