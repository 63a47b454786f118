#![allow(dead_code)]

use std::path::PathBuf;

use hoppipe::corpus::{Paragraph, QuestionRecord, Setting, SupportFact};
use hoppipe::tokenization::Vocabulary;
use rand::seq::IndexedRandom;
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn vocab() -> Vocabulary {
    Vocabulary::load(fixture("vocab.txt")).unwrap()
}

/// Whole words of the fixture vocabulary, plus a few that need splitting or
/// map to `[UNK]`.
pub fn words() -> Vec<String> {
    let text = std::fs::read_to_string(fixture("vocab.txt")).unwrap();
    let mut w: Vec<String> = text
        .lines()
        .filter(|t| t.len() > 1 && t.chars().all(|c| c.is_ascii_alphabetic()))
        .map(str::to_owned)
        .collect();
    w.extend(["Thunderbirds", "zqxj", "ÉCOLE", "naïve", "x-ray", "1987", "co-op's"].map(String::from));
    w
}

pub fn sentence<R: Rng>(rng: &mut R, words: &[String], n: usize) -> String {
    let mut s: Vec<&str> = (0..n.max(1)).map(|_| words.choose(rng).unwrap().as_str()).collect();
    if rng.random_bool(0.7) {
        s.push(".");
    }
    s.join(" ")
}

/// A word count drawn so that some sentences are tiny and some alone
/// overflow the context budget.
pub fn adversarial_len<R: Rng>(rng: &mut R) -> usize {
    match rng.random_range(0..10) {
        0..=3 => rng.random_range(1..4),
        4..=7 => rng.random_range(4..40),
        8 => rng.random_range(40..200),
        _ => rng.random_range(300..700),
    }
}

pub struct Shape {
    pub paragraphs: (usize, usize),
    pub sentences: (usize, usize),
    pub adversarial: bool,
}

pub fn record<R: Rng>(rng: &mut R, words: &[String], qid: &str, shape: &Shape) -> QuestionRecord {
    let n_par = rng.random_range(shape.paragraphs.0..=shape.paragraphs.1);
    let paragraphs: Vec<Paragraph> = (0..n_par)
        .map(|p| {
            let n_sent = rng.random_range(shape.sentences.0..=shape.sentences.1);
            let sentences = (0..n_sent)
                .map(|_| {
                    let n = if shape.adversarial { adversarial_len(rng) } else { rng.random_range(1..8) };
                    sentence(rng, words, n)
                })
                .collect();
            let title_len = if shape.adversarial && rng.random_bool(0.1) { rng.random_range(20..120) } else { rng.random_range(1..4) };
            Paragraph::new(format!("{} {p}", sentence(rng, words, title_len)), sentences)
        })
        .collect();
    let q_len = if shape.adversarial && rng.random_bool(0.05) { rng.random_range(450..600) } else { rng.random_range(2..15) };
    let gold_support = (n_par >= 2).then(|| vec![SupportFact::new(paragraphs[0].title.clone(), 0), SupportFact::new(paragraphs[1].title.clone(), 0)]);
    QuestionRecord {
        qid: qid.to_owned(),
        question: format!("{}?", sentence(rng, words, q_len)),
        gold_answer: Some(words.choose(rng).unwrap().clone()),
        gold_support,
        paragraphs,
        setting: Setting::Distractor,
    }
}

/// Logits from a normal distribution, or small integers to force ties.
pub fn logits<R: Rng>(rng: &mut R, record: &QuestionRecord, ties: bool) -> Vec<Vec<f64>> {
    record
        .paragraphs
        .iter()
        .map(|p| {
            p.sentences
                .iter()
                .map(|_| if ties { rng.random_range(-2i32..=2) as f64 } else { rng.random_range(-6.0..6.0) })
                .collect()
        })
        .collect()
}
