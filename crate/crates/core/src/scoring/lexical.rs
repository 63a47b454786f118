use std::collections::BTreeSet;

use super::{ScoreRequest, ScorerBackend, ScoringError};

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been", "before", "both",
    "but", "by", "can", "did", "do", "does", "during", "each", "for", "from", "had", "has", "have", "he", "her",
    "his", "how", "i", "if", "in", "into", "is", "it", "its", "more", "most", "not", "of", "on", "or", "other",
    "she", "so", "some", "such", "than", "that", "the", "their", "them", "then", "there", "these", "they",
    "this", "those", "to", "was", "were", "what", "when", "where", "which", "while", "who", "whom", "whose",
    "why", "will", "with", "would",
];

/// Lowercased alphanumeric runs of `text`, minus stopwords.
pub fn content_words(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .collect()
}

/// `ln((|overlap| + 0.5) / (|sentence content words| + 1))`, where overlap
/// is between the content words of question plus answer and those of the
/// sentence.
pub fn lexical_overlap_score(question: &str, sentence: &str, answer: Option<&str>) -> f64 {
    let mut query = content_words(question);
    if let Some(a) = answer {
        query.extend(content_words(a));
    }
    let words = content_words(sentence);
    let overlap = words.intersection(&query).count();
    ((overlap as f64 + 0.5) / (words.len() as f64 + 1.0)).ln()
}

/// Deterministic stand-in for a trained scorer.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalBackend;

impl ScorerBackend for LexicalBackend {
    fn identity(&self) -> String {
        "lexical-overlap/v1".into()
    }

    fn score_batch(&self, requests: &[ScoreRequest<'_>]) -> Result<Vec<f64>, ScoringError> {
        Ok(requests.iter().map(|r| lexical_overlap_score(r.question, r.sentence, r.answer)).collect())
    }
}
