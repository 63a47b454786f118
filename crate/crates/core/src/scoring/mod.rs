//! Independent sentence scoring.
//!
//! Every sentence is scored from `(question, owning paragraph, target
//! sentence, answer slot)` alone. No other paragraph ever reaches the
//! backend, so a sentence's logit cannot depend on the rest of the context.

mod cache;
mod lexical;
pub mod training;
pub mod wire;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{QuestionRecord, SentenceRef};
use crate::tokenization::{AnswerSlot, EncodeError, ParagraphEncoding, TokenSequence, Vocabulary};

pub use cache::{cache_key, ScoreCache};
pub use lexical::{content_words, lexical_overlap_score, LexicalBackend};
pub use training::{build_training_instances, pack_training_batches, Label, TrainingBatch, TrainingInstance};
pub use wire::NdjsonScorer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerVariant {
    /// Answer slot holds a single mask token (relevance selection).
    NoAnswer,
    /// Answer slot holds an answer string (support identification).
    WithAnswer,
}

impl ScorerVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            ScorerVariant::NoAnswer => "no_answer",
            ScorerVariant::WithAnswer => "with_answer",
        }
    }
}

impl fmt::Display for ScorerVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ScorerVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "no_answer" | "na" => Ok(ScorerVariant::NoAnswer),
            "with_answer" | "a" => Ok(ScorerVariant::WithAnswer),
            other => Err(format!("unknown scorer variant `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub reference: SentenceRef,
    pub logit: f64,
}

#[derive(Debug, Error)]
pub enum TableError {
    #[error("duplicate score for {0}")]
    Duplicate(SentenceRef),
    #[error("non-finite logit for {0}")]
    NonFinite(SentenceRef),
    #[error("table for `{qid}` does not match the record: {reason}")]
    Coverage { qid: String, reason: String },
    #[error("malformed score line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-sentence logits of one scorer variant for one question, ordered by
/// `(paragraph, sentence)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub qid: String,
    pub variant: ScorerVariant,
    scores: Vec<SentenceScore>,
}

impl ScoreTable {
    pub fn new(qid: impl Into<String>, variant: ScorerVariant, mut scores: Vec<SentenceScore>) -> Result<Self, TableError> {
        scores.sort_by_key(|s| s.reference);
        for w in scores.windows(2) {
            if w[0].reference == w[1].reference {
                return Err(TableError::Duplicate(w[0].reference));
            }
        }
        if let Some(s) = scores.iter().find(|s| !s.logit.is_finite()) {
            return Err(TableError::NonFinite(s.reference));
        }
        Ok(ScoreTable { qid: qid.into(), variant, scores })
    }

    /// Build from per-paragraph logit lists.
    pub fn from_nested(qid: impl Into<String>, variant: ScorerVariant, logits: &[Vec<f64>]) -> Result<Self, TableError> {
        let scores = logits
            .iter()
            .enumerate()
            .flat_map(|(p, row)| {
                row.iter().enumerate().map(move |(s, &logit)| SentenceScore { reference: SentenceRef::new(p, s), logit })
            })
            .collect();
        Self::new(qid, variant, scores)
    }

    pub fn scores(&self) -> &[SentenceScore] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, r: SentenceRef) -> Option<f64> {
        self.scores.binary_search_by_key(&r, |s| s.reference).ok().map(|i| self.scores[i].logit)
    }

    /// Logits grouped by paragraph index, each list in sentence order.
    pub fn by_paragraph(&self) -> BTreeMap<usize, Vec<(usize, f64)>> {
        let mut out: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
        for s in &self.scores {
            out.entry(s.reference.paragraph).or_default().push((s.reference.sentence, s.logit));
        }
        out
    }

    /// Check that the table holds exactly one entry per sentence of `record`.
    pub fn check_covers(&self, record: &QuestionRecord) -> Result<(), TableError> {
        let coverage = |reason: String| TableError::Coverage { qid: record.qid.clone(), reason };
        if self.qid != record.qid {
            return Err(coverage(format!("table is for `{}`", self.qid)));
        }
        if self.scores.len() != record.sentence_count() {
            return Err(coverage(format!("{} scores for {} sentences", self.scores.len(), record.sentence_count())));
        }
        for (s, r) in self.scores.iter().zip(record.sentence_refs()) {
            if s.reference != r {
                return Err(coverage(format!("unexpected entry {}", s.reference)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("variant with_answer requires an answer string")]
    MissingAnswer,
    #[error("scorer backend unreachable after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("scorer backend protocol error: {0}")]
    Protocol(String),
    #[error("scorer backend returned a non-finite logit for `{0}`")]
    NonFinite(String),
    #[error(transparent)]
    Table(#[from] TableError),
}

/// One sentence to score. `input` is the encoded model input; the raw texts
/// ride along for backends that work on text.
#[derive(Debug, Clone)]
pub struct ScoreRequest<'a> {
    pub id: String,
    pub question: &'a str,
    pub sentence: &'a str,
    /// `None` when the answer slot is masked.
    pub answer: Option<&'a str>,
    pub input: &'a TokenSequence,
}

/// A sentence scorer. Requests are batched; scores come back in request
/// order.
pub trait ScorerBackend: Send + Sync {
    /// Stable name identifying the model, part of every cache key.
    fn identity(&self) -> String;

    fn score_batch(&self, requests: &[ScoreRequest<'_>]) -> Result<Vec<f64>, ScoringError>;
}

impl<B: ScorerBackend + ?Sized> ScorerBackend for Box<B> {
    fn identity(&self) -> String {
        (**self).identity()
    }

    fn score_batch(&self, requests: &[ScoreRequest<'_>]) -> Result<Vec<f64>, ScoringError> {
        (**self).score_batch(requests)
    }
}

/// Score every sentence of every paragraph of `record`.
pub fn score_sentences(
    record: &QuestionRecord,
    variant: ScorerVariant,
    answer: Option<&str>,
    backend: &dyn ScorerBackend,
    vocab: &Vocabulary,
    cache: Option<&ScoreCache>,
) -> Result<ScoreTable, ScoringError> {
    let slot = match variant {
        ScorerVariant::NoAnswer => AnswerSlot::Mask,
        ScorerVariant::WithAnswer => AnswerSlot::Text(answer.ok_or(ScoringError::MissingAnswer)?),
    };
    let answer_text = match slot {
        AnswerSlot::Mask => None,
        AnswerSlot::Text(t) => Some(t),
    };
    let identity = backend.identity();

    let mut inputs = Vec::with_capacity(record.sentence_count());
    for (pi, paragraph) in record.paragraphs.iter().enumerate() {
        let encoding = ParagraphEncoding::new(&record.question, paragraph, pi, slot, vocab);
        for si in 0..paragraph.sentences.len() {
            let seq = match encoding.for_target(si) {
                Ok(seq) => seq,
                Err(EncodeError::TargetTruncated { sequence, .. }) => *sequence,
                Err(e @ EncodeError::NoSuchSentence { .. }) => unreachable!("{e}"),
            };
            let key = cache_key(&identity, variant, &record.question, paragraph, si, answer_text);
            inputs.push((SentenceRef::new(pi, si), key, seq));
        }
    }

    let mut logits: HashMap<SentenceRef, f64> = HashMap::with_capacity(inputs.len());
    let mut misses = Vec::new();
    for (r, key, seq) in &inputs {
        match cache.and_then(|c| c.get(key)) {
            Some(v) => {
                logits.insert(*r, v);
            }
            None => misses.push((r, key, seq)),
        }
    }
    if !misses.is_empty() {
        let requests: Vec<ScoreRequest<'_>> = misses
            .iter()
            .map(|(r, _, seq)| ScoreRequest {
                id: format!("{}/{}/{}/{}", record.qid, variant, r.paragraph, r.sentence),
                question: &record.question,
                sentence: record.sentence(**r).expect("ref built from record"),
                answer: answer_text,
                input: seq,
            })
            .collect();
        let scores = backend.score_batch(&requests)?;
        if scores.len() != requests.len() {
            return Err(ScoringError::Protocol(format!("{} scores for {} requests", scores.len(), requests.len())));
        }
        for ((r, key, _), (req, v)) in misses.iter().zip(requests.iter().zip(scores)) {
            if !v.is_finite() {
                return Err(ScoringError::NonFinite(req.id.clone()));
            }
            if let Some(c) = cache {
                c.insert((*key).clone(), v);
            }
            logits.insert(**r, v);
        }
    }

    let scores = inputs
        .iter()
        .map(|(r, _, _)| SentenceScore { reference: *r, logit: logits[r] })
        .collect();
    Ok(ScoreTable::new(record.qid.clone(), variant, scores)?)
}

#[derive(Serialize, Deserialize)]
struct ScoreLine {
    qid: String,
    variant: ScorerVariant,
    paragraph: usize,
    sentence: usize,
    logit: f64,
}

/// Write tables as JSON lines of `{"qid","variant","paragraph","sentence","logit"}`.
pub fn write_score_tables<'a, W: Write>(tables: impl IntoIterator<Item = &'a ScoreTable>, mut out: W) -> std::io::Result<()> {
    for t in tables {
        for s in &t.scores {
            let line = ScoreLine {
                qid: t.qid.clone(),
                variant: t.variant,
                paragraph: s.reference.paragraph,
                sentence: s.reference.sentence,
                logit: s.logit,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()
}

/// Read score lines back into tables, one per `(qid, variant)`, in order of
/// first appearance.
pub fn read_score_tables<R: BufRead>(input: R) -> Result<Vec<ScoreTable>, TableError> {
    let mut order: Vec<(String, ScorerVariant)> = Vec::new();
    let mut groups: HashMap<(String, ScorerVariant), Vec<SentenceScore>> = HashMap::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let l: ScoreLine =
            serde_json::from_str(&line).map_err(|e| TableError::Parse { line: i + 1, message: e.to_string() })?;
        let key = (l.qid, l.variant);
        let entry = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        entry.push(SentenceScore { reference: SentenceRef::new(l.paragraph, l.sentence), logit: l.logit });
    }
    order
        .into_iter()
        .map(|key| {
            let scores = groups.remove(&key).unwrap_or_default();
            ScoreTable::new(key.0, key.1, scores)
        })
        .collect()
}
