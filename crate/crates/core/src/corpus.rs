//! HotpotQA dataset ingestion and validation.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Distractor questions ship with this many context paragraphs.
pub const DISTRACTOR_PARAGRAPHS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Distractor,
    Fullwiki,
}

impl std::str::FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "distractor" => Ok(Setting::Distractor),
            "fullwiki" => Ok(Setting::Fullwiki),
            other => Err(format!("unknown setting `{other}` (expected distractor|fullwiki)")),
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Distractor => "distractor",
            Setting::Fullwiki => "fullwiki",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paragraph {
    pub title: String,
    pub sentences: Vec<String>,
    /// Retriever score, fullwiki only. `None` means unscored, which is not
    /// the same as a score of zero.
    pub retrieval_score: Option<f64>,
}

impl Paragraph {
    pub fn new(title: impl Into<String>, sentences: Vec<String>) -> Self {
        Paragraph { title: title.into(), sentences, retrieval_score: None }
    }
}

/// Position of a sentence inside a [`QuestionRecord`]: index into
/// `paragraphs`, then into that paragraph's `sentences`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SentenceRef {
    pub paragraph: usize,
    pub sentence: usize,
}

impl SentenceRef {
    pub const fn new(paragraph: usize, sentence: usize) -> Self {
        SentenceRef { paragraph, sentence }
    }
}

impl fmt::Display for SentenceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}s{}", self.paragraph, self.sentence)
    }
}

/// A supporting fact as HotpotQA writes it: `(title, sentence_index)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SupportFact {
    pub title: String,
    pub sentence_index: usize,
}

impl SupportFact {
    pub fn new(title: impl Into<String>, sentence_index: usize) -> Self {
        SupportFact { title: title.into(), sentence_index }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub qid: String,
    pub question: String,
    pub paragraphs: Vec<Paragraph>,
    pub gold_answer: Option<String>,
    pub gold_support: Option<Vec<SupportFact>>,
    pub setting: Setting,
}

impl QuestionRecord {
    pub fn paragraph_index(&self, title: &str) -> Option<usize> {
        self.paragraphs.iter().position(|p| p.title == title)
    }

    pub fn sentence(&self, r: SentenceRef) -> Option<&str> {
        self.paragraphs.get(r.paragraph)?.sentences.get(r.sentence).map(String::as_str)
    }

    pub fn sentence_count(&self) -> usize {
        self.paragraphs.iter().map(|p| p.sentences.len()).sum()
    }

    /// All sentence refs in document order.
    pub fn sentence_refs(&self) -> impl Iterator<Item = SentenceRef> + '_ {
        self.paragraphs.iter().enumerate().flat_map(|(pi, p)| {
            (0..p.sentences.len()).map(move |si| SentenceRef::new(pi, si))
        })
    }

    /// Gold supporting facts resolved against this record's paragraphs.
    /// Facts whose title or index does not resolve are skipped.
    pub fn gold_support_refs(&self) -> Option<BTreeSet<SentenceRef>> {
        let facts = self.gold_support.as_ref()?;
        Some(
            facts
                .iter()
                .filter_map(|f| {
                    let pi = self.paragraph_index(&f.title)?;
                    (f.sentence_index < self.paragraphs[pi].sentences.len())
                        .then(|| SentenceRef::new(pi, f.sentence_index))
                })
                .collect(),
        )
    }

    pub fn ref_to_fact(&self, r: SentenceRef) -> SupportFact {
        SupportFact::new(self.paragraphs[r.paragraph].title.clone(), r.sentence)
    }
}

/// One failed invariant on a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub reason: String,
}

impl Violation {
    fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Violation { field: field.into(), reason: reason.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

/// Check the invariants every record must satisfy.
///
/// Gold support must resolve into the context and touch exactly two titles.
/// Fullwiki gold support names Wikipedia pages that are often missing from the
/// retrieved context, so resolution is only checked in the distractor setting.
pub fn validate_record(record: &QuestionRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    if record.qid.is_empty() {
        out.push(Violation::new("_id", "empty question id"));
    }
    let mut titles = HashSet::new();
    for (pi, p) in record.paragraphs.iter().enumerate() {
        if p.title.is_empty() {
            out.push(Violation::new(format!("context[{pi}].title"), "empty title"));
        }
        if p.sentences.is_empty() {
            out.push(Violation::new(format!("context[{pi}].sentences"), format!("paragraph `{}` has no sentences", p.title)));
        }
        if !titles.insert(p.title.as_str()) {
            out.push(Violation::new(format!("context[{pi}].title"), format!("duplicate title `{}`", p.title)));
        }
        if let Some(s) = p.retrieval_score {
            if !s.is_finite() {
                out.push(Violation::new(format!("context[{pi}].score"), "retrieval score is not finite"));
            }
        }
    }
    if let Some(facts) = &record.gold_support {
        if record.setting == Setting::Distractor {
            for (fi, fact) in facts.iter().enumerate() {
                match record.paragraph_index(&fact.title) {
                    None => out.push(Violation::new(
                        format!("supporting_facts[{fi}]"),
                        format!("title `{}` not found in context", fact.title),
                    )),
                    Some(pi) => {
                        let n = record.paragraphs[pi].sentences.len();
                        if fact.sentence_index >= n {
                            out.push(Violation::new(
                                format!("supporting_facts[{fi}]"),
                                format!("sentence index {} out of range for `{}` ({n} sentences)", fact.sentence_index, fact.title),
                            ));
                        }
                    }
                }
            }
        }
        let distinct: BTreeSet<&str> = facts.iter().map(|f| f.title.as_str()).collect();
        if distinct.len() != 2 {
            out.push(Violation::new(
                "supporting_facts",
                format!("support must come from exactly two paragraphs, found {}", distinct.len()),
            ));
        }
    }
    out
}

/// [`validate_record`] plus the shape required of distractor training data.
pub fn validate_training_record(record: &QuestionRecord) -> Vec<Violation> {
    let mut out = validate_record(record);
    if record.gold_answer.is_none() {
        out.push(Violation::new("answer", "training record has no gold answer"));
    }
    if record.gold_support.is_none() {
        out.push(Violation::new("supporting_facts", "training record has no supporting facts"));
    }
    if record.setting == Setting::Distractor && record.paragraphs.len() != DISTRACTOR_PARAGRAPHS {
        out.push(Violation::new(
            "context",
            format!("expected {DISTRACTOR_PARAGRAPHS} paragraphs, found {}", record.paragraphs.len()),
        ));
    }
    out
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed dataset JSON at byte {offset} (line {line}, column {column}): {message}")]
    Parse { offset: usize, line: usize, column: usize, message: String },
    #[error("record `{qid}` is invalid: {}", join_violations(.violations))]
    Validation { qid: String, violations: Vec<Violation> },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// The on-disk HotpotQA record. `context_scores`, when present, runs parallel
/// to `context` and carries fullwiki retriever scores.
#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    #[serde(rename = "_id")]
    id: String,
    question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    answer: Option<String>,
    context: Vec<(String, Vec<String>)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    supporting_facts: Option<Vec<(String, usize)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    context_scores: Option<Vec<Option<f64>>>,
}

impl RawRecord {
    fn into_record(self, setting: Setting) -> Result<QuestionRecord, DatasetError> {
        if let Some(scores) = &self.context_scores {
            if scores.len() != self.context.len() {
                return Err(DatasetError::Validation {
                    qid: self.id,
                    violations: vec![Violation::new(
                        "context_scores",
                        format!("{} scores for {} paragraphs", scores.len(), self.context.len()),
                    )],
                });
            }
        }
        let scores = self.context_scores.unwrap_or_default();
        let paragraphs = self
            .context
            .into_iter()
            .enumerate()
            .map(|(i, (title, sentences))| Paragraph {
                title,
                sentences,
                retrieval_score: scores.get(i).copied().flatten(),
            })
            .collect();
        Ok(QuestionRecord {
            qid: self.id,
            question: self.question,
            paragraphs,
            gold_answer: self.answer,
            gold_support: self
                .supporting_facts
                .map(|f| f.into_iter().map(|(t, i)| SupportFact::new(t, i)).collect()),
            setting,
        })
    }

    fn from_record(r: &QuestionRecord) -> Self {
        let any_scored = r.paragraphs.iter().any(|p| p.retrieval_score.is_some());
        RawRecord {
            id: r.qid.clone(),
            question: r.question.clone(),
            answer: r.gold_answer.clone(),
            context: r.paragraphs.iter().map(|p| (p.title.clone(), p.sentences.clone())).collect(),
            supporting_facts: r
                .gold_support
                .as_ref()
                .map(|f| f.iter().map(|s| (s.title.clone(), s.sentence_index)).collect()),
            context_scores: any_scored.then(|| r.paragraphs.iter().map(|p| p.retrieval_score).collect()),
        }
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

/// Parse and validate a dataset held in memory.
pub fn parse_dataset(text: &str, setting: Setting) -> Result<Vec<QuestionRecord>, DatasetError> {
    let raw: Vec<RawRecord> = serde_json::from_str(text).map_err(|e| DatasetError::Parse {
        offset: byte_offset(text, e.line(), e.column()),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(raw.len());
    for r in raw {
        let record = r.into_record(setting)?;
        let mut violations = validate_record(&record);
        if !seen.insert(record.qid.clone()) {
            violations.push(Violation::new("_id", "duplicate question id in dataset"));
        }
        if !violations.is_empty() {
            return Err(DatasetError::Validation { qid: record.qid, violations });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_dataset(path: impl AsRef<Path>, setting: Setting) -> Result<Vec<QuestionRecord>, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_owned(), source })?;
    parse_dataset(&text, setting)
}

/// Serialize records back into the HotpotQA distribution format.
pub fn serialize_dataset(records: &[QuestionRecord]) -> String {
    let raw: Vec<RawRecord> = records.iter().map(RawRecord::from_record).collect();
    serde_json::to_string(&raw).expect("dataset records always serialize")
}

#[derive(Debug, Deserialize)]
struct SidecarLine {
    qid: String,
    title: String,
    score: f64,
}

/// Read a JSON-lines sidecar of `{"qid", "title", "score"}` retriever scores.
pub fn load_retrieval_scores(path: impl AsRef<Path>) -> Result<HashMap<(String, String), f64>, DatasetError> {
    let path = path.as_ref();
    let io = |source| DatasetError::Io { path: path.to_owned(), source };
    let reader = BufReader::new(fs::File::open(path).map_err(io)?);
    let mut out = HashMap::new();
    let mut offset = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        let len = line.len() + 1;
        if !line.trim().is_empty() {
            let entry: SidecarLine = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
                offset: offset + e.column().saturating_sub(1),
                line: lineno + 1,
                column: e.column(),
                message: e.to_string(),
            })?;
            out.insert((entry.qid, entry.title), entry.score);
        }
        offset += len;
    }
    Ok(out)
}

/// Fill `retrieval_score` from a sidecar map. Paragraphs without an entry keep
/// whatever score they already had.
pub fn attach_retrieval_scores(records: &mut [QuestionRecord], scores: &HashMap<(String, String), f64>) {
    for r in records {
        for p in &mut r.paragraphs {
            if let Some(&s) = scores.get(&(r.qid.clone(), p.title.clone())) {
                p.retrieval_score = Some(s);
            }
        }
    }
}
