//! End-to-end orchestration: no-answer scoring, context assembly and
//! decoding, answer-conditioned rescoring and support selection.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{decode_answer, AnswerPrediction, DecodeError, SpanBackend, SpanError, SpanLogits};
use crate::artifacts::{content_key, sha256_hex, write_atomic, ArtifactStore};
use crate::context::{assemble_qa_context, ContextConfig, ContextError, QAContext, CONTEXT_BUDGET};
use crate::corpus::{QuestionRecord, Setting, SupportFact};
use crate::metrics::{evaluate, EvalReport};
use crate::scoring::{score_sentences, ScoreCache, ScoreTable, ScorerBackend, ScorerVariant, ScoringError};
use crate::support::{select_support, SupportError, SupportSet};
use crate::tokenization::Vocabulary;

pub use crate::metrics::Predictions;

/// Paragraph retrieval-score threshold for the fullwiki setting.
pub const DEFAULT_TAU: f64 = -8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub setting: Setting,
    /// Fullwiki only: keep a paragraph iff its retrieval score is `>= tau`.
    pub tau: f64,
    pub seed: u64,
    pub budget: usize,
    pub max_span_len: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            setting: Setting::Distractor,
            tau: DEFAULT_TAU,
            seed: 0,
            budget: CONTEXT_BUDGET,
            max_span_len: crate::answer::DEFAULT_MAX_SPAN_LEN,
        }
    }
}

impl PipelineConfig {
    /// Hash of the canonical JSON form; changes whenever any field does.
    pub fn revision(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// The models a run needs.
#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub scorer: &'a dyn ScorerBackend,
    pub span: &'a dyn SpanBackend,
    pub vocab: &'a Vocabulary,
}

/// Optional caches shared by all questions of a run.
#[derive(Clone, Copy, Default)]
pub struct Caches<'a> {
    pub scores: Option<&'a ScoreCache>,
    pub artifacts: Option<&'a ArtifactStore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Filter,
    ScoreNoAnswer,
    Assemble,
    SpanLogits,
    Decode,
    ScoreWithAnswer,
    Support,
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Span(#[from] SpanError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Support(#[from] SupportError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub qid: String,
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct QuestionOutcome {
    pub qid: String,
    pub no_answer_table: ScoreTable,
    pub context: QAContext,
    pub answer: AnswerPrediction,
    pub with_answer_table: ScoreTable,
    pub support: SupportSet,
    pub facts: Vec<SupportFact>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub outcomes: Vec<QuestionOutcome>,
    pub failures: Vec<Failure>,
    pub predictions: Predictions,
    /// Present when any record carries gold fields.
    pub report: Option<EvalReport>,
}

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("question `{qid}`: paragraph `{title}` has no retrieval score")]
    Unscored { qid: String, title: String },
}

/// Drop paragraphs whose retrieval score is below `tau` (ties are kept).
pub fn run_fullwiki_filter(record: &QuestionRecord, tau: f64) -> Result<QuestionRecord, FilterError> {
    let mut kept = Vec::with_capacity(record.paragraphs.len());
    for p in &record.paragraphs {
        let score = p.retrieval_score.ok_or_else(|| FilterError::Unscored { qid: record.qid.clone(), title: p.title.clone() })?;
        if score >= tau {
            kept.push(p.clone());
        }
    }
    Ok(QuestionRecord { paragraphs: kept, ..record.clone() })
}

fn span_logits_cached(record: &QuestionRecord, ctx: &QAContext, span: &dyn SpanBackend, store: Option<&ArtifactStore>) -> Result<SpanLogits, SpanError> {
    let Some(store) = store else { return span.span_logits(record, ctx) };
    let identity = span.identity();
    let record_bytes = serde_json::to_vec(record).expect("record serializes");
    let tokens: Vec<u8> = ctx.tokens.token_ids.iter().flat_map(|t| t.to_le_bytes()).collect();
    let key = content_key([identity.as_bytes(), &record_bytes, &tokens, &ctx.tokens.segment_ids]);
    if let Some(l) = store.get::<SpanLogits>("span_logits", &key)? {
        return Ok(l);
    }
    let l = span.span_logits(record, ctx)?;
    store.put("span_logits", &key, &l)?;
    Ok(l)
}

/// Steps 1 and 2: no-answer table, context and decoded answer.
pub fn answer_stage(
    record: &QuestionRecord,
    backends: Backends<'_>,
    config: &PipelineConfig,
    caches: Caches<'_>,
) -> Result<(ScoreTable, QAContext, AnswerPrediction), (Stage, StageError)> {
    let table = score_sentences(record, ScorerVariant::NoAnswer, None, backends.scorer, backends.vocab, caches.scores)
        .map_err(|e| (Stage::ScoreNoAnswer, e.into()))?;
    let ctx = assemble_qa_context(record, &table, backends.vocab, ContextConfig { budget: config.budget })
        .map_err(|e| (Stage::Assemble, e.into()))?;
    let logits = span_logits_cached(record, &ctx, backends.span, caches.artifacts).map_err(|e| (Stage::SpanLogits, e.into()))?;
    let answer = decode_answer(record, &ctx, &logits, config.max_span_len).map_err(|e| (Stage::Decode, e.into()))?;
    Ok((table, ctx, answer))
}

/// Step 3: rescore with `answer` in the input and pick the support set.
pub fn support_stage(
    record: &QuestionRecord,
    answer: &str,
    backends: Backends<'_>,
    caches: Caches<'_>,
) -> Result<(ScoreTable, SupportSet), (Stage, StageError)> {
    let table = score_sentences(record, ScorerVariant::WithAnswer, Some(answer), backends.scorer, backends.vocab, caches.scores)
        .map_err(|e| (Stage::ScoreWithAnswer, e.into()))?;
    let support = select_support(&table).map_err(|e| (Stage::Support, e.into()))?;
    Ok((table, support))
}

pub fn run_question(
    record: &QuestionRecord,
    backends: Backends<'_>,
    config: &PipelineConfig,
    caches: Caches<'_>,
) -> Result<QuestionOutcome, Failure> {
    let fail = |(stage, e): (Stage, StageError)| Failure { qid: record.qid.clone(), stage, message: e.to_string() };
    let (no_answer_table, context, answer) = answer_stage(record, backends, config, caches).map_err(fail)?;
    let (with_answer_table, support) = support_stage(record, answer.answer_string(), backends, caches).map_err(fail)?;
    let facts = support.members.iter().map(|&r| record.ref_to_fact(r)).collect();
    Ok(QuestionOutcome { qid: record.qid.clone(), no_answer_table, context, answer, with_answer_table, support, facts })
}

fn collect(records: &[QuestionRecord], results: Vec<Result<QuestionOutcome, Failure>>) -> RunOutput {
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(o) => outcomes.push(o),
            Err(f) => failures.push(f),
        }
    }
    let mut predictions = Predictions::default();
    for o in &outcomes {
        predictions.answer.insert(o.qid.clone(), o.answer.answer_string().to_owned());
        predictions.sp.insert(o.qid.clone(), o.facts.iter().map(|f| (f.title.clone(), f.sentence_index)).collect());
    }
    let has_gold = records.iter().any(|r| r.gold_answer.is_some() && r.gold_support.is_some());
    let report = has_gold.then(|| evaluate(&predictions, records));
    RunOutput { outcomes, failures, predictions, report }
}

/// Run all three steps on every record, in parallel. Per-question failures
/// are collected and the run continues.
pub fn run_distractor(records: &[QuestionRecord], backends: Backends<'_>, config: &PipelineConfig, caches: Caches<'_>) -> RunOutput {
    let results = records.par_iter().map(|r| run_question(r, backends, config, caches)).collect();
    collect(records, results)
}

/// Filter each record's paragraphs by retrieval score, then run as in the
/// distractor setting. Evaluation uses the unfiltered records.
pub fn run_fullwiki(records: &[QuestionRecord], backends: Backends<'_>, config: &PipelineConfig, caches: Caches<'_>) -> RunOutput {
    let results = records
        .par_iter()
        .map(|r| {
            let filtered = run_fullwiki_filter(r, config.tau)
                .map_err(|e| Failure { qid: r.qid.clone(), stage: Stage::Filter, message: e.to_string() })?;
            run_question(&filtered, backends, config, caches)
        })
        .collect();
    collect(records, results)
}

pub fn run(records: &[QuestionRecord], backends: Backends<'_>, config: &PipelineConfig, caches: Caches<'_>) -> RunOutput {
    match config.setting {
        Setting::Distractor => run_distractor(records, backends, config, caches),
        Setting::Fullwiki => run_fullwiki(records, backends, config, caches),
    }
}

#[derive(Debug, Error)]
pub enum PredictionError {
    #[error("duplicate qid `{0}`")]
    DuplicateQid(String),
    #[error("qid `{0}` has an answer or a support set but not both")]
    Unpaired(String),
    #[error("failed to write predictions: {0}")]
    Io(#[from] std::io::Error),
}

/// Canonical serialized form: compact JSON, qids sorted.
pub fn predictions_json(predictions: &Predictions) -> String {
    serde_json::to_string(predictions).expect("predictions serialize")
}

/// Build and write a prediction file from per-question answers and support
/// sets.
pub fn write_predictions(
    answers: &[(String, String)],
    supports: &[(String, Vec<SupportFact>)],
    path: &Path,
) -> Result<Predictions, PredictionError> {
    let mut p = Predictions::default();
    for (qid, a) in answers {
        if p.answer.insert(qid.clone(), a.clone()).is_some() {
            return Err(PredictionError::DuplicateQid(qid.clone()));
        }
    }
    for (qid, facts) in supports {
        let facts = facts.iter().map(|f| (f.title.clone(), f.sentence_index)).collect();
        if p.sp.insert(qid.clone(), facts).is_some() {
            return Err(PredictionError::DuplicateQid(qid.clone()));
        }
    }
    let answered: BTreeSet<&String> = p.answer.keys().collect();
    let supported: BTreeSet<&String> = p.sp.keys().collect();
    if let Some(q) = answered.symmetric_difference(&supported).next() {
        return Err(PredictionError::Unpaired((*q).clone()));
    }
    write_atomic(path, predictions_json(&p).as_bytes())?;
    Ok(p)
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub dataset_path: String,
    pub dataset_sha256: String,
    pub vocab_path: String,
    pub vocab_sha256: String,
    pub retrieval_scores: Option<(String, String)>,
    pub scorer_endpoint: String,
    pub scorer_backend: String,
    pub span_endpoint: String,
    pub span_backend: String,
    pub config: PipelineConfig,
    pub config_revision: String,
    pub started_at_unix: u64,
    pub finished_at_unix: u64,
    pub questions: usize,
    pub answered: usize,
    pub failures: Vec<Failure>,
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Answers and support sets of a run keyed by qid, for stage-wise
/// inspection.
pub fn answers_by_qid(output: &RunOutput) -> BTreeMap<String, AnswerPrediction> {
    output.outcomes.iter().map(|o| (o.qid.clone(), o.answer.clone())).collect()
}
