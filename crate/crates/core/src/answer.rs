//! Answer decoding from start/end span logits over a [`QAContext`].

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{QAContext, SourceUnit};
use crate::corpus::QuestionRecord;
use crate::metrics::normalize_answer;
use crate::scoring::training::question_rng;
use crate::scoring::wire::{ClientError, NdjsonClient};

pub const DEFAULT_MAX_SPAN_LEN: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanLogits {
    pub start_logits: Vec<f64>,
    pub end_logits: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Span,
    Yes,
    No,
    NoAns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerPrediction {
    pub kind: AnswerKind,
    /// Source text of the span; empty unless `kind` is `Span`.
    pub text: String,
    pub score: f64,
    /// Inclusive token positions of the winning candidate.
    pub span: Option<(usize, usize)>,
}

impl AnswerPrediction {
    /// The string written to prediction files and fed to the with-answer
    /// scorer. No-answer predictions become the empty string.
    pub fn answer_string(&self) -> &str {
        match self.kind {
            AnswerKind::Span => &self.text,
            AnswerKind::Yes => "yes",
            AnswerKind::No => "no",
            AnswerKind::NoAns => "",
        }
    }
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("logit lengths (start {start}, end {end}) do not match context length {context}")]
    DimensionMismatch { start: usize, end: usize, context: usize },
    #[error("non-finite span logit at position {0}")]
    NonFinite(usize),
    #[error("context is too short to hold the answer tail")]
    NoTail,
}

/// Pick the best candidate among body spans (start ≤ end, at most
/// `max_span_len` tokens, inside a single sentence or title) and the three
/// single-token tail answers `yes`, `no` and `noans`. A candidate scores
/// `start_logits[i] + end_logits[j]`; ties go to the earliest start, then the
/// shortest span.
pub fn decode_answer(
    record: &QuestionRecord,
    ctx: &QAContext,
    logits: &SpanLogits,
    max_span_len: usize,
) -> Result<AnswerPrediction, DecodeError> {
    let n = ctx.len();
    if logits.start_logits.len() != n || logits.end_logits.len() != n {
        return Err(DecodeError::DimensionMismatch { start: logits.start_logits.len(), end: logits.end_logits.len(), context: n });
    }
    if let Some(i) = (0..n).find(|&i| !logits.start_logits[i].is_finite() || !logits.end_logits[i].is_finite()) {
        return Err(DecodeError::NonFinite(i));
    }
    if n < crate::context::TAIL_LEN + 2 {
        return Err(DecodeError::NoTail);
    }
    let (s, e) = (&logits.start_logits, &logits.end_logits);

    let mut best: Option<(f64, usize, usize)> = None;
    let mut consider = |score: f64, i: usize, j: usize| {
        if best.is_none_or(|(b, _, _)| score > b) {
            best = Some((score, i, j));
        }
    };
    for i in 0..n {
        let Some(unit) = ctx.char_map[i].as_ref().map(|c| c.unit) else { continue };
        for j in i..n.min(i + max_span_len) {
            match &ctx.char_map[j] {
                Some(c) if c.unit == unit => consider(s[i] + e[j], i, j),
                _ => break,
            }
        }
    }
    for k in ctx.tail_positions() {
        consider(s[k] + e[k], k, k);
    }
    let (score, i, j) = best.expect("tail candidates always exist");

    let [yes, no, noans] = ctx.tail_positions();
    let kind = match i {
        _ if i == yes => AnswerKind::Yes,
        _ if i == no => AnswerKind::No,
        _ if i == noans => AnswerKind::NoAns,
        _ => AnswerKind::Span,
    };
    let text = match kind {
        AnswerKind::Span => {
            let (first, last) = (ctx.char_map[i].as_ref().unwrap(), ctx.char_map[j].as_ref().unwrap());
            ctx.unit_text(record, first.unit).map(|t| t[first.start..last.end].to_owned()).unwrap_or_default()
        }
        _ => String::new(),
    };
    Ok(AnswerPrediction { kind, text, score, span: Some((i, j)) })
}

#[derive(Debug, Error)]
pub enum SpanError {
    #[error("no span logits for `{0}`")]
    Missing(String),
    #[error("span backend unreachable after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("span backend protocol error: {0}")]
    Protocol(String),
    #[error("failed to read span logits: {0}")]
    Io(#[from] std::io::Error),
}

impl From<ClientError> for SpanError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Transport { attempts, message } => SpanError::Transport { attempts, message },
            ClientError::Protocol(m) => SpanError::Protocol(m),
        }
    }
}

/// A span model: produces start/end logits for a context.
pub trait SpanBackend: Send + Sync {
    fn identity(&self) -> String;

    fn span_logits(&self, record: &QuestionRecord, ctx: &QAContext) -> Result<SpanLogits, SpanError>;
}

impl<B: SpanBackend + ?Sized> SpanBackend for Box<B> {
    fn identity(&self) -> String {
        (**self).identity()
    }

    fn span_logits(&self, record: &QuestionRecord, ctx: &QAContext) -> Result<SpanLogits, SpanError> {
        (**self).span_logits(record, ctx)
    }
}

const ORACLE_PEAK: f64 = 10.0;

/// Peaks both classifiers on the gold answer: the matching tail token for
/// yes/no, else the first body span whose text equals the gold answer
/// (exactly, then after normalization), else `noans`.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleSpanBackend {
    pub max_span_len: usize,
}

impl OracleSpanBackend {
    pub fn new(max_span_len: usize) -> Self {
        OracleSpanBackend { max_span_len }
    }

    pub fn locate(record: &QuestionRecord, ctx: &QAContext, gold: &str, max_span_len: usize) -> (usize, usize) {
        let [yes, no, noans] = ctx.tail_positions();
        let norm = normalize_answer(gold);
        match norm.as_str() {
            "yes" => return (yes, yes),
            "no" => return (no, no),
            _ => {}
        }
        let candidates = body_spans(ctx, max_span_len);
        let text = |i: usize, j: usize| {
            let (a, b) = (ctx.char_map[i].as_ref().unwrap(), ctx.char_map[j].as_ref().unwrap());
            ctx.unit_text(record, a.unit).map(|t| &t[a.start..b.end])
        };
        if let Some(&(i, j)) = candidates.iter().find(|&&(i, j)| text(i, j) == Some(gold)) {
            return (i, j);
        }
        if !norm.is_empty() {
            if let Some(&(i, j)) = candidates.iter().find(|&&(i, j)| text(i, j).map(normalize_answer).as_deref() == Some(norm.as_str())) {
                return (i, j);
            }
        }
        (noans, noans)
    }
}

fn body_spans(ctx: &QAContext, max_span_len: usize) -> Vec<(usize, usize)> {
    let n = ctx.len();
    let mut out = Vec::new();
    for i in 0..n {
        let Some(unit) = ctx.char_map[i].as_ref().map(|c| c.unit) else { continue };
        for j in i..n.min(i + max_span_len) {
            match &ctx.char_map[j] {
                Some(c) if c.unit == unit => out.push((i, j)),
                _ => break,
            }
        }
    }
    out
}

impl SpanBackend for OracleSpanBackend {
    fn identity(&self) -> String {
        format!("oracle-span/v1/max{}", self.max_span_len)
    }

    fn span_logits(&self, record: &QuestionRecord, ctx: &QAContext) -> Result<SpanLogits, SpanError> {
        let n = ctx.len();
        let (i, j) = match record.gold_answer.as_deref() {
            Some(gold) => Self::locate(record, ctx, gold, self.max_span_len),
            None => {
                let noans = ctx.tail_positions()[2];
                (noans, noans)
            }
        };
        let mut start_logits = vec![0.0; n];
        let mut end_logits = vec![0.0; n];
        start_logits[i] = ORACLE_PEAK;
        end_logits[j] = ORACLE_PEAK;
        Ok(SpanLogits { start_logits, end_logits })
    }
}

/// Seeded uniform noise in `[-1, 1)`, independent per question.
#[derive(Debug, Clone, Copy)]
pub struct RandomSpanBackend {
    pub seed: u64,
}

impl SpanBackend for RandomSpanBackend {
    fn identity(&self) -> String {
        format!("random-span/v1/seed{}", self.seed)
    }

    fn span_logits(&self, record: &QuestionRecord, ctx: &QAContext) -> Result<SpanLogits, SpanError> {
        let mut rng = question_rng(self.seed, &record.qid, "span-logits");
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let start_logits = draw(ctx.len());
        let end_logits = draw(ctx.len());
        Ok(SpanLogits { start_logits, end_logits })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LogitsLine {
    id: String,
    start_logits: Vec<f64>,
    end_logits: Vec<f64>,
}

/// Externally produced logits, one `{"id","start_logits","end_logits"}` JSON
/// line per question.
#[derive(Debug, Clone, Default)]
pub struct FileSpanBackend {
    identity: String,
    logits: HashMap<String, SpanLogits>,
}

impl FileSpanBackend {
    pub fn from_reader<R: BufRead>(reader: R, identity: impl Into<String>) -> Result<Self, SpanError> {
        let mut logits = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let l: LogitsLine =
                serde_json::from_str(&line).map_err(|e| SpanError::Protocol(format!("line {}: {e}", i + 1)))?;
            logits.insert(l.id, SpanLogits { start_logits: l.start_logits, end_logits: l.end_logits });
        }
        Ok(FileSpanBackend { identity: identity.into(), logits })
    }

    pub fn load(path: &Path) -> Result<Self, SpanError> {
        let bytes = fs::read(path)?;
        let identity = format!("span-file:{}", crate::artifacts::sha256_hex(&bytes));
        Self::from_reader(BufReader::new(&bytes[..]), identity)
    }
}

impl SpanBackend for FileSpanBackend {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn span_logits(&self, record: &QuestionRecord, _ctx: &QAContext) -> Result<SpanLogits, SpanError> {
        self.logits.get(&record.qid).cloned().ok_or_else(|| SpanError::Missing(record.qid.clone()))
    }
}

pub fn write_span_logits<'a, W: Write>(items: impl IntoIterator<Item = (&'a str, &'a SpanLogits)>, mut out: W) -> std::io::Result<()> {
    for (id, l) in items {
        let line = LogitsLine { id: id.to_owned(), start_logits: l.start_logits.clone(), end_logits: l.end_logits.clone() };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Debug, Serialize)]
struct SpanRequest<'a> {
    id: &'a str,
    token_ids: &'a [u32],
    segment_ids: &'a [u8],
}

/// Span model served over NDJSON: request `{"id","token_ids","segment_ids"}`,
/// response `{"id","start_logits","end_logits"}`.
pub struct NdjsonSpanBackend {
    client: NdjsonClient,
    identity: String,
}

impl NdjsonSpanBackend {
    pub fn new(endpoint: &str) -> Self {
        let client = NdjsonClient::new(endpoint);
        let identity = format!("ndjson-span:{}", client.addr());
        NdjsonSpanBackend { client, identity }
    }

    pub fn with_identity(mut self, identity: impl Into<String>) -> Self {
        self.identity = identity.into();
        self
    }
}

impl SpanBackend for NdjsonSpanBackend {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn span_logits(&self, record: &QuestionRecord, ctx: &QAContext) -> Result<SpanLogits, SpanError> {
        let req = SpanRequest { id: &record.qid, token_ids: &ctx.tokens.token_ids, segment_ids: &ctx.tokens.segment_ids };
        let mut resp: HashMap<String, LogitsLine> = self.client.round_trip(&[(record.qid.clone(), req)])?;
        let l = resp.remove(&record.qid).ok_or_else(|| SpanError::Missing(record.qid.clone()))?;
        Ok(SpanLogits { start_logits: l.start_logits, end_logits: l.end_logits })
    }
}

/// Does decoded text come from a single source unit of the context?
pub fn span_unit(ctx: &QAContext, span: (usize, usize)) -> Option<SourceUnit> {
    let a = ctx.char_map.get(span.0)?.as_ref()?;
    let b = ctx.char_map.get(span.1)?.as_ref()?;
    (a.unit == b.unit).then_some(a.unit)
}
