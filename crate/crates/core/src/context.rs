//! QA context assembly under a word-piece budget.
//!
//! Sentences are admitted greedily by descending no-answer logit. The first
//! sentence admitted from a paragraph also brings in that paragraph's title
//! (wrapped in `<t>`/`</t>`) and its first sentence. Admission stops at the
//! first candidate that would overflow the budget.
//!
//! Layout:
//!
//! ```text
//! [CLS] question [SEP] (<t> title </t> sentences...)* [SEP] yes no noans
//! ```
//!
//! Paragraphs appear in descending order of their best admitted logit; within
//! a paragraph, sentences keep document order.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{QuestionRecord, SentenceRef};
use crate::scoring::{ScoreTable, TableError};
use crate::tokenization::{tokenize, tokenize_with_offsets, Piece, TokenSequence, TokenSource, Vocabulary, MAX_SEQUENCE_LEN};

/// Tokens counted against the budget: everything except the four-token tail.
pub const CONTEXT_BUDGET: usize = 508;
pub const TAIL_LEN: usize = 4;
pub const TITLE_OPEN: &str = "<t>";
pub const TITLE_CLOSE: &str = "</t>";
pub const TAIL_WORDS: [&str; 3] = ["yes", "no", "noans"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextConfig {
    pub budget: usize,
}

impl Default for ContextConfig {
    fn default() -> Self {
        ContextConfig { budget: CONTEXT_BUDGET }
    }
}

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("score table for `{0}` is empty")]
    EmptyTable(String),
    #[error("question uses {question_tokens} word pieces ({needed} with [CLS]/[SEP]), over the budget of {budget}")]
    QuestionTooLong { question_tokens: usize, needed: usize, budget: usize },
    #[error("budget {0} plus the tail exceeds the {MAX_SEQUENCE_LEN}-token limit")]
    BudgetTooLarge(usize),
    #[error(transparent)]
    Table(#[from] TableError),
}

/// The text a body token was cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceUnit {
    Title(usize),
    Sentence(SentenceRef),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharSpan {
    pub unit: SourceUnit,
    /// Byte range into the unit's text.
    pub start: usize,
    pub end: usize,
}

impl CharSpan {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAContext {
    pub qid: String,
    pub tokens: TokenSequence,
    /// Every sentence placed in the context, including induced first sentences.
    pub selected: BTreeSet<SentenceRef>,
    /// The subset of `selected` admitted on score rather than induced.
    pub scored: BTreeSet<SentenceRef>,
    pub paragraph_order: Vec<usize>,
    /// Source span of each token; `None` for question, markers and specials.
    pub char_map: Vec<Option<CharSpan>>,
}

impl QAContext {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens counted against the budget.
    pub fn budgeted_len(&self) -> usize {
        self.tokens.len() - TAIL_LEN
    }

    /// Positions of the `yes`, `no` and `noans` tail tokens.
    pub fn tail_positions(&self) -> [usize; 3] {
        let n = self.tokens.len();
        [n - 3, n - 2, n - 1]
    }

    pub fn unit_text<'r>(&self, record: &'r QuestionRecord, unit: SourceUnit) -> Option<&'r str> {
        match unit {
            SourceUnit::Title(p) => record.paragraphs.get(p).map(|p| p.title.as_str()),
            SourceUnit::Sentence(r) => record.sentence(r),
        }
    }
}

struct Pieces {
    title: Vec<Piece>,
    sentences: Vec<Option<Vec<Piece>>>,
}

fn marker_ids(marker: &str, vocab: &Vocabulary) -> Vec<u32> {
    match vocab.id(marker) {
        Some(id) => vec![id],
        None => tokenize(marker, vocab),
    }
}

fn by_score_desc(a: &(SentenceRef, f64), b: &(SentenceRef, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

pub fn assemble_qa_context(
    record: &QuestionRecord,
    table: &ScoreTable,
    vocab: &Vocabulary,
    config: ContextConfig,
) -> Result<QAContext, ContextError> {
    if table.is_empty() {
        return Err(ContextError::EmptyTable(table.qid.clone()));
    }
    table.check_covers(record)?;
    if config.budget + TAIL_LEN > MAX_SEQUENCE_LEN {
        return Err(ContextError::BudgetTooLarge(config.budget));
    }
    let question = tokenize(&record.question, vocab);
    let fixed = question.len() + 2;
    if fixed > config.budget {
        return Err(ContextError::QuestionTooLong { question_tokens: question.len(), needed: fixed, budget: config.budget });
    }
    let open = marker_ids(TITLE_OPEN, vocab);
    let close = marker_ids(TITLE_CLOSE, vocab);

    let mut pieces: HashMap<usize, Pieces> = HashMap::new();
    let sentence_len = |pieces: &mut HashMap<usize, Pieces>, r: SentenceRef| -> usize {
        let entry = pieces.entry(r.paragraph).or_insert_with(|| Pieces {
            title: tokenize_with_offsets(&record.paragraphs[r.paragraph].title, vocab),
            sentences: vec![None; record.paragraphs[r.paragraph].sentences.len()],
        });
        entry.sentences[r.sentence]
            .get_or_insert_with(|| tokenize_with_offsets(&record.paragraphs[r.paragraph].sentences[r.sentence], vocab))
            .len()
    };

    let mut candidates: Vec<(SentenceRef, f64)> = table.scores().iter().map(|s| (s.reference, s.logit)).collect();
    candidates.sort_by(by_score_desc);

    let mut used = fixed;
    let mut paragraph_order = Vec::new();
    let mut selected = BTreeSet::new();
    let mut scored = BTreeSet::new();
    for (r, _) in candidates {
        if selected.contains(&r) {
            continue;
        }
        let mut cost = sentence_len(&mut pieces, r);
        let first = SentenceRef::new(r.paragraph, 0);
        let new_paragraph = !paragraph_order.contains(&r.paragraph);
        if new_paragraph {
            cost += open.len() + pieces[&r.paragraph].title.len() + close.len();
            if r != first {
                cost += sentence_len(&mut pieces, first);
            }
        }
        if used + cost > config.budget {
            break;
        }
        used += cost;
        if new_paragraph {
            paragraph_order.push(r.paragraph);
            selected.insert(first);
        }
        selected.insert(r);
        scored.insert(r);
    }

    let mut tokens = TokenSequence::with_capacity(used + TAIL_LEN);
    let mut char_map = Vec::with_capacity(used + TAIL_LEN);
    tokens.push(vocab.cls_id(), 0, TokenSource::Special);
    for id in question {
        tokens.push(id, 0, TokenSource::Question);
    }
    tokens.push(vocab.sep_id(), 0, TokenSource::Special);
    char_map.resize(tokens.len(), None);
    for &p in &paragraph_order {
        let entry = &pieces[&p];
        for &id in &open {
            tokens.push(id, 1, TokenSource::Special);
            char_map.push(None);
        }
        for piece in &entry.title {
            tokens.push(piece.id, 1, TokenSource::Title(p));
            char_map.push(Some(CharSpan { unit: SourceUnit::Title(p), start: piece.span.start, end: piece.span.end }));
        }
        for &id in &close {
            tokens.push(id, 1, TokenSource::Special);
            char_map.push(None);
        }
        for r in selected.range(SentenceRef::new(p, 0)..SentenceRef::new(p + 1, 0)) {
            let sentence = entry.sentences[r.sentence].as_ref().expect("selected sentences were tokenized");
            for piece in sentence {
                tokens.push(piece.id, 1, TokenSource::Paragraph(*r));
                char_map.push(Some(CharSpan { unit: SourceUnit::Sentence(*r), start: piece.span.start, end: piece.span.end }));
            }
        }
    }
    debug_assert_eq!(tokens.len(), used);
    tokens.push(vocab.sep_id(), 1, TokenSource::Special);
    for word in TAIL_WORDS {
        tokens.push(vocab.id(word).unwrap_or(vocab.unk_id()), 1, TokenSource::Special);
    }
    char_map.resize(tokens.len(), None);

    Ok(QAContext { qid: record.qid.clone(), tokens, selected, scored, paragraph_order, char_map })
}

#[derive(Serialize)]
struct DumpLine<'a> {
    qid: &'a str,
    titles: Vec<&'a str>,
    selected: Vec<(usize, usize)>,
    token_count: usize,
    token_ids: &'a [u32],
    segment_ids: &'a [u8],
}

/// Debug dump: one JSON line per context with the ordered titles, selected
/// sentences and token count, plus the token ids a span server consumes.
pub fn write_context_dump<'a, W: Write>(
    items: impl IntoIterator<Item = (&'a QuestionRecord, &'a QAContext)>,
    mut out: W,
) -> std::io::Result<()> {
    for (record, ctx) in items {
        let line = DumpLine {
            qid: &ctx.qid,
            titles: ctx.paragraph_order.iter().map(|&p| record.paragraphs[p].title.as_str()).collect(),
            selected: ctx.selected.iter().map(|r| (r.paragraph, r.sentence)).collect(),
            token_count: ctx.len(),
            token_ids: &ctx.tokens.token_ids,
            segment_ids: &ctx.tokens.segment_ids,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
