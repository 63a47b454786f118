//! Word-piece tokenization and scoring-model input construction.
//!
//! Tokenization is cased: text is split on whitespace and punctuation, then
//! each word is segmented by greedy longest match against the vocabulary,
//! with `##` marking word-internal continuation pieces.

use std::collections::HashMap;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_general_category::{get_general_category, GeneralCategory};

use crate::corpus::{Paragraph, SentenceRef};

/// Hard input limit of the scoring and span models.
pub const MAX_SEQUENCE_LEN: usize = 512;

pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const MASK_TOKEN: &str = "[MASK]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CONTINUATION_PREFIX: &str = "##";

/// Words longer than this many characters become a single unknown token.
const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("failed to read vocabulary {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("vocabulary is missing special token {0}")]
    MissingSpecial(&'static str),
    #[error("vocabulary lists `{token}` twice (lines {first} and {second})")]
    Duplicate { token: String, first: usize, second: usize },
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    cls: u32,
    sep: u32,
    mask: u32,
    unk: u32,
}

impl Vocabulary {
    /// Build from tokens in id order.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                continue;
            }
            if let Some(&first) = ids.get(t) {
                return Err(VocabError::Duplicate { token: t.clone(), first: first as usize, second: i });
            }
            ids.insert(t.clone(), i as u32);
        }
        let special = |name: &'static str| ids.get(name).copied().ok_or(VocabError::MissingSpecial(name));
        Ok(Vocabulary {
            cls: special(CLS_TOKEN)?,
            sep: special(SEP_TOKEN)?,
            mask: special(MASK_TOKEN)?,
            unk: special(UNK_TOKEN)?,
            tokens,
            ids,
        })
    }

    /// Load a vocab file: UTF-8, one token per line, line index = id.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, VocabError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| VocabError::Io { path: path.to_owned(), source })?;
        Self::from_tokens(text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l)))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn cls_id(&self) -> u32 {
        self.cls
    }

    pub fn sep_id(&self) -> u32 {
        self.sep
    }

    pub fn mask_id(&self) -> u32 {
        self.mask
    }

    pub fn unk_id(&self) -> u32 {
        self.unk
    }
}

/// A word piece and the byte range of input text it was cut from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Piece {
    pub id: u32,
    pub span: Range<usize>,
}

fn is_whitespace(ch: char) -> bool {
    matches!(ch, ' ' | '\t' | '\n' | '\r') || get_general_category(ch) == GeneralCategory::SpaceSeparator
}

fn is_control(ch: char) -> bool {
    if matches!(ch, '\t' | '\n' | '\r') {
        return false;
    }
    matches!(get_general_category(ch), GeneralCategory::Control | GeneralCategory::Format)
}

fn is_punctuation(ch: char) -> bool {
    if ch.is_ascii_punctuation() {
        return true;
    }
    matches!(
        get_general_category(ch),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

fn is_cjk(ch: char) -> bool {
    matches!(ch as u32,
        0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0x20000..=0x2A6DF | 0x2A700..=0x2B73F
        | 0x2B740..=0x2B81F | 0x2B820..=0x2CEAF | 0xF900..=0xFAFF | 0x2F800..=0x2FA1F)
}

/// Byte ranges of the pre-tokenized words of `text`.
fn basic_words(text: &str) -> Vec<Range<usize>> {
    let mut words = Vec::new();
    let mut current: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        let standalone = is_punctuation(ch) || is_cjk(ch);
        let breaks = ch == '\0' || ch == '\u{FFFD}' || is_control(ch) || is_whitespace(ch) || standalone;
        if breaks {
            if let Some(start) = current.take() {
                words.push(start..i);
            }
            if standalone {
                words.push(i..i + ch.len_utf8());
            }
        } else if current.is_none() {
            current = Some(i);
        }
    }
    if let Some(start) = current {
        words.push(start..text.len());
    }
    words
}

fn word_pieces(text: &str, word: Range<usize>, vocab: &Vocabulary, out: &mut Vec<Piece>) {
    let w = &text[word.clone()];
    if w.chars().count() > MAX_WORD_CHARS {
        out.push(Piece { id: vocab.unk, span: word });
        return;
    }
    let mark = out.len();
    let mut candidate = String::with_capacity(w.len() + CONTINUATION_PREFIX.len());
    let mut start = 0;
    while start < w.len() {
        let mut end = w.len();
        let mut found = None;
        while end > start {
            candidate.clear();
            if start > 0 {
                candidate.push_str(CONTINUATION_PREFIX);
            }
            candidate.push_str(&w[start..end]);
            if let Some(id) = vocab.id(&candidate) {
                found = Some(id);
                break;
            }
            end = w[..end].char_indices().next_back().map(|(i, _)| i).unwrap_or(start);
        }
        match found {
            Some(id) => {
                out.push(Piece { id, span: word.start + start..word.start + end });
                start = end;
            }
            None => {
                out.truncate(mark);
                out.push(Piece { id: vocab.unk, span: word });
                return;
            }
        }
    }
}

/// Tokenize into word pieces with byte offsets into `text`.
pub fn tokenize_with_offsets(text: &str, vocab: &Vocabulary) -> Vec<Piece> {
    let mut out = Vec::new();
    for word in basic_words(text) {
        word_pieces(text, word, vocab, &mut out);
    }
    out
}

pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<u32> {
    tokenize_with_offsets(text, vocab).into_iter().map(|p| p.id).collect()
}

/// Where a token in a model input came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenSource {
    Special,
    Question,
    Paragraph(SentenceRef),
    Answer,
    /// Title of the paragraph with this index.
    Title(usize),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub source_map: Vec<TokenSource>,
}

impl TokenSequence {
    pub fn with_capacity(n: usize) -> Self {
        TokenSequence {
            token_ids: Vec::with_capacity(n),
            segment_ids: Vec::with_capacity(n),
            source_map: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, id: u32, segment: u8, source: TokenSource) {
        self.token_ids.push(id);
        self.segment_ids.push(segment);
        self.source_map.push(source);
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn truncate(&mut self, len: usize) {
        self.token_ids.truncate(len);
        self.segment_ids.truncate(len);
        self.source_map.truncate(len);
    }
}

/// What fills the answer slot of a scoring input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerSlot<'a> {
    Mask,
    Text(&'a str),
}

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("target {target} does not exist (paragraph has {sentences} sentences)")]
    NoSuchSentence { target: SentenceRef, sentences: usize },
    /// The target's tokens all fell past the length limit. The sequence is
    /// still returned so inference can score it.
    #[error("target sentence {target} was truncated away")]
    TargetTruncated { target: SentenceRef, sequence: Box<TokenSequence> },
}

/// The shared token layout of one paragraph's scoring inputs. Only the
/// segment ids differ between target sentences.
#[derive(Debug, Clone)]
pub struct ParagraphEncoding {
    paragraph_index: usize,
    base: TokenSequence,
    /// Token positions of each sentence in the truncated sequence, and
    /// whether the sentence had any tokens before truncation.
    sentence_spans: Vec<(Range<usize>, bool)>,
}

impl ParagraphEncoding {
    pub fn new(question: &str, paragraph: &Paragraph, paragraph_index: usize, answer: AnswerSlot<'_>, vocab: &Vocabulary) -> Self {
        let mut seq = TokenSequence::with_capacity(MAX_SEQUENCE_LEN);
        seq.push(vocab.cls, 0, TokenSource::Special);
        for id in tokenize(question, vocab) {
            seq.push(id, 0, TokenSource::Question);
        }
        seq.push(vocab.sep, 0, TokenSource::Special);
        let mut spans = Vec::with_capacity(paragraph.sentences.len());
        for (si, sentence) in paragraph.sentences.iter().enumerate() {
            let start = seq.len();
            let source = TokenSource::Paragraph(SentenceRef::new(paragraph_index, si));
            for id in tokenize(sentence, vocab) {
                seq.push(id, 0, source);
            }
            spans.push(start..seq.len());
        }
        seq.push(vocab.sep, 0, TokenSource::Special);
        match answer {
            AnswerSlot::Mask => seq.push(vocab.mask, 0, TokenSource::Answer),
            AnswerSlot::Text(text) => {
                for id in tokenize(text, vocab) {
                    seq.push(id, 0, TokenSource::Answer);
                }
            }
        }
        seq.push(vocab.sep, 0, TokenSource::Special);
        seq.truncate(MAX_SEQUENCE_LEN);
        let limit = seq.len();
        let sentence_spans = spans
            .into_iter()
            .map(|r| {
                let had_tokens = !r.is_empty();
                (r.start.min(limit)..r.end.min(limit), had_tokens)
            })
            .collect();
        ParagraphEncoding { paragraph_index, base: seq, sentence_spans }
    }

    pub fn sentence_count(&self) -> usize {
        self.sentence_spans.len()
    }

    /// Token ids shared by every target of this paragraph.
    pub fn token_ids(&self) -> &[u32] {
        &self.base.token_ids
    }

    pub fn for_target(&self, sentence: usize) -> Result<TokenSequence, EncodeError> {
        let target = SentenceRef::new(self.paragraph_index, sentence);
        let (range, had_tokens) = self
            .sentence_spans
            .get(sentence)
            .cloned()
            .ok_or(EncodeError::NoSuchSentence { target, sentences: self.sentence_spans.len() })?;
        let mut seq = self.base.clone();
        for s in &mut seq.segment_ids[range.clone()] {
            *s = 1;
        }
        if had_tokens && range.is_empty() {
            return Err(EncodeError::TargetTruncated { target, sequence: Box::new(seq) });
        }
        Ok(seq)
    }
}

/// Build `[CLS] question [SEP] paragraph [SEP] answer [SEP]`, truncated to
/// the first [`MAX_SEQUENCE_LEN`] tokens, with segment id 1 on exactly the
/// target sentence's tokens.
pub fn encode_scoring_input(
    question: &str,
    paragraph: &Paragraph,
    target: SentenceRef,
    answer: AnswerSlot<'_>,
    vocab: &Vocabulary,
) -> Result<TokenSequence, EncodeError> {
    if target.sentence >= paragraph.sentences.len() {
        return Err(EncodeError::NoSuchSentence { target, sentences: paragraph.sentences.len() });
    }
    ParagraphEncoding::new(question, paragraph, target.paragraph, answer, vocab).for_target(target.sentence)
}
