//! Multi-hop question answering over HotpotQA-format data.
//!
//! The pipeline runs in three steps:
//!
//! 1. every sentence of every paragraph is scored on its own, with only its
//!    owning paragraph as context ([`scoring`]);
//! 2. the highest-scoring sentences are packed into a word-piece budget
//!    ([`context`]) and a span model's logits are decoded into an answer
//!    ([`answer`]);
//! 3. sentences are scored again with the chosen answer in the input, and the
//!    best support set spanning exactly two paragraphs is picked ([`support`]).
//!
//! Neural scoring lives behind the [`scoring::ScorerBackend`] and
//! [`answer::SpanBackend`] traits. The crate ships deterministic stand-ins
//! (lexical overlap scoring, oracle and seeded-random span logits) and
//! newline-delimited JSON clients for external model servers.

pub mod answer;
pub mod artifacts;
pub mod context;
pub mod corpus;
pub mod metrics;
pub mod pipeline;
pub mod scoring;
pub mod support;
pub mod tokenization;

pub use answer::{decode_answer, AnswerKind, AnswerPrediction, SpanBackend, SpanLogits};
pub use context::{assemble_qa_context, ContextConfig, QAContext};
pub use corpus::{
    load_dataset, validate_record, Paragraph, QuestionRecord, SentenceRef, Setting, SupportFact,
};
pub use metrics::{answer_scores, coverage_rank, joint_scores, normalize_answer, support_scores, top_n_at};
pub use pipeline::{run_distractor, run_fullwiki_filter, write_predictions, PipelineConfig, Predictions};
pub use scoring::{score_sentences, LexicalBackend, ScoreTable, ScorerBackend, ScorerVariant};
pub use support::{brute_force_support, select_support, SupportSet};
pub use tokenization::{encode_scoring_input, tokenize, TokenSequence, Vocabulary};
