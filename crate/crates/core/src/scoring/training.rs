//! Scorer training data: instance construction and question-level batching.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::ScorerVariant;
use crate::corpus::{QuestionRecord, SentenceRef};
use crate::tokenization::{AnswerSlot, ParagraphEncoding, TokenSequence, Vocabulary, MAX_SEQUENCE_LEN};

/// Questions per training batch.
pub const QUESTIONS_PER_BATCH: usize = 3;
/// Token cap per training batch.
pub const BATCH_TOKEN_CAP: usize = 5625;
/// Non-gold paragraphs sampled per question.
pub const SAMPLED_NEGATIVE_PARAGRAPHS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub qid: String,
    pub reference: SentenceRef,
    pub label: Label,
    pub encoded: TokenSequence,
}

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("record `{0}` has no gold answer")]
    NoGoldAnswer(String),
    #[error("record `{0}` has no resolvable gold support")]
    NoGoldSupport(String),
}

/// Independent per-question stream derived from one run seed.
pub(crate) fn question_rng(seed: u64, qid: &str, purpose: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(purpose.as_bytes());
    h.update([0]);
    h.update(qid.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

/// One instance per sentence of the two gold paragraphs plus two distinct
/// randomly drawn non-gold paragraphs. Instances whose target sentence falls
/// entirely past the length limit are dropped.
pub fn build_training_instances(
    record: &QuestionRecord,
    variant: ScorerVariant,
    rng_seed: u64,
    vocab: &Vocabulary,
) -> Result<Vec<TrainingInstance>, TrainingError> {
    let answer = record.gold_answer.as_deref().ok_or_else(|| TrainingError::NoGoldAnswer(record.qid.clone()))?;
    let gold = record
        .gold_support_refs()
        .filter(|g| !g.is_empty())
        .ok_or_else(|| TrainingError::NoGoldSupport(record.qid.clone()))?;
    let gold_paragraphs: BTreeSet<usize> = gold.iter().map(|r| r.paragraph).collect();
    let others: Vec<usize> = (0..record.paragraphs.len()).filter(|p| !gold_paragraphs.contains(p)).collect();

    let mut rng = question_rng(rng_seed, &record.qid, "negative-paragraphs");
    let take = SAMPLED_NEGATIVE_PARAGRAPHS.min(others.len());
    let mut pool: BTreeSet<usize> = gold_paragraphs;
    pool.extend(index::sample(&mut rng, others.len(), take).into_iter().map(|i| others[i]));

    let slot = match variant {
        ScorerVariant::NoAnswer => AnswerSlot::Mask,
        ScorerVariant::WithAnswer => AnswerSlot::Text(answer),
    };
    let mut out = Vec::new();
    for pi in pool {
        let encoding = ParagraphEncoding::new(&record.question, &record.paragraphs[pi], pi, slot, vocab);
        for si in 0..encoding.sentence_count() {
            let Ok(encoded) = encoding.for_target(si) else { continue };
            let reference = SentenceRef::new(pi, si);
            let label = if gold.contains(&reference) { Label::Positive } else { Label::Negative };
            out.push(TrainingInstance { qid: record.qid.clone(), reference, label, encoded });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingBatch {
    pub qids: Vec<String>,
    pub instances: Vec<TrainingInstance>,
    /// Instances removed to fit the token cap, as `(qid, sentence)`.
    pub dropped: Vec<(String, SentenceRef)>,
}

impl TrainingBatch {
    pub fn token_count(&self) -> usize {
        self.instances.iter().map(|i| i.encoded.len()).sum()
    }
}

/// Group instances (contiguous per question) into batches of
/// [`QUESTIONS_PER_BATCH`] questions, then drop instances uniformly at random
/// until each batch fits [`BATCH_TOKEN_CAP`] tokens.
pub fn pack_training_batches(instances: Vec<TrainingInstance>, rng_seed: u64) -> Vec<TrainingBatch> {
    let mut groups: Vec<(String, Vec<TrainingInstance>)> = Vec::new();
    for inst in instances {
        assert!(inst.encoded.len() <= MAX_SEQUENCE_LEN, "instance longer than the sequence limit");
        match groups.last_mut() {
            Some((qid, g)) if *qid == inst.qid => g.push(inst),
            _ => groups.push((inst.qid.clone(), vec![inst])),
        }
    }
    let mut batches = Vec::with_capacity(groups.len().div_ceil(QUESTIONS_PER_BATCH));
    for (bi, chunk) in groups.chunks_mut(QUESTIONS_PER_BATCH).enumerate() {
        let qids: Vec<String> = chunk.iter().map(|(q, _)| q.clone()).collect();
        let mut members: Vec<TrainingInstance> = chunk.iter_mut().flat_map(|(_, g)| std::mem::take(g)).collect();
        let mut total: usize = members.iter().map(|i| i.encoded.len()).sum();
        let mut dropped = Vec::new();
        if total > BATCH_TOKEN_CAP {
            let mut rng = question_rng(rng_seed, &bi.to_string(), "batch-drop");
            while total > BATCH_TOKEN_CAP {
                let victim = members.remove(rng.random_range(0..members.len()));
                total -= victim.encoded.len();
                dropped.push((victim.qid, victim.reference));
            }
        }
        batches.push(TrainingBatch { qids, instances: members, dropped });
    }
    batches
}

#[derive(Serialize)]
struct InstanceLine<'a> {
    batch: usize,
    qid: &'a str,
    paragraph: usize,
    sentence: usize,
    label: u8,
    token_ids: &'a [u32],
    segment_ids: &'a [u8],
}

/// Write batches as JSON lines, one instance per line, for the trainer.
pub fn write_batches<W: Write>(batches: &[TrainingBatch], mut out: W) -> std::io::Result<()> {
    for (bi, b) in batches.iter().enumerate() {
        for i in &b.instances {
            let line = InstanceLine {
                batch: bi,
                qid: &i.qid,
                paragraph: i.reference.paragraph,
                sentence: i.reference.sentence,
                label: u8::from(i.label == Label::Positive),
                token_ids: &i.encoded.token_ids,
                segment_ids: &i.encoded.segment_ids,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()
}
