//! Support selection: the highest-scoring sentence set drawn from exactly two
//! paragraphs, where a set scores the sum of its members' with-answer logits.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SentenceRef;
use crate::scoring::ScoreTable;

/// Largest table [`brute_force_support`] will enumerate.
pub const BRUTE_FORCE_MAX_SENTENCES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSet {
    pub members: BTreeSet<SentenceRef>,
    pub total: f64,
}

impl SupportSet {
    pub fn paragraphs(&self) -> BTreeSet<usize> {
        self.members.iter().map(|r| r.paragraph).collect()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SupportError {
    #[error("support needs two paragraphs, table has {0}")]
    Infeasible(usize),
    #[error("brute force refuses {0} sentences (limit {BRUTE_FORCE_MAX_SENTENCES})")]
    TooLarge(usize),
}

/// Sum in sentence order. Both selectors total their picks this way so equal
/// memberships give bit-equal totals.
fn ordered_sum(logits: &[(usize, f64)], pick: impl Fn(usize) -> bool) -> f64 {
    logits.iter().filter(|(s, _)| pick(*s)).map(|(_, l)| l).sum()
}

/// Best non-empty subset of one paragraph: its strictly positive sentences,
/// or if there are none, its single highest sentence (lowest index on ties).
fn paragraph_best(logits: &[(usize, f64)]) -> (Vec<usize>, f64) {
    let positive: Vec<usize> = logits.iter().filter(|(_, l)| *l > 0.0).map(|(s, _)| *s).collect();
    if !positive.is_empty() {
        let total = ordered_sum(logits, |s| positive.contains(&s));
        return (positive, total);
    }
    let (s, l) = logits.iter().fold((usize::MAX, f64::NEG_INFINITY), |(bs, bl), &(s, l)| if l > bl { (s, l) } else { (bs, bl) });
    (vec![s], l)
}

/// Maximize the summed logit over sets touching exactly two paragraphs.
///
/// The score is additive and the two paragraphs' choices are independent, so
/// each paragraph's best subset is computed on its own and the two
/// paragraphs with the highest bests win (lower index on ties).
pub fn select_support(table: &ScoreTable) -> Result<SupportSet, SupportError> {
    let paragraphs = table.by_paragraph();
    if paragraphs.len() < 2 {
        return Err(SupportError::Infeasible(paragraphs.len()));
    }
    let mut bests: Vec<(usize, Vec<usize>, f64)> =
        paragraphs.iter().map(|(&p, logits)| {
            let (members, total) = paragraph_best(logits);
            (p, members, total)
        }).collect();
    // stable: equal bests keep ascending paragraph order
    bests.sort_by(|a, b| b.2.total_cmp(&a.2));
    let mut top: Vec<&(usize, Vec<usize>, f64)> = bests.iter().take(2).collect();
    top.sort_by_key(|b| b.0);
    let members = top
        .iter()
        .flat_map(|(p, sents, _)| sents.iter().map(move |&s| SentenceRef::new(*p, s)))
        .collect();
    Ok(SupportSet { members, total: top[0].2 + top[1].2 })
}

/// Exhaustive oracle for [`select_support`]: every pair of paragraphs and
/// every non-empty subset of each.
///
/// Ties are broken by lower paragraph pair, then fewer members, then the
/// lexicographically smaller member list.
pub fn brute_force_support(table: &ScoreTable) -> Result<SupportSet, SupportError> {
    if table.len() > BRUTE_FORCE_MAX_SENTENCES {
        return Err(SupportError::TooLarge(table.len()));
    }
    let paragraphs: Vec<(usize, Vec<(usize, f64)>)> = table.by_paragraph().into_iter().collect();
    if paragraphs.len() < 2 {
        return Err(SupportError::Infeasible(paragraphs.len()));
    }
    // every non-empty subset of each paragraph with its ordered sum
    let subsets: Vec<Vec<(Vec<usize>, f64)>> = paragraphs
        .iter()
        .map(|(_, logits)| {
            (1u32..1 << logits.len())
                .map(|mask| {
                    let picked = |k: usize| mask & (1 << k) != 0;
                    let members: Vec<usize> = logits.iter().enumerate().filter(|(k, _)| picked(*k)).map(|(_, (s, _))| *s).collect();
                    let total = logits.iter().enumerate().filter(|(k, _)| picked(*k)).map(|(_, (_, l))| l).sum::<f64>();
                    (members, total)
                })
                .collect()
        })
        .collect();

    type Best = (f64, usize, Vec<SentenceRef>);
    let mut best: Option<Best> = None;
    for a in 0..paragraphs.len() {
        for b in a + 1..paragraphs.len() {
            for (ma, ta) in &subsets[a] {
                for (mb, tb) in &subsets[b] {
                    let total = ta + tb;
                    let size = ma.len() + mb.len();
                    let better = match &best {
                        None => true,
                        Some((bt, bs, bm)) => {
                            if total != *bt {
                                total > *bt
                            } else if size != *bs {
                                // pair order is already ascending; only a
                                // strictly better total may switch pairs
                                size < *bs && same_pair(bm, paragraphs[a].0, paragraphs[b].0)
                            } else {
                                same_pair(bm, paragraphs[a].0, paragraphs[b].0) && lex_less(paragraphs[a].0, ma, paragraphs[b].0, mb, bm)
                            }
                        }
                    };
                    if better {
                        let members = ma
                            .iter()
                            .map(|&s| SentenceRef::new(paragraphs[a].0, s))
                            .chain(mb.iter().map(|&s| SentenceRef::new(paragraphs[b].0, s)))
                            .collect();
                        best = Some((total, size, members));
                    }
                }
            }
        }
    }
    let (total, _, members) = best.expect("at least one feasible set");
    Ok(SupportSet { members: members.into_iter().collect(), total })
}

fn same_pair(members: &[SentenceRef], a: usize, b: usize) -> bool {
    members.first().map(|r| r.paragraph) == Some(a) && members.last().map(|r| r.paragraph) == Some(b)
}

fn lex_less(pa: usize, ma: &[usize], pb: usize, mb: &[usize], current: &[SentenceRef]) -> bool {
    let candidate = ma.iter().map(|&s| SentenceRef::new(pa, s)).chain(mb.iter().map(|&s| SentenceRef::new(pb, s)));
    candidate.lt(current.iter().copied())
}
