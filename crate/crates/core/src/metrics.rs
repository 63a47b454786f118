//! Answer, support and joint EM/F1 following the HotpotQA evaluation
//! conventions, plus sentence-selection coverage statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{QuestionRecord, SentenceRef, SupportFact};
use crate::scoring::ScoreTable;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("gold sentence {0} is missing from the score table")]
    GoldNotInTable(SentenceRef),
    #[error("coverage needs at least one gold sentence")]
    EmptyGold,
    #[error("no ranks to summarize")]
    EmptyRanks,
    #[error("fraction {0} outside (0, 1]")]
    BadFraction(f64),
    #[error("no score table for `{0}`")]
    MissingTable(String),
    #[error("failed to read predictions {path}: {message}")]
    Predictions { path: String, message: String },
}

fn articles() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(a|an|the)\b").expect("static regex"))
}

/// Lowercase, drop ASCII punctuation, drop the articles a/an/the, collapse
/// whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    let no_articles = articles().replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AnswerScores {
    pub em: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

const SPECIAL_ANSWERS: [&str; 3] = ["yes", "no", "noanswer"];

/// Exact match and token-multiset F1 on normalized answers. A yes/no/noanswer
/// answer on either side scores zero F1 unless both sides are identical.
pub fn answer_scores(prediction: &str, gold: &str) -> AnswerScores {
    let pred = normalize_answer(prediction);
    let gold = normalize_answer(gold);
    let em = if pred == gold { 1.0 } else { 0.0 };
    let zero = AnswerScores { em, ..AnswerScores::default() };
    if pred != gold && (SPECIAL_ANSWERS.contains(&pred.as_str()) || SPECIAL_ANSWERS.contains(&gold.as_str())) {
        return zero;
    }
    let pred_tokens: Vec<&str> = pred.split_whitespace().collect();
    let gold_tokens: Vec<&str> = gold.split_whitespace().collect();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold_tokens {
        *counts.entry(t).or_default() += 1;
    }
    let mut same = 0usize;
    for t in &pred_tokens {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                same += 1;
            }
        }
    }
    if same == 0 {
        return zero;
    }
    let precision = same as f64 / pred_tokens.len() as f64;
    let recall = same as f64 / gold_tokens.len() as f64;
    AnswerScores { em, f1: 2.0 * precision * recall / (precision + recall), precision, recall }
}

pub type SupportScores = AnswerScores;

/// Set precision/recall over `(title, index)` facts; duplicates collapse.
pub fn support_scores(prediction: &[SupportFact], gold: &[SupportFact]) -> SupportScores {
    let pred: BTreeSet<&SupportFact> = prediction.iter().collect();
    let gold: BTreeSet<&SupportFact> = gold.iter().collect();
    let tp = pred.intersection(&gold).count() as f64;
    let fp = pred.len() as f64 - tp;
    let fnn = gold.len() as f64 - tp;
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fnn > 0.0 { tp / (tp + fnn) } else { 0.0 };
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    let em = if fp + fnn == 0.0 { 1.0 } else { 0.0 };
    SupportScores { em, f1, precision, recall }
}

pub type JointScores = AnswerScores;

/// Joint precision and recall are products of the component values; joint
/// EM requires both components to match exactly.
pub fn joint_scores(ans: &AnswerScores, sup: &SupportScores) -> JointScores {
    let precision = ans.precision * sup.precision;
    let recall = ans.recall * sup.recall;
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    JointScores { em: ans.em * sup.em, f1, precision, recall }
}

/// A leaderboard-shaped prediction file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub answer: BTreeMap<String, String>,
    pub sp: BTreeMap<String, Vec<(String, usize)>>,
}

impl Predictions {
    pub fn load(path: &Path) -> Result<Self, MetricError> {
        let err = |message: String| MetricError::Predictions { path: path.display().to_string(), message };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }

    pub fn support_facts(&self, qid: &str) -> Option<Vec<SupportFact>> {
        self.sp.get(qid).map(|v| v.iter().map(|(t, i)| SupportFact::new(t.clone(), *i)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionEval {
    pub qid: String,
    pub answer: AnswerScores,
    pub support: SupportScores,
    pub joint: JointScores,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ans_em: f64,
    pub ans_f1: f64,
    pub ans_precision: f64,
    pub ans_recall: f64,
    pub sup_em: f64,
    pub sup_f1: f64,
    pub sup_precision: f64,
    pub sup_recall: f64,
    pub joint_em: f64,
    pub joint_f1: f64,
    pub joint_precision: f64,
    pub joint_recall: f64,
    pub count: usize,
    pub per_question: Vec<QuestionEval>,
}

/// Score predictions against every record that carries gold fields. Missing
/// predictions score zero; the joint metric is only credited when both
/// components were predicted.
pub fn evaluate(predictions: &Predictions, records: &[QuestionRecord]) -> EvalReport {
    let mut report = EvalReport::default();
    for r in records {
        let (Some(gold_answer), Some(gold_sp)) = (&r.gold_answer, &r.gold_support) else { continue };
        let answer = predictions.answer.get(&r.qid).map(|a| answer_scores(a, gold_answer));
        let support = predictions.support_facts(&r.qid).map(|sp| support_scores(&sp, gold_sp));
        let joint = match (&answer, &support) {
            (Some(a), Some(s)) => joint_scores(a, s),
            _ => JointScores::default(),
        };
        report.per_question.push(QuestionEval {
            qid: r.qid.clone(),
            answer: answer.unwrap_or_default(),
            support: support.unwrap_or_default(),
            joint,
        });
    }
    let n = report.per_question.len();
    report.count = n;
    if n == 0 {
        return report;
    }
    let mean = |f: &dyn Fn(&QuestionEval) -> f64| report.per_question.iter().map(f).sum::<f64>() / n as f64;
    let (ans_em, ans_f1, ans_p, ans_r) =
        (mean(&|q| q.answer.em), mean(&|q| q.answer.f1), mean(&|q| q.answer.precision), mean(&|q| q.answer.recall));
    let (sup_em, sup_f1, sup_p, sup_r) =
        (mean(&|q| q.support.em), mean(&|q| q.support.f1), mean(&|q| q.support.precision), mean(&|q| q.support.recall));
    let (j_em, j_f1, j_p, j_r) =
        (mean(&|q| q.joint.em), mean(&|q| q.joint.f1), mean(&|q| q.joint.precision), mean(&|q| q.joint.recall));
    report.ans_em = ans_em;
    report.ans_f1 = ans_f1;
    report.ans_precision = ans_p;
    report.ans_recall = ans_r;
    report.sup_em = sup_em;
    report.sup_f1 = sup_f1;
    report.sup_precision = sup_p;
    report.sup_recall = sup_r;
    report.joint_em = j_em;
    report.joint_f1 = j_f1;
    report.joint_precision = j_p;
    report.joint_recall = j_r;
    report
}

/// Number of sentences scoring at least as high as the lowest-scoring gold
/// sentence: how many must be forwarded to guarantee all gold is included.
/// Ties count against the gold sentence.
pub fn coverage_rank(table: &ScoreTable, gold: &BTreeSet<SentenceRef>) -> Result<usize, MetricError> {
    if gold.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    let mut lowest = f64::INFINITY;
    for &g in gold {
        let l = table.get(g).ok_or(MetricError::GoldNotInTable(g))?;
        lowest = lowest.min(l);
    }
    Ok(table.scores().iter().filter(|s| s.logit >= lowest).count())
}

/// Smallest `n` such that at least `fraction` of the ranks are `<= n`.
pub fn top_n_at(ranks: &[usize], fraction: f64) -> Result<usize, MetricError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(MetricError::BadFraction(fraction));
    }
    if ranks.is_empty() {
        return Err(MetricError::EmptyRanks);
    }
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let total = sorted.len() as f64;
    for (i, &n) in sorted.iter().enumerate() {
        // ties: every rank equal to n is covered once n is reached
        if i + 1 < sorted.len() && sorted[i + 1] == n {
            continue;
        }
        if (i + 1) as f64 / total >= fraction {
            return Ok(n);
        }
    }
    Ok(*sorted.last().expect("non-empty"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub qid: String,
    pub gold_sentences: usize,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub questions: usize,
    /// `(fraction, top-n)` pairs.
    pub top_n: Vec<(f64, usize)>,
    pub mean_rank: f64,
    pub per_question: Vec<CoverageRow>,
}

impl AblationReport {
    pub fn top_n_for(&self, fraction: f64) -> Option<usize> {
        self.top_n.iter().find(|(f, _)| *f == fraction).map(|(_, n)| *n)
    }
}

/// Coverage ranks of every record with gold support, and top-n at each
/// requested fraction.
pub fn ablation_report(records: &[QuestionRecord], tables: &[ScoreTable], fractions: &[f64]) -> Result<AblationReport, MetricError> {
    let by_qid: HashMap<&str, &ScoreTable> = tables.iter().map(|t| (t.qid.as_str(), t)).collect();
    let mut rows = Vec::new();
    for r in records {
        let Some(gold) = r.gold_support_refs() else { continue };
        if gold.is_empty() {
            continue;
        }
        let table = by_qid.get(r.qid.as_str()).ok_or_else(|| MetricError::MissingTable(r.qid.clone()))?;
        rows.push(CoverageRow { qid: r.qid.clone(), gold_sentences: gold.len(), rank: coverage_rank(table, &gold)? });
    }
    let ranks: Vec<usize> = rows.iter().map(|r| r.rank).collect();
    let top_n = fractions.iter().map(|&f| Ok((f, top_n_at(&ranks, f)?))).collect::<Result<Vec<_>, MetricError>>()?;
    let mean_rank = ranks.iter().sum::<usize>() as f64 / ranks.len() as f64;
    Ok(AblationReport { questions: rows.len(), top_n, mean_rank, per_question: rows })
}
