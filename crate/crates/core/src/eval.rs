//! Answer, evidence and joint EM/F1 with per-type breakdowns.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::QaRecord;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub qa_id: String,
    pub answer: String,
    pub evidence_pages: BTreeSet<u32>,
    #[serde(default)]
    pub degraded: bool,
    /// Full page ranking, when the method produces one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranked_pages: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<String>,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("more than one prediction for {0}")]
    DuplicatePrediction(String),
    #[error("prediction for unknown record {0}")]
    UnknownRecord(String),
    #[error("gold evidence set is empty")]
    GoldEmpty,
}

/// Lowercase, drop ASCII punctuation and the articles a/an/the, collapse
/// whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub em: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

impl Score {
    const PERFECT: Score = Score { em: 1.0, f1: 1.0, precision: 1.0, recall: 1.0 };
    const ZERO: Score = Score { em: 0.0, f1: 0.0, precision: 0.0, recall: 0.0 };

    fn from_counts(common: usize, predicted: usize, gold: usize, exact: bool) -> Score {
        let em = if exact { 1.0 } else { 0.0 };
        if common == 0 {
            return Score { em, ..Score::ZERO };
        }
        let precision = common as f64 / predicted as f64;
        let recall = common as f64 / gold as f64;
        Score { em, f1: 2.0 * precision * recall / (precision + recall), precision, recall }
    }
}

/// EM and bag-of-tokens F1 on normalized strings.
pub fn answer_em_f1(pred: &str, gold: &str) -> Score {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    match (pt.is_empty(), gt.is_empty()) {
        (true, true) => return Score::PERFECT,
        (true, false) | (false, true) => return Score::ZERO,
        _ => {}
    }
    let mut bag: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &gt {
        *bag.entry(t).or_default() += 1;
    }
    let mut common = 0;
    for t in &pt {
        if let Some(c) = bag.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    Score::from_counts(common, pt.len(), gt.len(), p == g)
}

pub fn evidence_em_f1(pred: &BTreeSet<u32>, gold: &BTreeSet<u32>) -> Score {
    match (pred.is_empty(), gold.is_empty()) {
        (true, true) => return Score::PERFECT,
        (true, false) | (false, true) => return Score::ZERO,
        _ => {}
    }
    let common = pred.intersection(gold).count();
    Score::from_counts(common, pred.len(), gold.len(), pred == gold)
}

/// Joint precision and recall are products of the components.
pub fn joint_em_f1(answer: &Score, evidence: &Score) -> (f64, f64) {
    let p = answer.precision * evidence.precision;
    let r = answer.recall * evidence.recall;
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (answer.em * evidence.em, f1)
}

pub fn recall_at_k(ranked: &[u32], gold: &BTreeSet<u32>, k: usize) -> Result<f64, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::GoldEmpty);
    }
    let top: BTreeSet<u32> = ranked.iter().take(k).copied().collect();
    Ok(top.intersection(gold).count() as f64 / gold.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub qa_id: String,
    pub answer: Score,
    pub evidence: Score,
    pub joint_em: f64,
    pub joint_f1: f64,
    pub recall_at_k: Option<f64>,
    pub degraded: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub answer_em: f64,
    pub answer_f1: f64,
    pub evidence_em: f64,
    pub evidence_f1: f64,
    pub joint_em: f64,
    pub joint_f1: f64,
    /// Mean over examples that carry a ranking.
    pub recall_at_k: Option<f64>,
    pub degraded: usize,
}

#[derive(Default)]
struct Accumulator {
    count: usize,
    sums: [f64; 6],
    recall_sum: f64,
    recall_count: usize,
    degraded: usize,
}

impl Accumulator {
    fn add(&mut self, e: &ExampleScore) {
        self.count += 1;
        let values = [e.answer.em, e.answer.f1, e.evidence.em, e.evidence.f1, e.joint_em, e.joint_f1];
        for (s, v) in self.sums.iter_mut().zip(values) {
            *s += v;
        }
        if let Some(r) = e.recall_at_k {
            self.recall_sum += r;
            self.recall_count += 1;
        }
        self.degraded += e.degraded as usize;
    }

    fn finish(&self) -> Aggregate {
        let mean = |s: f64| if self.count == 0 { 0.0 } else { s / self.count as f64 };
        Aggregate {
            count: self.count,
            answer_em: mean(self.sums[0]),
            answer_f1: mean(self.sums[1]),
            evidence_em: mean(self.sums[2]),
            evidence_f1: mean(self.sums[3]),
            joint_em: mean(self.sums[4]),
            joint_f1: mean(self.sums[5]),
            recall_at_k: (self.recall_count > 0).then(|| self.recall_sum / self.recall_count as f64),
            degraded: self.degraded,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub overall: Aggregate,
    pub by_answer_type: BTreeMap<String, Aggregate>,
    pub by_reasoning_type: BTreeMap<String, Aggregate>,
    pub by_numerical_op: BTreeMap<String, Aggregate>,
    pub examples: Vec<ExampleScore>,
}

pub fn score_example(pred: &Prediction, gold: &QaRecord, k: usize) -> ExampleScore {
    let answer = answer_em_f1(&pred.answer, &gold.answer);
    let evidence = evidence_em_f1(&pred.evidence_pages, &gold.evidence_pages);
    let (joint_em, joint_f1) = joint_em_f1(&answer, &evidence);
    let recall = pred.ranked_pages.as_ref().and_then(|r| recall_at_k(r, &gold.evidence_pages, k).ok());
    ExampleScore {
        qa_id: gold.qa_id.clone(),
        answer,
        evidence,
        joint_em,
        joint_f1,
        recall_at_k: recall,
        degraded: pred.degraded,
    }
}

pub const DEFAULT_RECALL_K: usize = 3;

/// Scores every gold record; a missing prediction counts as empty.
pub fn breakdown_report(preds: &[Prediction], golds: &[QaRecord]) -> Result<MetricsReport, EvalError> {
    breakdown_report_at(preds, golds, DEFAULT_RECALL_K)
}

pub fn breakdown_report_at(preds: &[Prediction], golds: &[QaRecord], k: usize) -> Result<MetricsReport, EvalError> {
    let gold_ids: BTreeSet<&str> = golds.iter().map(|g| g.qa_id.as_str()).collect();
    let mut by_id: BTreeMap<&str, &Prediction> = BTreeMap::new();
    for p in preds {
        if !gold_ids.contains(p.qa_id.as_str()) {
            return Err(EvalError::UnknownRecord(p.qa_id.clone()));
        }
        if by_id.insert(p.qa_id.as_str(), p).is_some() {
            return Err(EvalError::DuplicatePrediction(p.qa_id.clone()));
        }
    }
    let empty = Prediction::default();
    let mut overall = Accumulator::default();
    let mut groups: [BTreeMap<String, Accumulator>; 3] = Default::default();
    let mut examples = Vec::with_capacity(golds.len());
    for gold in golds {
        let pred = by_id.get(gold.qa_id.as_str()).copied().unwrap_or(&empty);
        let e = score_example(pred, gold, k);
        overall.add(&e);
        let keys = [gold.answer_type.to_string(), gold.reasoning_type.to_string(), gold.numerical_op.to_string()];
        for (g, key) in groups.iter_mut().zip(keys) {
            g.entry(key).or_default().add(&e);
        }
        examples.push(e);
    }
    let finish = |g: &BTreeMap<String, Accumulator>| g.iter().map(|(k, a)| (k.clone(), a.finish())).collect();
    Ok(MetricsReport {
        k,
        overall: overall.finish(),
        by_answer_type: finish(&groups[0]),
        by_reasoning_type: finish(&groups[1]),
        by_numerical_op: finish(&groups[2]),
        examples,
    })
}
