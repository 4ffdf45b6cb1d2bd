use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{AnswerType, NumericalOp, QaRecord, ReasoningType, SlideDeck};
use crate::calc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    DuplicateQaId,
    UnknownDeck,
    PageOutOfRange,
    EvidenceSize,
    ExpressionPresence,
    ExpressionMismatch,
    SpanMissing,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub qa_id: String,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checked: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

fn contains_run(haystack: &[&str], needle: &[&str]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Re-checks every record invariant against its deck. Never fails; problems
/// are listed in the report.
pub fn validate_corpus(records: &[QaRecord], decks: &BTreeMap<String, SlideDeck>) -> ValidationReport {
    let mut report = ValidationReport { checked: records.len(), violations: Vec::new() };
    let mut seen = BTreeSet::new();
    for r in records {
        let mut flag = |kind, detail: String| {
            report.violations.push(Violation { qa_id: r.qa_id.clone(), kind, detail });
        };
        if !seen.insert(r.qa_id.as_str()) {
            flag(ViolationKind::DuplicateQaId, String::new());
        }

        let n = r.evidence_pages.len();
        let size_ok = match r.reasoning_type {
            ReasoningType::SingleHop => n == 1,
            ReasoningType::MultiHop => n >= 2,
            ReasoningType::Numerical => true,
        };
        if !size_ok {
            flag(ViolationKind::EvidenceSize, format!("{} with {n} evidence pages", r.reasoning_type));
        }

        let is_arith = r.numerical_op == NumericalOp::Arithmetic;
        match (&r.arithmetic_expression, is_arith) {
            (Some(expr), true) => match calc::calculate(expr) {
                Ok(value) if value == r.answer => {}
                Ok(value) => flag(
                    ViolationKind::ExpressionMismatch,
                    format!("{expr:?} evaluates to {value:?}, answer is {:?}", r.answer),
                ),
                Err(e) => flag(ViolationKind::ExpressionMismatch, format!("{expr:?}: {e}")),
            },
            (None, false) => {}
            (Some(_), false) => flag(ViolationKind::ExpressionPresence, "expression without arithmetic op".into()),
            (None, true) => flag(ViolationKind::ExpressionPresence, "arithmetic op without expression".into()),
        }

        let Some(deck) = decks.get(&r.deck_id) else {
            flag(ViolationKind::UnknownDeck, r.deck_id.clone());
            continue;
        };
        let k = deck.slides.len() as u32;
        let mut pages_ok = true;
        for &p in &r.evidence_pages {
            if p == 0 || p > k || deck.page(p).is_none() {
                flag(ViolationKind::PageOutOfRange, format!("page {p} of {k}"));
                pages_ok = false;
            }
        }

        // span presence is only meaningful once the pages exist
        if pages_ok && r.answer_type != AnswerType::NonSpan {
            let pages: Vec<Vec<&str>> = r
                .evidence_pages
                .iter()
                .filter_map(|&p| deck.page(p))
                .map(|s| s.words())
                .collect();
            for part in r.answer_parts() {
                let needle: Vec<&str> = part.split_whitespace().collect();
                if !pages.iter().any(|words| contains_run(words, &needle)) {
                    flag(ViolationKind::SpanMissing, format!("{part:?} not found on evidence pages"));
                }
            }
        }
    }
    report
}
