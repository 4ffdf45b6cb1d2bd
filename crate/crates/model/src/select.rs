//! Turning page scores into evidence sets.

use std::collections::BTreeSet;

use deckqa::eval::evidence_em_f1;
use deckqa::retrieve::top_k;

/// Pages whose probability is strictly above `threshold`.
pub fn select_above(probs: &[(u32, f64)], threshold: f64) -> BTreeSet<u32> {
    probs.iter().filter(|(_, p)| *p > threshold).map(|(page, _)| *page).collect()
}

/// The `k` best pages by score; ties go to the lower page number.
pub fn top_k_pages(scores: &[(u32, f64)], k: usize) -> Vec<u32> {
    top_k(scores, k)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Threshold maximizing mean evidence F1 over `examples` (page
/// probabilities, gold set). Candidates are a 0.05 grid; the smallest
/// best-scoring candidate wins.
pub fn tune_threshold(examples: &[(Vec<(u32, f64)>, BTreeSet<u32>)]) -> f64 {
    let mut best = (f64::NEG_INFINITY, 0.5);
    for step in 1..20 {
        let tau = step as f64 * 0.05;
        let f1: f64 = examples.iter().map(|(probs, gold)| evidence_em_f1(&select_above(probs, tau), gold).f1).sum();
        if f1 > best.0 {
            best = (f1, tau);
        }
    }
    best.1
}
