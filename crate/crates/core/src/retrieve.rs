//! Okapi BM25 over the pages of one deck.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SlideDeck;
use crate::textproc::split_words;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
#[error("invalid BM25 parameters k1={k1} b={b}")]
pub struct InvalidParams {
    pub k1: f64,
    pub b: f64,
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self, InvalidParams> {
        if k1 >= 0.0 && (0.0..=1.0).contains(&b) {
            Ok(Self { k1, b })
        } else {
            Err(InvalidParams { k1, b })
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    /// term -> (page, term frequency), sorted by page
    pub postings: BTreeMap<String, Vec<(u32, u32)>>,
    /// (page, token count), sorted by page
    pub lengths: Vec<(u32, usize)>,
    pub avg_len: f64,
}

impl InvertedIndex {
    /// Index over pre-tokenized documents keyed by page number.
    pub fn from_documents(docs: &[(u32, Vec<String>)]) -> Self {
        let mut docs: Vec<&(u32, Vec<String>)> = docs.iter().collect();
        docs.sort_by_key(|d| d.0);
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut lengths = Vec::with_capacity(docs.len());
        for (page, tokens) in docs {
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (t, n) in tf {
                postings.entry(t.to_string()).or_default().push((*page, n));
            }
            lengths.push((*page, tokens.len()));
        }
        let total: usize = lengths.iter().map(|l| l.1).sum();
        let avg_len = if lengths.is_empty() { 0.0 } else { total as f64 / lengths.len() as f64 };
        Self { postings, lengths, avg_len }
    }

    pub fn num_pages(&self) -> usize {
        self.lengths.len()
    }

    pub fn tf(&self, term: &str, page: u32) -> u32 {
        self.postings
            .get(term)
            .and_then(|p| p.binary_search_by_key(&page, |e| e.0).ok().map(|i| p[i].1))
            .unwrap_or(0)
    }
}

/// One document per slide: all region words, lowercased and split.
pub fn build_index(deck: &SlideDeck) -> InvertedIndex {
    let docs: Vec<(u32, Vec<String>)> = deck
        .slides
        .iter()
        .map(|s| (s.page_number, s.words().iter().flat_map(|w| split_words(w)).collect()))
        .collect();
    InvertedIndex::from_documents(&docs)
}

pub fn query_terms(question: &str) -> Vec<String> {
    split_words(question)
}

/// BM25 score of every indexed page, in page order. Idf carries a `+1`
/// inside the log so it stays positive.
pub fn score(index: &InvertedIndex, query: &[String], params: Bm25Params) -> Vec<(u32, f64)> {
    let n = index.num_pages() as f64;
    let mut scores: Vec<(u32, f64)> = index.lengths.iter().map(|&(p, _)| (p, 0.0)).collect();
    for term in query {
        let Some(postings) = index.postings.get(term) else { continue };
        let df = postings.len() as f64;
        let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
        for &(page, tf) in postings {
            let i = index.lengths.binary_search_by_key(&page, |l| l.0).expect("posting page is indexed");
            let len = index.lengths[i].1 as f64;
            let tf = tf as f64;
            let norm = params.k1 * (1.0 - params.b + params.b * len / index.avg_len);
            scores[i].1 += idf * tf * (params.k1 + 1.0) / (tf + norm);
        }
    }
    scores
}

/// Pages by descending score; ties go to the lower page number.
pub fn top_k(scores: &[(u32, f64)], k: usize) -> Vec<u32> {
    let mut ranked: Vec<(u32, f64)> = scores.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(k).map(|(p, _)| p).collect()
}

/// Ranks a deck's pages for a question.
pub fn rank_pages(deck: &SlideDeck, question: &str, params: Bm25Params) -> Vec<(u32, f64)> {
    score(&build_index(deck), &query_terms(question), params)
}
