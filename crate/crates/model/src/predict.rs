//! Inference for every method: answers, evidence sets and page rankings.

use std::collections::BTreeSet;

use deckqa::corpus::{QaRecord, SlideDeck};
use deckqa::eval::Prediction;
use deckqa::retrieve::{rank_pages, Bm25Params};
use deckqa::textproc::{InputSequence, TaskPrefix, Vocab};
use deckqa_numerics::Graph;

use crate::batch::{encode_inputs, READER_PAGES};
use crate::config::SelectorKind;
use crate::decode::{chain_split, greedy_decode, parse_output, postprocess, DecodedOutput, OutputKind};
use crate::network::{MemorySpan, Model};
use crate::select::{select_above, sigmoid, top_k_pages};
use crate::{Method, ModelError};

/// One question about one deck.
#[derive(Clone, Copy, Debug)]
pub struct Query<'a> {
    pub qa_id: &'a str,
    pub deck: &'a SlideDeck,
    pub question: &'a str,
}

impl<'a> Query<'a> {
    pub fn from_record(record: &'a QaRecord, deck: &'a SlideDeck) -> Self {
        Self { qa_id: &record.qa_id, deck, question: &record.question }
    }
}

/// Encodes groups of page sequences in one packed pass; decodes each group
/// when `decode` is set and scores its pages when the model has a selector.
/// Returns `(decoded ids, page logits)` per group.
pub fn run_groups(
    model: &Model,
    groups: &[Vec<InputSequence>],
    decode: bool,
) -> Result<(Vec<Vec<u32>>, Vec<Vec<f64>>), ModelError> {
    let mut g = Graph::new(&model.store);
    let seqs: Vec<&InputSequence> = groups.iter().flatten().collect();
    let encoded = model.encode(&mut g, &seqs)?;
    let mut spans = Vec::with_capacity(groups.len());
    let mut first_rows = Vec::with_capacity(seqs.len());
    let mut row = 0;
    for group in groups {
        let start = row;
        for s in group {
            first_rows.push(row);
            row += s.len;
        }
        spans.push(MemorySpan { start, len: row - start });
    }
    let decoded = if decode { greedy_decode(model, &mut g, encoded, &spans)? } else { Vec::new() };
    let mut logits = Vec::new();
    if model.config.selector != SelectorKind::None {
        let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
        let l = model.page_logits(&mut g, encoded, &first_rows, &sizes)?;
        let values = g.value(l).data();
        let mut at = 0;
        for n in sizes {
            logits.push(values[at..at + n].iter().map(|&v| v as f64).collect());
            at += n;
        }
    }
    Ok((decoded, logits))
}

/// Page probabilities from a model with a selector head, one list per query.
pub fn page_probabilities(model: &Model, vocab: &Vocab, queries: &[Query], chunk: usize) -> Result<Vec<Vec<(u32, f64)>>, ModelError> {
    let task = match model.config.selector {
        SelectorKind::Hierarchical => TaskPrefix::EvidenceSelection,
        SelectorKind::Binary => TaskPrefix::QuestionAnswering,
        SelectorKind::None => return Err(ModelError::Unsupported("model has no selector head".into())),
    };
    let mut out = Vec::with_capacity(queries.len());
    for part in queries.chunks(chunk.max(1)) {
        let groups = part
            .iter()
            .map(|q| encode_inputs(task, q.question, q.deck, None, vocab, &model.config))
            .collect::<Result<Vec<_>, _>>()?;
        let (_, logits) = run_groups(model, &groups, false)?;
        for (group, l) in groups.iter().zip(logits) {
            out.push(group.iter().zip(l).map(|(s, x)| (s.page_number, sigmoid(x))).collect());
        }
    }
    Ok(out)
}

pub struct Predictor<'a> {
    pub method: Method,
    /// The answering model (the reader for pipelines).
    pub model: &'a Model,
    pub vocab: &'a Vocab,
    /// Probability threshold for selector heads.
    pub threshold: f64,
    /// Page classifier and its threshold, for `pipeline-hier`.
    pub selector: Option<(&'a Model, f64)>,
    /// Queries per packed inference pass.
    pub chunk: usize,
}

impl<'a> Predictor<'a> {
    pub fn new(method: Method, model: &'a Model, vocab: &'a Vocab) -> Self {
        Self { method, model, vocab, threshold: 0.5, selector: None, chunk: 16 }
    }

    fn answer_prediction(&self, qa_id: &str, out: &DecodedOutput) -> Prediction {
        let (answer, degraded) = postprocess(out);
        Prediction {
            qa_id: qa_id.to_string(),
            answer,
            degraded,
            expression: (out.kind == OutputKind::Expression).then(|| out.payload.clone()),
            ..Prediction::default()
        }
    }

    fn qa_inputs(&self, q: &Query, pages: Option<&[u32]>) -> Result<Vec<InputSequence>, ModelError> {
        encode_inputs(TaskPrefix::QuestionAnswering, q.question, q.deck, pages, self.vocab, &self.model.config)
    }

    fn predict_chunk(&self, part: &[Query]) -> Result<Vec<Prediction>, ModelError> {
        let mut preds = Vec::with_capacity(part.len());
        match self.method {
            Method::M3d | Method::M3dNoAe => {
                let mut groups = Vec::with_capacity(part.len() * 2);
                for q in part {
                    groups.push(self.qa_inputs(q, None)?);
                    groups.push(encode_inputs(TaskPrefix::EvidenceSelection, q.question, q.deck, None, self.vocab, &self.model.config)?);
                }
                let (decoded, _) = run_groups(self.model, &groups, true)?;
                for (q, pair) in part.iter().zip(decoded.chunks(2)) {
                    let mut p = self.answer_prediction(q.qa_id, &parse_output(&pair[0], self.vocab));
                    let ev = parse_output(&pair[1], self.vocab);
                    p.evidence_pages = ev.pages.into_iter().collect();
                    preds.push(p);
                }
            }
            Method::Chaingen => {
                let groups = part.iter().map(|q| self.qa_inputs(q, None)).collect::<Result<Vec<_>, _>>()?;
                let (decoded, _) = run_groups(self.model, &groups, true)?;
                for (q, ids) in part.iter().zip(&decoded) {
                    let (pages, out) = chain_split(ids, self.vocab);
                    let mut p = self.answer_prediction(q.qa_id, &out);
                    p.evidence_pages = pages.into_iter().collect();
                    preds.push(p);
                }
            }
            Method::Binaryclass => {
                let groups = part.iter().map(|q| self.qa_inputs(q, None)).collect::<Result<Vec<_>, _>>()?;
                let (decoded, logits) = run_groups(self.model, &groups, true)?;
                for ((q, ids), (group, l)) in part.iter().zip(&decoded).zip(groups.iter().zip(&logits)) {
                    let probs: Vec<(u32, f64)> = group.iter().zip(l).map(|(s, &x)| (s.page_number, sigmoid(x))).collect();
                    let mut p = self.answer_prediction(q.qa_id, &parse_output(ids, self.vocab));
                    p.evidence_pages = select_above(&probs, self.threshold);
                    p.ranked_pages = Some(top_k_pages(&probs, probs.len()));
                    preds.push(p);
                }
            }
            Method::PipelineBm25 | Method::PipelineHier => {
                let mut evidence: Vec<BTreeSet<u32>> = Vec::with_capacity(part.len());
                let mut ranked: Vec<Vec<u32>> = Vec::with_capacity(part.len());
                if self.method == Method::PipelineBm25 {
                    for q in part {
                        let r = top_k_pages(&rank_pages(q.deck, q.question, Bm25Params::default()), q.deck.slides.len());
                        evidence.push(r.iter().take(1).copied().collect());
                        ranked.push(r);
                    }
                } else {
                    let (selector, tau) = self
                        .selector
                        .ok_or_else(|| ModelError::Unsupported("pipeline-hier needs a selector model".into()))?;
                    for probs in page_probabilities(selector, self.vocab, part, part.len())? {
                        evidence.push(select_above(&probs, tau));
                        ranked.push(top_k_pages(&probs, probs.len()));
                    }
                }
                let mut groups = Vec::with_capacity(part.len());
                for (q, r) in part.iter().zip(&ranked) {
                    let mut pages: Vec<u32> = r.iter().take(READER_PAGES).copied().collect();
                    pages.sort_unstable();
                    groups.push(self.qa_inputs(q, Some(&pages))?);
                }
                let (decoded, _) = run_groups(self.model, &groups, true)?;
                for (((q, ids), ev), r) in part.iter().zip(&decoded).zip(evidence).zip(ranked) {
                    let mut p = self.answer_prediction(q.qa_id, &parse_output(ids, self.vocab));
                    p.evidence_pages = ev;
                    p.ranked_pages = Some(r);
                    preds.push(p);
                }
            }
        }
        Ok(preds)
    }

    pub fn predict(&self, queries: &[Query]) -> Result<Vec<Prediction>, ModelError> {
        let mut out = Vec::with_capacity(queries.len());
        for part in queries.chunks(self.chunk.max(1)) {
            out.extend(self.predict_chunk(part)?);
        }
        Ok(out)
    }
}

/// Predictions for records whose decks are looked up by id.
pub fn predict_records(
    predictor: &Predictor,
    records: &[QaRecord],
    decks: &std::collections::BTreeMap<String, SlideDeck>,
) -> Result<Vec<Prediction>, ModelError> {
    let queries = records
        .iter()
        .map(|r| {
            decks
                .get(&r.deck_id)
                .map(|d| Query::from_record(r, d))
                .ok_or_else(|| ModelError::Unsupported(format!("deck {} not found", r.deck_id)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    predictor.predict(&queries)
}
