//! Greedy decoding and interpretation of decoded sequences.

use deckqa::calc;
use deckqa::textproc::{detokenize, token_page, Vocab, BOS, EOS, IND_ANSWER, IND_EVIDENCE, IND_EXPRESSION};
use deckqa_numerics::Graph;
use serde::{Deserialize, Serialize};

use crate::network::{MemorySpan, Model};
use crate::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputKind {
    Answer,
    Expression,
    EvidencePages,
    /// No known indicator leads the sequence.
    Malformed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodedOutput {
    /// Generated ids, without BOS and EOS.
    pub tokens: Vec<u32>,
    pub kind: OutputKind,
    /// Detokenized text after the indicator; empty for evidence and malformed output.
    pub payload: String,
    /// Page numbers for evidence output, in generated order without repeats.
    pub pages: Vec<u32>,
}

fn strip_eos(tokens: &[u32]) -> &[u32] {
    let end = tokens.iter().position(|&t| t == EOS).unwrap_or(tokens.len());
    let start = usize::from(tokens.first() == Some(&BOS));
    &tokens[start.min(end)..end]
}

fn pages_of(tokens: &[u32]) -> Vec<u32> {
    let mut pages = Vec::new();
    for p in tokens.iter().filter_map(|&t| token_page(t)) {
        if !pages.contains(&p) {
            pages.push(p);
        }
    }
    pages
}

/// Classifies a decoded sequence by its leading indicator.
pub fn parse_output(tokens: &[u32], vocab: &Vocab) -> DecodedOutput {
    let body = strip_eos(tokens);
    let (kind, payload, pages) = match body.first() {
        Some(&IND_ANSWER) => (OutputKind::Answer, detokenize(&body[1..], vocab), Vec::new()),
        Some(&IND_EXPRESSION) => (OutputKind::Expression, detokenize(&body[1..], vocab), Vec::new()),
        Some(&IND_EVIDENCE) => (OutputKind::EvidencePages, String::new(), pages_of(&body[1..])),
        _ => (OutputKind::Malformed, String::new(), Vec::new()),
    };
    DecodedOutput { tokens: body.to_vec(), kind, payload, pages }
}

/// Final answer string and whether it is degraded. Expressions go through
/// the calculator; one that fails to evaluate is returned verbatim.
pub fn postprocess(out: &DecodedOutput) -> (String, bool) {
    match out.kind {
        OutputKind::Answer => (out.payload.clone(), false),
        OutputKind::Expression => match calc::calculate(&out.payload) {
            Ok(v) => (v, false),
            Err(_) => (out.payload.clone(), true),
        },
        OutputKind::EvidencePages | OutputKind::Malformed => (out.payload.clone(), true),
    }
}

/// Splits a chained `Evidence pages: ... Answer: ...` sequence. The answer
/// part is malformed (empty payload) when no answer indicator follows.
pub fn chain_split(tokens: &[u32], vocab: &Vocab) -> (Vec<u32>, DecodedOutput) {
    let body = strip_eos(tokens);
    let start = usize::from(body.first() == Some(&IND_EVIDENCE));
    let cut = body[start..]
        .iter()
        .position(|&t| t == IND_ANSWER || t == IND_EXPRESSION)
        .map(|i| i + start);
    match cut {
        Some(c) => (pages_of(&body[start..c]), parse_output(&body[c..], vocab)),
        None => (
            pages_of(&body[start..]),
            DecodedOutput { tokens: Vec::new(), kind: OutputKind::Malformed, payload: String::new(), pages: Vec::new() },
        ),
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding for each memory span of `memory_rows` (a packed encoder
/// output). Returns the generated ids per span, without BOS, ending with EOS
/// unless `target_max` was reached.
pub fn greedy_decode(
    model: &Model,
    g: &mut Graph,
    memory: deckqa_numerics::Var,
    spans: &[MemorySpan],
) -> Result<Vec<Vec<u32>>, ModelError> {
    if !model.config.has_decoder() {
        return Err(ModelError::Unsupported("model has no decoder".into()));
    }
    let kv = model.memory_kv(g, memory)?;
    let mut outputs: Vec<Vec<u32>> = vec![Vec::new(); spans.len()];
    let mut active: Vec<usize> = (0..spans.len()).collect();
    let max = model.config.target_max;
    while !active.is_empty() {
        let inputs: Vec<Vec<u32>> =
            active.iter().map(|&i| std::iter::once(BOS).chain(outputs[i].iter().copied()).collect()).collect();
        let pairs: Vec<(&[u32], MemorySpan)> =
            active.iter().zip(&inputs).map(|(&i, inp)| (inp.as_slice(), spans[i])).collect();
        let states = model.decode_states(g, &kv, &pairs)?;
        let mut last = Vec::with_capacity(inputs.len());
        let mut at = 0;
        for inp in &inputs {
            at += inp.len();
            last.push(at - 1);
        }
        let last_states = g.select_rows(states, &last)?;
        let logits = model.logits(g, last_states)?;
        let values = g.value(logits);
        let mut still = Vec::with_capacity(active.len());
        for (r, &i) in active.iter().enumerate() {
            let next = argmax(values.row(r)) as u32;
            outputs[i].push(next);
            if next != EOS && outputs[i].len() < max {
                still.push(i);
            }
        }
        active = still;
    }
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use deckqa::textproc::page_token;

    fn vocab() -> Vocab {
        Vocab::with_words(["30", "28", "-", "42"].map(String::from))
    }

    #[test]
    fn expression_payload_and_calculator() {
        let v = vocab();
        let ids = [IND_EXPRESSION, v.id("30"), v.id("-"), v.id("28"), EOS];
        let out = parse_output(&ids, &v);
        assert_eq!(out.kind, OutputKind::Expression);
        assert_eq!(out.payload, "30 - 28");
        assert_eq!(postprocess(&out), ("2".to_string(), false));
    }

    #[test]
    fn malformed_expression_degrades() {
        let v = vocab();
        let out = parse_output(&[IND_EXPRESSION, v.id("30"), v.id("-"), EOS], &v);
        assert_eq!(postprocess(&out), ("30 -".to_string(), true));
    }

    #[test]
    fn evidence_and_chain() {
        let v = vocab();
        let p = |n| page_token(n).unwrap();
        let out = parse_output(&[IND_EVIDENCE, p(3), p(7), EOS], &v);
        assert_eq!(out.kind, OutputKind::EvidencePages);
        assert_eq!(out.pages, vec![3, 7]);

        let (pages, ans) = chain_split(&[IND_EVIDENCE, p(2), IND_ANSWER, v.id("42"), EOS], &v);
        assert_eq!(pages, vec![2]);
        assert_eq!(ans.payload, "42");
        let (pages, ans) = chain_split(&[IND_EVIDENCE, p(2), EOS], &v);
        assert_eq!(pages, vec![2]);
        assert_eq!(ans.kind, OutputKind::Malformed);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.5, 0.9, 0.9, 0.1]), 1);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
    }
}
