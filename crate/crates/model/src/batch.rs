//! Training and inference instances: encoder inputs for every page of a
//! deck plus the decoder target or page labels the recipe asks for.

use deckqa::corpus::{QaRecord, SlideDeck};
use deckqa::retrieve::{rank_pages, top_k, Bm25Params};
use deckqa::textproc::{
    build_input_sequence, page_token, tokenize, InputSequence, SequenceOptions, TaskPrefix, Vocab, EOS,
    IND_ANSWER, IND_EVIDENCE, IND_EXPRESSION,
};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::{Method, ModelError};

/// How numeric answers are written in the answer target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetStyle {
    /// Arithmetic questions are answered with `Expression: <ae>`.
    Expression,
    /// Every question is answered with `Answer: <value>`.
    PlainAnswer,
}

/// What a training instance is for. Decoder losses are averaged per role.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    /// Answer (or chained evidence + answer) target; counts toward the decoder loss.
    Answer,
    /// `Evidence pages:` target; counts toward the selection loss.
    Evidence,
    /// No decoder target, only per-page labels.
    PagesOnly,
}

#[derive(Clone, Debug)]
pub struct Instance {
    /// Index of the source record in the list the instances were built from.
    pub record: usize,
    pub role: Role,
    pub pages: Vec<InputSequence>,
    /// Decoder target ending in EOS; empty for `PagesOnly`.
    pub target: Vec<u32>,
    /// 1.0 for gold evidence pages, aligned with `pages`; empty when the
    /// recipe has no selector head.
    pub page_labels: Vec<f32>,
}

impl Instance {
    pub fn page_refs(&self) -> Vec<&InputSequence> {
        self.pages.iter().collect()
    }
}

/// What instances a method trains on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recipe {
    /// One answer instance and one evidence instance per question.
    MultiTask(TargetStyle),
    /// One instance whose target lists the evidence pages, then the answer.
    Chain,
    /// One answer instance plus page labels on its encodings.
    BinaryClass,
    /// Answer instance over at most `pages` pages: gold evidence topped up
    /// with the best BM25 distractors.
    Reader { pages: usize },
    /// Evidence-selection encodings with page labels only.
    PageClassifier,
}

pub const READER_PAGES: usize = 3;

impl Recipe {
    pub fn for_method(method: Method) -> Recipe {
        match method {
            Method::M3d => Recipe::MultiTask(TargetStyle::Expression),
            Method::M3dNoAe => Recipe::MultiTask(TargetStyle::PlainAnswer),
            Method::Chaingen => Recipe::Chain,
            Method::Binaryclass => Recipe::BinaryClass,
            Method::PipelineBm25 | Method::PipelineHier => Recipe::Reader { pages: READER_PAGES },
        }
    }

    /// Instances each record contributes.
    pub fn width(self) -> usize {
        match self {
            Recipe::MultiTask(_) => 2,
            _ => 1,
        }
    }
}

fn sequence_options(config: &ModelConfig) -> SequenceOptions {
    SequenceOptions { max_len: config.max_len, bins: config.bins }
}

/// Encoder inputs for the given pages of a deck (all pages when `pages` is `None`).
pub fn encode_inputs(
    task: TaskPrefix,
    question: &str,
    deck: &SlideDeck,
    pages: Option<&[u32]>,
    vocab: &Vocab,
    config: &ModelConfig,
) -> Result<Vec<InputSequence>, ModelError> {
    let slides: Vec<_> = match pages {
        Some(p) => p.iter().filter_map(|&n| deck.page(n)).collect(),
        None => deck.slides.iter().collect(),
    };
    if slides.len() > config.max_pages {
        return Err(ModelError::TooManyPages { deck: deck.deck_id.clone(), pages: slides.len(), max: config.max_pages });
    }
    let options = sequence_options(config);
    Ok(slides.into_iter().map(|s| build_input_sequence(task, question, s, vocab, options)).collect())
}

/// `Answer: ...` or `Expression: ...` without EOS.
pub fn answer_tokens(record: &QaRecord, style: TargetStyle, vocab: &Vocab) -> Vec<u32> {
    match (&record.arithmetic_expression, style) {
        (Some(e), TargetStyle::Expression) => {
            let mut t = vec![IND_EXPRESSION];
            t.extend(tokenize(e, vocab));
            t
        }
        _ => {
            let mut t = vec![IND_ANSWER];
            t.extend(tokenize(&record.answer, vocab));
            t
        }
    }
}

/// `Evidence pages: page_a page_b ...` in ascending order, without EOS.
pub fn evidence_tokens<'a>(pages: impl IntoIterator<Item = &'a u32>) -> Vec<u32> {
    let mut t = vec![IND_EVIDENCE];
    let mut sorted: Vec<u32> = pages.into_iter().copied().collect();
    sorted.sort_unstable();
    t.extend(sorted.into_iter().filter_map(page_token));
    t
}

fn finish(mut t: Vec<u32>, config: &ModelConfig) -> Result<Vec<u32>, ModelError> {
    t.push(EOS);
    if t.len() > config.target_max {
        return Err(ModelError::TargetTooLong { len: t.len(), max: config.target_max });
    }
    Ok(t)
}

fn labels(seqs: &[InputSequence], record: &QaRecord) -> Vec<f32> {
    seqs.iter().map(|s| if record.evidence_pages.contains(&s.page_number) { 1.0 } else { 0.0 }).collect()
}

/// Gold pages first, then BM25's best other pages until `k` are chosen;
/// returned in ascending page order.
pub fn reader_pages(deck: &SlideDeck, record: &QaRecord, k: usize) -> Vec<u32> {
    let mut chosen: Vec<u32> = record.evidence_pages.iter().copied().collect();
    let ranked = top_k(&rank_pages(deck, &record.question, Bm25Params::default()), deck.slides.len());
    for p in ranked {
        if chosen.len() >= k {
            break;
        }
        if !chosen.contains(&p) {
            chosen.push(p);
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Instances of one record under a recipe.
pub fn build_instances(
    recipe: Recipe,
    index: usize,
    deck: &SlideDeck,
    record: &QaRecord,
    vocab: &Vocab,
    config: &ModelConfig,
) -> Result<Vec<Instance>, ModelError> {
    let qa = TaskPrefix::QuestionAnswering;
    let es = TaskPrefix::EvidenceSelection;
    let q = record.question.as_str();
    let one = |role, pages: Vec<InputSequence>, target, page_labels| Instance { record: index, role, pages, target, page_labels };
    Ok(match recipe {
        Recipe::MultiTask(style) => vec![
            one(
                Role::Answer,
                encode_inputs(qa, q, deck, None, vocab, config)?,
                finish(answer_tokens(record, style, vocab), config)?,
                Vec::new(),
            ),
            one(
                Role::Evidence,
                encode_inputs(es, q, deck, None, vocab, config)?,
                finish(evidence_tokens(&record.evidence_pages), config)?,
                Vec::new(),
            ),
        ],
        Recipe::Chain => {
            let mut t = evidence_tokens(&record.evidence_pages);
            t.extend(answer_tokens(record, TargetStyle::Expression, vocab));
            vec![one(Role::Answer, encode_inputs(qa, q, deck, None, vocab, config)?, finish(t, config)?, Vec::new())]
        }
        Recipe::BinaryClass => {
            let pages = encode_inputs(qa, q, deck, None, vocab, config)?;
            let l = labels(&pages, record);
            vec![one(Role::Answer, pages, finish(answer_tokens(record, TargetStyle::Expression, vocab), config)?, l)]
        }
        Recipe::Reader { pages } => {
            let chosen = reader_pages(deck, record, pages);
            let seqs = encode_inputs(qa, q, deck, Some(&chosen), vocab, config)?;
            vec![one(Role::Answer, seqs, finish(answer_tokens(record, TargetStyle::Expression, vocab), config)?, Vec::new())]
        }
        Recipe::PageClassifier => {
            let pages = encode_inputs(es, q, deck, None, vocab, config)?;
            let l = labels(&pages, record);
            vec![one(Role::PagesOnly, pages, Vec::new(), l)]
        }
    })
}
