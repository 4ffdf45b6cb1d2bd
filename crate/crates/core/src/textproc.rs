//! Tokenizer, vocabulary and per-page model input sequences.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{BBox, DeckBundle, RegionCategory, Slide, MAX_PAGES};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const TASK_QA: u32 = 4;
pub const TASK_SELECT: u32 = 5;
pub const MARK_TASK: u32 = 6;
pub const MARK_QUESTION: u32 = 7;
pub const MARK_PAGE: u32 = 8;
pub const MARK_CONTEXT: u32 = 9;
pub const IND_ANSWER: u32 = 10;
pub const IND_EXPRESSION: u32 = 11;
pub const IND_EVIDENCE: u32 = 12;
pub const REGION_BASE: u32 = 13;
pub const PAGE_BASE: u32 = REGION_BASE + 9;
pub const NUM_SPECIAL: usize = PAGE_BASE as usize + MAX_PAGES;

pub const DEFAULT_MAX_LEN: usize = 200;
pub const DEFAULT_BINS: u32 = 100;
/// Region indices above this share the last segment id.
pub const MAX_SEGMENTS: usize = 16;
pub const SIZE_BUCKETS: usize = 4;
/// Rows of the visual table, row 0 included.
pub const NUM_VIS_IDS: usize = 1 + 9 * SIZE_BUCKETS;

fn special_tokens() -> Vec<String> {
    let mut out: Vec<String> = [
        "<pad>",
        "<bos>",
        "<eos>",
        "<unk>",
        "[question_answering]",
        "[evidence_selection]",
        "task:",
        "question:",
        "page:",
        "context:",
        "Answer:",
        "Expression:",
        "Evidence pages:",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    out.extend(RegionCategory::ALL.iter().map(|c| format!("[R_{}]", c.label())));
    out.extend((1..=MAX_PAGES).map(|k| format!("page_{k}")));
    debug_assert_eq!(out.len(), NUM_SPECIAL);
    out
}

pub fn region_token(category: RegionCategory) -> u32 {
    REGION_BASE + category.index() as u32
}

pub fn page_token(page: u32) -> Option<u32> {
    (1..=MAX_PAGES as u32).contains(&page).then(|| PAGE_BASE + page - 1)
}

pub fn token_page(id: u32) -> Option<u32> {
    (PAGE_BASE..PAGE_BASE + MAX_PAGES as u32).contains(&id).then(|| id - PAGE_BASE + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskPrefix {
    QuestionAnswering,
    EvidenceSelection,
}

impl TaskPrefix {
    pub fn token(self) -> u32 {
        match self {
            TaskPrefix::QuestionAnswering => TASK_QA,
            TaskPrefix::EvidenceSelection => TASK_SELECT,
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum TextError {
    #[error("invalid box {0:?}: corners out of order")]
    InvalidBox(BBox),
    #[error("vocab file: {0}")]
    VocabFormat(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: BTreeMap<String, u32>,
}

impl Vocab {
    /// Specials only.
    pub fn base() -> Self {
        Self::from_tokens(special_tokens()).expect("specials are distinct")
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self, TextError> {
        let mut ids = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(TextError::VocabFormat(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, ids })
    }

    /// Specials followed by the given words in lexicographic order.
    pub fn with_words<I: IntoIterator<Item = String>>(words: I) -> Self {
        let specials = special_tokens();
        let reserved: BTreeSet<&String> = specials.iter().collect();
        let words: BTreeSet<String> = words.into_iter().filter(|w| !reserved.contains(w)).collect();
        let mut tokens = specials;
        tokens.extend(words);
        Self::from_tokens(tokens).expect("deduplicated")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or("<unk>", String::as_str)
    }

    /// One token per line; line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TextError> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        let specials = special_tokens();
        if tokens.len() < specials.len() || tokens[..specials.len()] != specials[..] {
            return Err(TextError::VocabFormat("special tokens missing or reordered".into()));
        }
        Self::from_tokens(tokens)
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Lowercased word pieces: alphanumeric runs (decimals such as `0.33` kept
/// whole) and single punctuation characters.
pub fn split_words(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if is_word_char(c) {
            let start = i;
            while i < chars.len() {
                if is_word_char(chars[i]) {
                    i += 1;
                } else if chars[i] == '.'
                    && chars[i - 1].is_ascii_digit()
                    && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())
                    && chars[start..i].iter().all(|d| d.is_ascii_digit())
                {
                    i += 1;
                } else {
                    break;
                }
            }
            out.push(chars[start..i].iter().collect::<String>().to_lowercase());
        } else {
            out.push(c.to_lowercase().collect());
            i += 1;
        }
    }
    out
}

pub fn tokenize(text: &str, vocab: &Vocab) -> Vec<u32> {
    split_words(text).iter().map(|w| vocab.id(w)).collect()
}

/// Space-joined tokens; padding and sequence markers are dropped.
pub fn detokenize(ids: &[u32], vocab: &Vocab) -> String {
    ids.iter()
        .filter(|&&id| !matches!(id, PAD | BOS | EOS))
        .map(|&id| vocab.token(id))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Training-split vocabulary: every word piece seen at least `min_count` times.
pub fn build_vocab(bundles: &[DeckBundle], min_count: usize) -> Vocab {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut add = |text: &str| {
        for w in split_words(text) {
            *counts.entry(w).or_default() += 1;
        }
    };
    for b in bundles {
        for slide in &b.deck.slides {
            for w in slide.words() {
                add(w);
            }
        }
        for r in &b.records {
            add(&r.question);
            add(&r.answer);
            if let Some(e) = &r.arithmetic_expression {
                add(e);
            }
        }
    }
    Vocab::with_words(counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).map(|(w, _)| w))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayoutBox {
    pub x0_bin: u32,
    pub y0_bin: u32,
    pub x1_bin: u32,
    pub y1_bin: u32,
}

fn bin(coord: u32, size: u32, bins: u32) -> u32 {
    let b = (coord as u64 * bins as u64 / size.max(1) as u64) as u32;
    b.min(bins - 1)
}

/// `floor(coord / size * bins)`, clamped to `bins - 1`.
pub fn normalize_and_bin_box(b: BBox, width: u32, height: u32, bins: u32) -> Result<LayoutBox, TextError> {
    if b.x0 > b.x1 || b.y0 > b.y1 {
        return Err(TextError::InvalidBox(b));
    }
    Ok(LayoutBox {
        x0_bin: bin(b.x0, width, bins),
        y0_bin: bin(b.y0, height, bins),
        x1_bin: bin(b.x1, width, bins),
        y1_bin: bin(b.y1, height, bins),
    })
}

/// Appearance id for a region: its category and a coarse area bucket.
pub fn vis_id(category: RegionCategory, b: BBox, width: u32, height: u32) -> u32 {
    let frac = b.area() as f64 / (width as f64 * height as f64).max(1.0);
    let bucket = match frac {
        f if f < 0.05 => 0,
        f if f < 0.15 => 1,
        f if f < 0.35 => 2,
        _ => 3,
    };
    1 + (category.index() * SIZE_BUCKETS + bucket) as u32
}

/// Splits a word piece into sub-word units; each unit keeps the box of the
/// whole OCR word.
pub trait SubwordSplitter {
    fn split(&self, piece: &str) -> Vec<String>;
}

/// The word-level tokenizer: pieces are already units.
#[derive(Clone, Copy, Debug, Default)]
pub struct WordLevel;

impl SubwordSplitter for WordLevel {
    fn split(&self, piece: &str) -> Vec<String> {
        vec![piece.to_string()]
    }
}

/// Cuts pieces longer than `min_len` characters in two.
#[derive(Clone, Copy, Debug)]
pub struct HalvingSplitter {
    pub min_len: usize,
}

impl SubwordSplitter for HalvingSplitter {
    fn split(&self, piece: &str) -> Vec<String> {
        let chars: Vec<char> = piece.chars().collect();
        if chars.len() <= self.min_len {
            return vec![piece.to_string()];
        }
        let mid = chars.len() / 2;
        vec![chars[..mid].iter().collect(), chars[mid..].iter().collect()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SequenceOptions {
    pub max_len: usize,
    pub bins: u32,
}

impl Default for SequenceOptions {
    fn default() -> Self {
        Self { max_len: DEFAULT_MAX_LEN, bins: DEFAULT_BINS }
    }
}

/// The serialized input of one page. Every channel has `max_len` entries;
/// positions from `len` on are padding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSequence {
    pub token_ids: Vec<u32>,
    pub seg_ids: Vec<u32>,
    /// Quantized box per token, stored as `bin + 1`; 0 means no box.
    pub layout: Vec<[u32; 4]>,
    pub vis_ids: Vec<u32>,
    pub len: usize,
    pub page_number: u32,
    pub task: TaskPrefix,
    pub truncated: bool,
}

impl InputSequence {
    pub fn real_tokens(&self) -> &[u32] {
        &self.token_ids[..self.len]
    }
}

pub fn build_input_sequence(
    task: TaskPrefix,
    question: &str,
    slide: &Slide,
    vocab: &Vocab,
    options: SequenceOptions,
) -> InputSequence {
    build_input_sequence_with(task, question, slide, vocab, options, &WordLevel)
}

pub fn build_input_sequence_with(
    task: TaskPrefix,
    question: &str,
    slide: &Slide,
    vocab: &Vocab,
    options: SequenceOptions,
    splitter: &dyn SubwordSplitter,
) -> InputSequence {
    let mut tokens = vec![MARK_TASK, task.token(), MARK_QUESTION];
    tokens.extend(tokenize(question, vocab));
    tokens.push(MARK_PAGE);
    tokens.push(page_token(slide.page_number).unwrap_or(UNK));
    tokens.push(MARK_CONTEXT);
    let prefix = tokens.len();
    let mut seg = vec![0; prefix];
    let mut layout = vec![[0u32; 4]; prefix];
    let mut vis = vec![0; prefix];

    let shifted = |b: BBox| -> [u32; 4] {
        // generator boxes are well formed; a malformed one degrades to no box
        normalize_and_bin_box(b, slide.width, slide.height, options.bins)
            .map(|l| [l.x0_bin + 1, l.y0_bin + 1, l.x1_bin + 1, l.y1_bin + 1])
            .unwrap_or([0; 4])
    };
    for (i, region) in slide.regions.iter().enumerate() {
        let s = (i + 1).min(MAX_SEGMENTS) as u32;
        let v = vis_id(region.category, region.bbox, slide.width, slide.height);
        tokens.push(region_token(region.category));
        seg.push(s);
        layout.push(shifted(region.bbox));
        vis.push(v);
        for w in &region.tokens {
            let lay = shifted(w.bbox);
            for piece in split_words(&w.word) {
                for unit in splitter.split(&piece) {
                    tokens.push(vocab.id(&unit));
                    seg.push(s);
                    layout.push(lay);
                    vis.push(v);
                }
            }
        }
    }

    let truncated = tokens.len() > options.max_len;
    let len = tokens.len().min(options.max_len);
    tokens.resize(options.max_len, PAD);
    seg.resize(options.max_len, 0);
    layout.resize(options.max_len, [0; 4]);
    vis.resize(options.max_len, 0);
    InputSequence {
        token_ids: tokens,
        seg_ids: seg,
        layout,
        vis_ids: vis,
        len,
        page_number: slide.page_number,
        task,
        truncated,
    }
}

impl fmt::Display for TaskPrefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskPrefix::QuestionAnswering => "question_answering",
            TaskPrefix::EvidenceSelection => "evidence_selection",
        })
    }
}
