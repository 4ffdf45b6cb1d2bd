//! Synthetic slide decks and question/answer records.
//!
//! Pages are symbolic: each slide is a list of labelled regions holding
//! OCR-like words with pixel boxes. Numeric facts are planted in
//! Table/Figure/Obj-text regions so every question is answerable from the
//! tokens alone.

mod config;
mod generate;
mod io;
mod multihop;
mod questions;
mod validate;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{GeneratorConfig, Lexicon, Metric, ReasoningMix, SplitRatios};
pub use generate::{generate_corpus, generate_deck, generate_records, split_counts, Corpus, DeckBundle, Split};
pub use io::{read_jsonl, to_jsonl, write_jsonl, CorpusLine};
pub use multihop::{edit_to_multi_hop, find_bridges, Bridge};
pub use questions::{generate_question, generate_single_hop, QuestionKind};
pub use validate::{validate_corpus, ValidationReport, Violation, ViolationKind};

pub const PAGE_WIDTH: u32 = 1024;
pub const PAGE_HEIGHT: u32 = 768;
/// Largest deck size the vocabulary has page tokens for.
pub const MAX_PAGES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RegionCategory {
    Title,
    #[serde(rename = "Page-text")]
    PageText,
    #[serde(rename = "Obj-text")]
    ObjText,
    Caption,
    #[serde(rename = "Other-text")]
    OtherText,
    Diagram,
    Table,
    Image,
    Figure,
}

impl RegionCategory {
    pub const ALL: [RegionCategory; 9] = [
        RegionCategory::Title,
        RegionCategory::PageText,
        RegionCategory::ObjText,
        RegionCategory::Caption,
        RegionCategory::OtherText,
        RegionCategory::Diagram,
        RegionCategory::Table,
        RegionCategory::Image,
        RegionCategory::Figure,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).expect("listed")
    }

    pub fn label(self) -> &'static str {
        match self {
            RegionCategory::Title => "Title",
            RegionCategory::PageText => "Page-text",
            RegionCategory::ObjText => "Obj-text",
            RegionCategory::Caption => "Caption",
            RegionCategory::OtherText => "Other-text",
            RegionCategory::Diagram => "Diagram",
            RegionCategory::Table => "Table",
            RegionCategory::Image => "Image",
            RegionCategory::Figure => "Figure",
        }
    }
}

/// Pixel rectangle `(x0, y0, x1, y1)`, serialized as a 4-element array.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.x0 >= self.x0 && other.y0 >= self.y0 && other.x1 <= self.x1 && other.y1 <= self.y1
    }

    pub fn area(&self) -> u64 {
        (self.x1.saturating_sub(self.x0)) as u64 * (self.y1.saturating_sub(self.y0)) as u64
    }
}

impl From<[u32; 4]> for BBox {
    fn from(a: [u32; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

/// One OCR word with its box.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Word {
    pub word: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub category: RegionCategory,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub tokens: Vec<Word>,
}

impl Region {
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|w| w.word.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slide {
    pub page_number: u32,
    pub width: u32,
    pub height: u32,
    pub regions: Vec<Region>,
}

impl Slide {
    /// All words of the page in reading order.
    pub fn words(&self) -> Vec<&str> {
        self.regions.iter().flat_map(|r| r.words()).collect()
    }

    pub fn title_words(&self) -> Vec<&str> {
        self.regions
            .iter()
            .filter(|r| r.category == RegionCategory::Title)
            .flat_map(|r| r.words())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlideDeck {
    pub deck_id: String,
    pub slides: Vec<Slide>,
    pub topic: String,
}

impl SlideDeck {
    pub fn page(&self, page_number: u32) -> Option<&Slide> {
        self.slides.iter().find(|s| s.page_number == page_number)
    }

    /// A copy restricted to the given pages (kept in the given order), as
    /// consumed by two-stage pipelines.
    pub fn subset(&self, pages: &[u32]) -> SlideDeck {
        SlideDeck {
            deck_id: self.deck_id.clone(),
            topic: self.topic.clone(),
            slides: pages.iter().filter_map(|&p| self.page(p).cloned()).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerType {
    SingleSpan,
    MultiSpan,
    NonSpan,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReasoningType {
    SingleHop,
    MultiHop,
    Numerical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NumericalOp {
    None,
    Arithmetic,
    Counting,
    Comparison,
}

macro_rules! display_via_serde {
    ($($t:ty),*) => {$(
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let v = serde_json::to_value(self).map_err(|_| fmt::Error)?;
                f.write_str(v.as_str().unwrap_or_default())
            }
        }
    )*};
}
display_via_serde!(AnswerType, ReasoningType, NumericalOp, RegionCategory);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub qa_id: String,
    pub deck_id: String,
    pub question: String,
    pub answer: String,
    pub answer_type: AnswerType,
    pub reasoning_type: ReasoningType,
    pub numerical_op: NumericalOp,
    pub evidence_pages: BTreeSet<u32>,
    pub arithmetic_expression: Option<String>,
}

impl QaRecord {
    /// Gold answer spans for multi-span answers (`", "`-joined).
    pub fn answer_parts(&self) -> Vec<&str> {
        match self.answer_type {
            AnswerType::MultiSpan => self.answer.split(", ").collect(),
            _ => vec![self.answer.as_str()],
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("deck {0} has no planted facts")]
    NoFactAvailable(String),
    #[error("no slide uniquely identifies a bridge entity")]
    NoBridgeFound,
    #[error("record is not single-hop")]
    NotSingleHop,
    #[error("invalid generator config: {field}: {message}")]
    Config { field: String, message: String },
    #[error("deck index {index} out of range for {num_decks} decks")]
    DeckIndex { index: usize, num_decks: usize },
}
