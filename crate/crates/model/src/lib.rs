//! Multi-page encoder-decoder for slide-deck question answering.
//!
//! Each page is serialized with its task prefix and question, encoded on its
//! own, and the page encodings are concatenated as the decoder memory. One
//! decoder produces either an answer (`Answer: ...`), an arithmetic
//! expression (`Expression: ...`) or the evidence list (`Evidence pages:
//! ...`) depending on the task prefix.

pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod decode;
pub mod network;
pub mod predict;
pub mod select;
pub mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batch::{build_instances, Instance, Recipe, Role, TargetStyle};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use config::{ModelConfig, SelectorKind};
pub use decode::{chain_split, greedy_decode, parse_output, postprocess, DecodedOutput, OutputKind};
pub use network::{MemorySpan, Model};
pub use predict::{page_probabilities, predict_records, Predictor, Query};
pub use select::{select_above, tune_threshold, top_k_pages};
pub use train::{batch_loss, training_step, LossParts, TrainConfig, TrainReport, Trainer};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config field {field}: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Numerics(#[from] deckqa_numerics::NumericsError),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("deck {deck} has {pages} pages, model allows {max}")]
    TooManyPages { deck: String, pages: usize, max: usize },
    #[error("gold target of {len} tokens exceeds target_max {max}")]
    TargetTooLong { len: usize, max: usize },
    #[error("{0}")]
    Unsupported(String),
}

/// End-to-end systems that can be trained and evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Shared decoder; answers arithmetic questions with expressions.
    M3d,
    /// Same model, but arithmetic answers are generated as plain values.
    M3dNoAe,
    /// BM25 picks pages, a QA model reads the top three.
    PipelineBm25,
    /// A hierarchical page classifier picks pages, a QA model reads the top three.
    PipelineHier,
    /// QA decoder plus a per-page sigmoid head for evidence.
    Binaryclass,
    /// One decoded sequence with evidence pages followed by the answer.
    Chaingen,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::M3d,
        Method::M3dNoAe,
        Method::PipelineBm25,
        Method::PipelineHier,
        Method::Binaryclass,
        Method::Chaingen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::M3d => "m3d",
            Method::M3dNoAe => "m3d-no-ae",
            Method::PipelineBm25 => "pipeline-bm25",
            Method::PipelineHier => "pipeline-hier",
            Method::Binaryclass => "binaryclass",
            Method::Chaingen => "chaingen",
        }
    }

    /// Selector head the main checkpoint for this method carries.
    pub fn selector(self) -> SelectorKind {
        match self {
            Method::Binaryclass => SelectorKind::Binary,
            _ => SelectorKind::None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}
