use serde::{Deserialize, Serialize};

use crate::ModelError;

/// Which selector head, if any, sits on top of the encoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectorKind {
    /// Evidence pages are generated by the decoder.
    #[default]
    None,
    /// Per-page sigmoid on the first encoder state, trained next to the QA loss.
    Binary,
    /// Encoder-only model: first states are mixed by a cross-page layer
    /// before the sigmoid head.
    Hierarchical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    /// Blocks per stack.
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub max_pages: usize,
    pub max_len: usize,
    pub target_max: usize,
    pub vocab_size: usize,
    pub bins: u32,
    pub max_segments: usize,
    pub vis_ids: usize,
    pub dropout: f32,
    pub lambda_dec: f32,
    pub lambda_sel: f32,
    /// Std of the embedding tables; linear layers scale by fan-in instead.
    pub init_std: f32,
    pub ln_eps: f32,
    pub selector: SelectorKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            layers: 2,
            heads: 4,
            d_ff: 256,
            max_pages: 5,
            max_len: deckqa::textproc::DEFAULT_MAX_LEN,
            target_max: 50,
            vocab_size: deckqa::textproc::NUM_SPECIAL,
            bins: deckqa::textproc::DEFAULT_BINS,
            max_segments: deckqa::textproc::MAX_SEGMENTS,
            vis_ids: deckqa::textproc::NUM_VIS_IDS,
            dropout: 0.1,
            lambda_dec: 1.0,
            lambda_sel: 1.0,
            init_std: 1.0,
            ln_eps: 1e-5,
            selector: SelectorKind::None,
        }
    }
}

fn invalid(field: &str, message: impl Into<String>) -> ModelError {
    ModelError::Config { field: field.to_string(), message: message.into() }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(invalid("heads", format!("{} heads must divide d_model {}", self.heads, self.d_model)));
        }
        if self.layers == 0 || self.d_ff == 0 {
            return Err(invalid("layers", "layers and d_ff must be positive"));
        }
        if self.max_len == 0 || self.target_max < 2 {
            return Err(invalid("max_len", "max_len must be positive and target_max at least 2"));
        }
        if self.vocab_size < deckqa::textproc::NUM_SPECIAL {
            return Err(invalid("vocab_size", "smaller than the special-token block"));
        }
        if self.bins == 0 || self.max_segments == 0 || self.vis_ids == 0 {
            return Err(invalid("bins", "bins, max_segments and vis_ids must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid("dropout", "must be in [0, 1)"));
        }
        if !(self.init_std > 0.0) {
            return Err(invalid("init_std", "must be positive"));
        }
        Ok(())
    }

    pub fn has_decoder(&self) -> bool {
        self.selector != SelectorKind::Hierarchical
    }
}
