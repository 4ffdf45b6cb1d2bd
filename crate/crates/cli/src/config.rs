use std::path::{Path, PathBuf};

use deckqa::corpus::GeneratorConfig;
use deckqa_model::{Method, ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Default locations; command-line flags take precedence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub loss_trace: Option<PathBuf>,
}

/// Everything a run depends on. Decks default to 5 slides so that a whole
/// deck fits the model's page budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub method: Method,
    #[serde(deserialize_with = "desk_generator")]
    pub generator: GeneratorConfig,
    pub model: ModelConfig,
    pub optimizer: TrainConfig,
    pub paths: Paths,
}

const DESK_PAGES: usize = 5;

/// Generator section with the desk-scale page count unless one is given.
fn desk_generator<'de, D: serde::Deserializer<'de>>(d: D) -> Result<GeneratorConfig, D::Error> {
    let mut value = serde_json::Value::deserialize(d)?;
    if let Some(map) = value.as_object_mut() {
        map.entry("pages_per_deck").or_insert(DESK_PAGES.into());
    }
    GeneratorConfig::deserialize(value).map_err(serde::de::Error::custom)
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        debug_assert_eq!(model.max_pages, DESK_PAGES);
        Self {
            seed: 7,
            method: Method::M3d,
            generator: GeneratorConfig { pages_per_deck: DESK_PAGES, ..GeneratorConfig::default() },
            model,
            optimizer: TrainConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Model config with the data-dependent fields filled in.
    pub fn resolved_model(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig { vocab_size, selector: self.method.selector(), ..self.model.clone() }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.optimizer.clone() }
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run config serializes")
    }
}
