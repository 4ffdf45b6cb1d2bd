//! Corpus directories: `{train,dev,test}.jsonl`, `stats.json`, `vocab.txt`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use deckqa::corpus::{
    generate_corpus, read_jsonl, to_jsonl, validate_corpus, Corpus, DeckBundle, GeneratorConfig, QaRecord, SlideDeck,
    Split,
};
use deckqa::textproc::{build_input_sequence, build_vocab, SequenceOptions, TaskPrefix, Vocab};
use deckqa_model::ModelConfig;
use serde::Serialize;

use crate::error::CliError;

pub const VOCAB_FILE: &str = "vocab.txt";
pub const STATS_FILE: &str = "stats.json";

pub fn split_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.jsonl", split.name()))
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SplitStats {
    pub decks: usize,
    pub pages: usize,
    pub questions: usize,
    pub by_reasoning_type: BTreeMap<String, usize>,
    pub by_answer_type: BTreeMap<String, usize>,
    pub by_numerical_op: BTreeMap<String, usize>,
    /// Question-page sequences cut at the model's `max_len`.
    pub truncated_sequences: usize,
    pub violations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CorpusStats {
    pub generator: GeneratorConfig,
    pub vocab_size: usize,
    pub splits: BTreeMap<String, SplitStats>,
}

fn split_stats(bundles: &[DeckBundle], vocab: &Vocab, model: &ModelConfig) -> SplitStats {
    let mut s = SplitStats { decks: bundles.len(), ..SplitStats::default() };
    let options = SequenceOptions { max_len: model.max_len, bins: model.bins };
    let decks: BTreeMap<String, SlideDeck> = bundles.iter().map(|b| (b.deck.deck_id.clone(), b.deck.clone())).collect();
    let records: Vec<QaRecord> = bundles.iter().flat_map(|b| b.records.iter().cloned()).collect();
    for b in bundles {
        s.pages += b.deck.slides.len();
        for r in &b.records {
            s.questions += 1;
            *s.by_reasoning_type.entry(r.reasoning_type.to_string()).or_default() += 1;
            *s.by_answer_type.entry(r.answer_type.to_string()).or_default() += 1;
            *s.by_numerical_op.entry(r.numerical_op.to_string()).or_default() += 1;
            s.truncated_sequences += b
                .deck
                .slides
                .iter()
                .filter(|slide| build_input_sequence(TaskPrefix::QuestionAnswering, &r.question, slide, vocab, options).truncated)
                .count();
        }
    }
    s.violations = validate_corpus(&records, &decks).violations.len();
    s
}

/// Generates a corpus and writes it to `dir`. The vocabulary comes from the
/// training split only.
pub fn write_corpus(cfg: &GeneratorConfig, model: &ModelConfig, dir: &Path) -> Result<CorpusStats, CliError> {
    let corpus = generate_corpus(cfg)?;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let vocab = build_vocab(corpus.split(Split::Train), 1);
    let mut splits = BTreeMap::new();
    for split in Split::ALL {
        let bundles = corpus.split(split);
        let path = split_path(dir, split);
        fs::write(&path, to_jsonl(bundles)).map_err(|e| CliError::io(&path, e))?;
        splits.insert(split.name().to_string(), split_stats(bundles, &vocab, model));
    }
    let path = dir.join(VOCAB_FILE);
    fs::write(&path, vocab.to_text()).map_err(|e| CliError::io(&path, e))?;
    let stats = CorpusStats { generator: cfg.clone(), vocab_size: vocab.len(), splits };
    let path = dir.join(STATS_FILE);
    let mut text = serde_json::to_string_pretty(&stats).expect("stats serialize");
    text.push('\n');
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(stats)
}

pub fn read_bundles(path: &Path) -> Result<Vec<DeckBundle>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    read_jsonl(&text).map_err(|e| CliError::Malformed(format!("{}: {e}", path.display())))
}

pub fn read_vocab(dir: &Path) -> Result<Vocab, CliError> {
    let path = dir.join(VOCAB_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    Vocab::from_text(&text).map_err(|e| CliError::Malformed(format!("{}: {e}", path.display())))
}

pub fn read_corpus(dir: &Path) -> Result<Corpus, CliError> {
    let mut corpus = Corpus::default();
    for split in Split::ALL {
        *corpus.split_mut(split) = read_bundles(&split_path(dir, split))?;
    }
    Ok(corpus)
}

pub fn parse_split(name: &str) -> Result<Split, CliError> {
    Split::ALL
        .into_iter()
        .find(|s| s.name() == name)
        .ok_or_else(|| CliError::Config(format!("unknown split {name:?}")))
}

pub fn records(bundles: &[DeckBundle]) -> Vec<QaRecord> {
    bundles.iter().flat_map(|b| b.records.iter().cloned()).collect()
}

pub fn decks(bundles: &[DeckBundle]) -> BTreeMap<String, SlideDeck> {
    bundles.iter().map(|b| (b.deck.deck_id.clone(), b.deck.clone())).collect()
}
