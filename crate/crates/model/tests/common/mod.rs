#![allow(dead_code)]

use deckqa::corpus::{generate_corpus, DeckBundle, GeneratorConfig, Split};
use deckqa::textproc::{build_vocab, Vocab};
use deckqa_model::batch::{build_instances, Instance, Recipe};
use deckqa_model::{ModelConfig, SelectorKind};

pub fn corpus(num_decks: usize, pages: usize) -> Vec<DeckBundle> {
    let cfg = GeneratorConfig { num_decks, pages_per_deck: pages, ..GeneratorConfig::default() };
    let c = generate_corpus(&cfg).unwrap();
    let mut all = c.split(Split::Train).to_vec();
    all.extend_from_slice(c.split(Split::Dev));
    all.extend_from_slice(c.split(Split::Test));
    all
}

pub fn vocab(bundles: &[DeckBundle]) -> Vocab {
    build_vocab(bundles, 1)
}

pub fn small_config(vocab: &Vocab, selector: SelectorKind) -> ModelConfig {
    ModelConfig { d_model: 32, heads: 2, d_ff: 64, vocab_size: vocab.len(), selector, ..ModelConfig::default() }
}

pub fn instances(recipe: Recipe, bundles: &[DeckBundle], vocab: &Vocab, config: &ModelConfig) -> Vec<Instance> {
    let mut out = Vec::new();
    let mut index = 0;
    for b in bundles {
        for r in &b.records {
            out.extend(build_instances(recipe, index, &b.deck, r, vocab, config).unwrap());
            index += 1;
        }
    }
    out
}
