use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::generate::DeckBundle;
use super::{QaRecord, SlideDeck};

/// One line of a corpus file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CorpusLine {
    Deck(SlideDeck),
    Qa(QaRecord),
}

/// Serializes with keys sorted at every level (serde_json's default map is
/// ordered), one object per LF-terminated line.
pub fn to_jsonl(bundles: &[DeckBundle]) -> String {
    let mut out = String::new();
    let mut push = |line: CorpusLine| {
        let value = serde_json::to_value(&line).expect("corpus types serialize");
        out.push_str(&serde_json::to_string(&value).expect("values serialize"));
        out.push('\n');
    };
    for b in bundles {
        push(CorpusLine::Deck(b.deck.clone()));
        for r in &b.records {
            push(CorpusLine::Qa(r.clone()));
        }
    }
    out
}

pub fn write_jsonl(path: &Path, bundles: &[DeckBundle]) -> io::Result<()> {
    fs::write(path, to_jsonl(bundles))
}

/// Parses a corpus file back into bundles. A qa line attaches to the deck
/// with its `deck_id`, which must precede it.
pub fn read_jsonl(text: &str) -> Result<Vec<DeckBundle>, String> {
    let mut bundles: Vec<DeckBundle> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CorpusLine =
            serde_json::from_str(line).map_err(|e| format!("line {}: {e}", n + 1))?;
        match parsed {
            CorpusLine::Deck(deck) => bundles.push(DeckBundle { deck, records: Vec::new() }),
            CorpusLine::Qa(r) => {
                let bundle = bundles
                    .iter_mut()
                    .rev()
                    .find(|b| b.deck.deck_id == r.deck_id)
                    .ok_or_else(|| format!("line {}: qa record for unknown deck {}", n + 1, r.deck_id))?;
                bundle.records.push(r);
            }
        }
    }
    Ok(bundles)
}
