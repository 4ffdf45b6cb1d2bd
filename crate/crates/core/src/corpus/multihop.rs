use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::Rng;

use super::{CorpusError, QaRecord, ReasoningType, SlideDeck};

/// A slide statement that singles out one entity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bridge {
    pub entity: String,
    pub page: u32,
    /// Referring phrase that can stand in for the entity name.
    pub phrase: String,
}

const RELATIONS: [(&str, &str); 3] = [("founded", "in"), ("headquartered", "in"), ("led", "by")];

/// Every `<entity> <relation> <value>` statement whose (relation, value)
/// pair belongs to exactly one entity across the whole deck.
pub fn find_bridges(deck: &SlideDeck) -> Vec<Bridge> {
    let mut statements: Vec<(String, u32, String)> = Vec::new();
    let mut subjects: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for slide in &deck.slides {
        for region in &slide.regions {
            let words: Vec<&str> = region.words().collect();
            for w in words.windows(4) {
                if RELATIONS.iter().any(|&(rel, prep)| w[1] == rel && w[2] == prep) {
                    let property = format!("{} {} {}", w[1], w[2], w[3]);
                    subjects.entry(property.clone()).or_default().insert(w[0].to_string());
                    statements.push((w[0].to_string(), slide.page_number, property));
                }
            }
        }
    }
    statements
        .into_iter()
        .filter(|(_, _, property)| subjects[property].len() == 1)
        .map(|(entity, page, property)| Bridge { entity, page, phrase: format!("the company {property}") })
        .collect()
}

/// Byte offsets of whole-word occurrences of `word` in `text`.
fn occurrences(text: &str, word: &str) -> Vec<usize> {
    let bytes = text.as_bytes();
    text.match_indices(word)
        .map(|(i, _)| i)
        .filter(|&i| {
            let before = i == 0 || !(bytes[i - 1] as char).is_alphanumeric();
            let end = i + word.len();
            let after = end == bytes.len() || !(bytes[end] as char).is_alphanumeric();
            before && after
        })
        .collect()
}

/// Replaces one or two entity mentions of a single-hop question with
/// referring phrases found on other slides.
pub fn edit_to_multi_hop<R: Rng + ?Sized>(
    deck: &SlideDeck,
    single: &QaRecord,
    rng: &mut R,
) -> Result<QaRecord, CorpusError> {
    if single.reasoning_type != ReasoningType::SingleHop {
        return Err(CorpusError::NotSingleHop);
    }
    let bridges = find_bridges(deck);
    let mut by_entity: BTreeMap<&str, Vec<&Bridge>> = BTreeMap::new();
    for b in &bridges {
        if !single.evidence_pages.contains(&b.page)
            && occurrences(&single.question, &b.entity).len() == 1
            && !single.answer.contains(b.entity.as_str())
        {
            by_entity.entry(b.entity.as_str()).or_default().push(b);
        }
    }
    if by_entity.is_empty() {
        return Err(CorpusError::NoBridgeFound);
    }
    let entities: Vec<&str> = by_entity.keys().copied().collect();
    let count = if entities.len() >= 2 && rng.random_bool(0.5) { 2 } else { 1 };
    let chosen: Vec<&str> = entities.choose_multiple(rng, count).copied().collect();

    let mut edits: Vec<(usize, &str, &Bridge)> = chosen
        .iter()
        .map(|e| {
            let bridge = *by_entity[e].choose(rng).expect("non-empty");
            (occurrences(&single.question, e)[0], *e, bridge)
        })
        .collect();
    // apply right to left so earlier offsets stay valid
    edits.sort_by(|a, b| b.0.cmp(&a.0));
    let mut question = single.question.clone();
    let mut evidence = single.evidence_pages.clone();
    for (offset, entity, bridge) in edits {
        question.replace_range(offset..offset + entity.len(), &bridge.phrase);
        evidence.insert(bridge.page);
    }
    Ok(QaRecord {
        question,
        evidence_pages: evidence,
        reasoning_type: ReasoningType::MultiHop,
        ..single.clone()
    })
}
