use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;

use super::multihop::edit_to_multi_hop;
use super::{AnswerType, CorpusError, NumericalOp, QaRecord, ReasoningType, RegionCategory, SlideDeck};
use crate::calc::{self, BinOp, Expr};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QuestionKind {
    SingleHop,
    MultiHop,
    Arithmetic,
    Counting,
    Comparison,
}

/// A planted `(entity, year, value)` triple recovered from a deck.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Fact {
    pub page: u32,
    pub metric: String,
    pub entity: String,
    pub year: String,
    pub value: u32,
    pub text: String,
    /// Word index within the page, for reading order.
    pub position: usize,
}

fn is_fact_region(category: RegionCategory) -> bool {
    matches!(category, RegionCategory::Table | RegionCategory::Figure | RegionCategory::ObjText)
}

fn parse_value(word: &str) -> Option<u32> {
    let digits = word.strip_suffix('%').unwrap_or(word);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Scans metric slides ("<Metric> by Company") for fact triples.
pub(crate) fn extract_facts(deck: &SlideDeck) -> Vec<Fact> {
    let mut facts = Vec::new();
    for slide in &deck.slides {
        let title = slide.title_words();
        let metric = match title.as_slice() {
            [m, "by", "Company"] => m.to_string(),
            _ => continue,
        };
        let mut position = 0;
        for region in &slide.regions {
            let words: Vec<&str> = region.words().collect();
            if is_fact_region(region.category) && words.len() % 3 == 0 {
                for (i, t) in words.chunks(3).enumerate() {
                    let year_ok = t[1].len() == 4 && t[1].bytes().all(|b| b.is_ascii_digit());
                    if let (true, Some(value)) = (year_ok, parse_value(t[2])) {
                        facts.push(Fact {
                            page: slide.page_number,
                            metric: metric.clone(),
                            entity: t[0].to_string(),
                            year: t[1].to_string(),
                            value,
                            text: t[2].to_string(),
                            position: position + 3 * i + 2,
                        });
                    }
                }
            }
            position += words.len();
        }
    }
    facts
}

#[allow(clippy::too_many_arguments)]
fn record(
    deck: &SlideDeck,
    question: String,
    answer: String,
    answer_type: AnswerType,
    reasoning_type: ReasoningType,
    numerical_op: NumericalOp,
    evidence_pages: BTreeSet<u32>,
    arithmetic_expression: Option<String>,
) -> QaRecord {
    QaRecord {
        qa_id: format!("{}-q", deck.deck_id),
        deck_id: deck.deck_id.clone(),
        question,
        answer,
        answer_type,
        reasoning_type,
        numerical_op,
        evidence_pages,
        arithmetic_expression,
    }
}

fn lower(metric: &str) -> String {
    metric.to_lowercase()
}

/// Pairs of facts on the same page and metric satisfying `pred`.
fn pairs<'a>(facts: &'a [Fact], pred: impl Fn(&Fact, &Fact) -> bool) -> Vec<(&'a Fact, &'a Fact)> {
    let mut out = Vec::new();
    for (i, a) in facts.iter().enumerate() {
        for b in &facts[i + 1..] {
            if a.page == b.page && a.metric == b.metric && pred(a, b) {
                out.push((a, b));
            }
        }
    }
    out
}

fn same_year(a: &Fact, b: &Fact) -> bool {
    a.year == b.year && a.entity != b.entity
}

fn same_entity(a: &Fact, b: &Fact) -> bool {
    a.entity == b.entity && a.year != b.year
}

/// Lookup or multi-span question answered from one slide.
pub fn generate_single_hop<R: Rng + ?Sized>(deck: &SlideDeck, rng: &mut R) -> Result<QaRecord, CorpusError> {
    let facts = extract_facts(deck);
    let f = facts.choose(rng).ok_or_else(|| CorpusError::NoFactAvailable(deck.deck_id.clone()))?;
    let m = lower(&f.metric);
    if rng.random_bool(0.6) {
        let question = match rng.random_range(0..3) {
            0 => format!("What was the {m} of {} in {}?", f.entity, f.year),
            1 => format!("In {}, what was the {m} of {}?", f.year, f.entity),
            _ => format!("What {m} did {} report in {}?", f.entity, f.year),
        };
        return Ok(record(
            deck,
            question,
            f.text.clone(),
            AnswerType::SingleSpan,
            ReasoningType::SingleHop,
            NumericalOp::None,
            BTreeSet::from([f.page]),
            None,
        ));
    }
    let by_entity = rng.random_bool(0.5);
    let candidates: Vec<(&Fact, &Fact)> = pairs(&facts, |a, b| {
        (a.page == f.page && a.metric == f.metric)
            && if by_entity { same_entity(a, b) } else { same_year(a, b) }
    });
    let (a, b) = match candidates.choose(rng) {
        Some(&p) => p,
        None => return generate_single_hop_lookup(deck, f),
    };
    let (first, second) = if a.position <= b.position { (a, b) } else { (b, a) };
    let question = if by_entity {
        format!("What were the {m} of {} in {} and {}?", a.entity, first.year, second.year)
    } else {
        format!("What were the {m} of {} and {} in {}?", first.entity, second.entity, a.year)
    };
    Ok(record(
        deck,
        question,
        format!("{}, {}", first.text, second.text),
        AnswerType::MultiSpan,
        ReasoningType::SingleHop,
        NumericalOp::None,
        BTreeSet::from([f.page]),
        None,
    ))
}

fn generate_single_hop_lookup(deck: &SlideDeck, f: &Fact) -> Result<QaRecord, CorpusError> {
    Ok(record(
        deck,
        format!("What was the {} of {} in {}?", lower(&f.metric), f.entity, f.year),
        f.text.clone(),
        AnswerType::SingleSpan,
        ReasoningType::SingleHop,
        NumericalOp::None,
        BTreeSet::from([f.page]),
        None,
    ))
}

fn counting<R: Rng + ?Sized>(deck: &SlideDeck, facts: &[Fact], rng: &mut R) -> QaRecord {
    let metrics: BTreeSet<&str> = facts.iter().map(|f| f.metric.as_str()).collect();
    let metrics: Vec<&str> = metrics.into_iter().collect();
    let metric = *metrics.choose(rng).expect("facts are non-empty");
    let pages: BTreeSet<u32> = deck
        .slides
        .iter()
        .filter(|s| s.title_words().iter().any(|w| w.eq_ignore_ascii_case(metric)))
        .map(|s| s.page_number)
        .collect();
    record(
        deck,
        format!("How many slides have {metric} in the title?"),
        pages.len().to_string(),
        AnswerType::NonSpan,
        ReasoningType::Numerical,
        NumericalOp::Counting,
        pages,
        None,
    )
}

fn comparison<R: Rng + ?Sized>(deck: &SlideDeck, facts: &[Fact], rng: &mut R) -> Option<QaRecord> {
    let candidates = pairs(facts, |a, b| same_year(a, b) && a.value != b.value);
    let &(a, b) = candidates.choose(rng)?;
    let (a, b) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
    let higher = rng.random_bool(0.5);
    let winner = if (a.value > b.value) == higher { a } else { b };
    let word = if higher { "higher" } else { "lower" };
    Some(record(
        deck,
        format!(
            "Which company had {word} {} in {}, {} or {}?",
            lower(&a.metric),
            a.year,
            a.entity,
            b.entity
        ),
        winner.entity.clone(),
        AnswerType::SingleSpan,
        ReasoningType::Numerical,
        NumericalOp::Comparison,
        BTreeSet::from([a.page]),
        None,
    ))
}

fn lit(v: u32) -> Expr {
    Expr::int(i64::from(v))
}

fn arithmetic<R: Rng + ?Sized>(deck: &SlideDeck, facts: &[Fact], rng: &mut R) -> Option<QaRecord> {
    let form = rng.random_range(0..5);
    let (question, expr, page) = match form {
        0 | 2 | 4 => {
            let candidates = pairs(facts, |a, b| same_year(a, b) && a.value != b.value);
            let &(a, b) = candidates.choose(rng)?;
            let (a, b) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
            let m = lower(&a.metric);
            match form {
                0 => {
                    let (hi, lo) = if a.value > b.value { (a, b) } else { (b, a) };
                    (
                        format!("How much higher was the {m} of {} than {} in {}?", hi.entity, lo.entity, a.year),
                        Expr::bin(BinOp::Sub, lit(hi.value), lit(lo.value)),
                        a.page,
                    )
                }
                2 => (
                    format!("What was the total {m} of {} and {} in {}?", a.entity, b.entity, a.year),
                    Expr::bin(BinOp::Add, lit(a.value), lit(b.value)),
                    a.page,
                ),
                _ => (
                    format!("What was the ratio of the {m} of {} to {} in {}?", a.entity, b.entity, a.year),
                    Expr::bin(BinOp::Div, lit(a.value), lit(b.value)),
                    a.page,
                ),
            }
        }
        _ => {
            let candidates = pairs(facts, same_entity);
            let &(a, b) = candidates.choose(rng)?;
            let (early, late) = if a.year < b.year { (a, b) } else { (b, a) };
            let m = lower(&a.metric);
            if form == 1 {
                (
                    format!("How much did the {m} of {} change from {} to {}?", a.entity, early.year, late.year),
                    Expr::bin(BinOp::Sub, lit(late.value), lit(early.value)),
                    a.page,
                )
            } else {
                (
                    format!("What was the average {m} of {} across {} and {}?", a.entity, early.year, late.year),
                    Expr::bin(BinOp::Div, Expr::bin(BinOp::Add, lit(early.value), lit(late.value)), lit(2)),
                    a.page,
                )
            }
        }
    };
    let expression = calc::format_canonical(&expr);
    let answer = calc::evaluate(&expr).ok()?.text;
    Some(record(
        deck,
        question,
        answer,
        AnswerType::NonSpan,
        ReasoningType::Numerical,
        NumericalOp::Arithmetic,
        BTreeSet::from([page]),
        Some(expression),
    ))
}

/// One question of the requested kind.
pub fn generate_question<R: Rng + ?Sized>(
    deck: &SlideDeck,
    kind: QuestionKind,
    rng: &mut R,
) -> Result<QaRecord, CorpusError> {
    let facts = extract_facts(deck);
    if facts.is_empty() {
        return Err(CorpusError::NoFactAvailable(deck.deck_id.clone()));
    }
    let numerical = match kind {
        QuestionKind::SingleHop => return generate_single_hop(deck, rng),
        QuestionKind::MultiHop => {
            let single = generate_single_hop(deck, rng)?;
            return edit_to_multi_hop(deck, &single, rng);
        }
        QuestionKind::Counting => Some(counting(deck, &facts, rng)),
        QuestionKind::Comparison => comparison(deck, &facts, rng),
        QuestionKind::Arithmetic => arithmetic(deck, &facts, rng),
    };
    match numerical {
        Some(r) => Ok(r),
        None => generate_single_hop(deck, rng),
    }
}
