use std::collections::{BTreeMap, BTreeSet};

use deckqa::corpus::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(seed: u64, num_decks: usize) -> GeneratorConfig {
    GeneratorConfig { seed, num_decks, ..Default::default() }
}

fn word(text: &str, x: u32) -> Word {
    Word { word: text.to_string(), bbox: BBox::new(x, 150, x + 40, 170) }
}

fn region(category: RegionCategory, text: &str) -> Region {
    let tokens = text.split_whitespace().enumerate().map(|(i, w)| word(w, 40 + 50 * i as u32)).collect();
    Region { category, bbox: BBox::new(32, 128, 992, 400), tokens }
}

fn slide(page: u32, title: &str, content: Vec<Region>) -> Slide {
    let mut regions = vec![region(RegionCategory::Title, title)];
    regions.extend(content);
    Slide { page_number: page, width: PAGE_WIDTH, height: PAGE_HEIGHT, regions }
}

/// Revenue facts on page 3, profiles on pages 7 and 8.
fn hand_deck(second_founding: &str) -> SlideDeck {
    let mut slides: Vec<Slide> = (1..=8)
        .map(|p| slide(p, "Agenda", vec![region(RegionCategory::PageText, "teams work across regions")]))
        .collect();
    slides[2] = slide(
        3,
        "Revenue by Company",
        vec![region(RegionCategory::Table, "Acme 2015 42 Acme 2016 30 Globex 2015 17 Globex 2016 64")],
    );
    slides[6] = slide(7, "Profiles", vec![region(RegionCategory::PageText, "Acme founded in 1999")]);
    slides[7] = slide(
        8,
        "Profiles",
        vec![region(RegionCategory::PageText, &format!("Globex founded in {second_founding}"))],
    );
    SlideDeck { deck_id: "hand".into(), slides, topic: "Retail".into() }
}

fn single(question: &str, answer: &str, answer_type: AnswerType) -> QaRecord {
    QaRecord {
        qa_id: "hand-q0".into(),
        deck_id: "hand".into(),
        question: question.into(),
        answer: answer.into(),
        answer_type,
        reasoning_type: ReasoningType::SingleHop,
        numerical_op: NumericalOp::None,
        evidence_pages: BTreeSet::from([3]),
        arithmetic_expression: None,
    }
}

#[test]
fn deck_generation_is_deterministic_and_seeded() {
    let a = generate_deck(&config(7, 1), 0).unwrap();
    let b = generate_deck(&config(7, 1), 0).unwrap();
    let c = generate_deck(&config(8, 1), 0).unwrap();
    assert_eq!(a.slides.len(), 20);
    assert!(a.slides.iter().all(|s| s.regions.iter().any(|r| r.category == RegionCategory::Title)));
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_ne!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&c).unwrap());
    assert!(generate_deck(&config(7, 1), 1).is_err());
}

#[test]
fn jsonl_is_byte_identical_and_sorted() {
    let cfg = config(7, 12);
    let a = generate_corpus(&cfg).unwrap();
    let b = generate_corpus(&cfg).unwrap();
    for split in Split::ALL {
        assert_eq!(to_jsonl(a.split(split)), to_jsonl(b.split(split)));
    }
    let text = to_jsonl(&a.train);
    let first = text.lines().next().unwrap();
    assert!(first.starts_with(r#"{"deck_id":"#), "{}", &first[..40]);
    let qa = text.lines().find(|l| l.contains(r#""kind":"qa""#)).unwrap();
    assert!(qa.starts_with(r#"{"answer":"#));
    let back = read_jsonl(&text).unwrap();
    assert_eq!(back, a.train);
}

#[test]
fn generated_corpus_validates_cleanly() {
    let corpus = generate_corpus(&config(7, 50)).unwrap();
    let records: Vec<QaRecord> = corpus.records().cloned().collect();
    let report = validate_corpus(&records, &corpus.decks());
    assert_eq!(report.checked, 300);
    assert!(report.is_clean(), "{:?}", &report.violations[..report.violations.len().min(5)]);
}

#[test]
fn mix_tracks_configuration() {
    let cfg = GeneratorConfig { pages_per_deck: 5, ..config(11, 400) };
    let corpus = generate_corpus(&cfg).unwrap();
    let records: Vec<&QaRecord> = corpus.records().collect();
    assert!(records.len() >= 2000);
    let frac = |t: ReasoningType| {
        records.iter().filter(|r| r.reasoning_type == t).count() as f64 / records.len() as f64
    };
    assert!((frac(ReasoningType::SingleHop) - 0.507).abs() < 0.03);
    assert!((frac(ReasoningType::MultiHop) - 0.139).abs() < 0.03);
    assert!((frac(ReasoningType::Numerical) - 0.354).abs() < 0.03);
    let numerical: Vec<_> = records.iter().filter(|r| r.reasoning_type == ReasoningType::Numerical).collect();
    let arith = numerical.iter().filter(|r| r.numerical_op == NumericalOp::Arithmetic).count();
    assert!((arith as f64 / numerical.len() as f64 - 0.255).abs() < 0.03);
}

#[test]
fn decks_stay_within_one_split() {
    let corpus = generate_corpus(&config(3, 40)).unwrap();
    assert_eq!(corpus.train.len() + corpus.dev.len() + corpus.test.len(), 40);
    let mut owner = BTreeMap::new();
    for split in Split::ALL {
        for b in corpus.split(split) {
            assert!(owner.insert(b.deck.deck_id.clone(), split).is_none());
            assert!(b.records.iter().all(|r| r.deck_id == b.deck.deck_id));
        }
    }
}

#[test]
fn bad_mix_names_the_field() {
    let mut cfg = config(7, 1);
    cfg.mix.numerical = 0.5;
    let err = generate_corpus(&cfg).unwrap_err().to_string();
    assert!(err.contains("mix"), "{err}");
}

#[test]
fn counting_answer_matches_title_scan() {
    let corpus = generate_corpus(&config(5, 30)).unwrap();
    let decks = corpus.decks();
    let mut seen = 0;
    for r in corpus.records().filter(|r| r.numerical_op == NumericalOp::Counting) {
        let metric = r.question.split_whitespace().nth(4).unwrap();
        let deck = &decks[&r.deck_id];
        let count = deck
            .slides
            .iter()
            .filter(|s| s.title_words().iter().any(|w| w.eq_ignore_ascii_case(metric)))
            .count();
        assert_eq!(r.answer, count.to_string(), "{}", r.question);
        seen += 1;
    }
    assert!(seen > 0);
}

#[test]
fn single_hop_answer_occurs_on_its_page() {
    let deck = hand_deck("2001");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let r = generate_single_hop(&deck, &mut rng).unwrap();
        assert_eq!(r.evidence_pages, BTreeSet::from([3]));
        let words = deck.page(3).unwrap().words();
        for part in r.answer_parts() {
            assert!(words.contains(&part), "{part}");
        }
        assert!(!r.question.contains("page"));
    }
}

#[test]
fn no_facts_is_an_error() {
    let mut deck = hand_deck("2001");
    deck.slides[2] = slide(3, "Agenda", vec![region(RegionCategory::PageText, "nothing here")]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!(matches!(generate_single_hop(&deck, &mut rng), Err(CorpusError::NoFactAvailable(_))));
}

#[test]
fn bridge_entity_replaces_mention() {
    let deck = hand_deck("2001");
    let q = single("What was the revenue of Acme in 2015?", "42", AnswerType::SingleSpan);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let m = edit_to_multi_hop(&deck, &q, &mut rng).unwrap();
    assert_eq!(m.question, "What was the revenue of the company founded in 1999 in 2015?");
    assert_eq!(m.evidence_pages, BTreeSet::from([3, 7]));
    assert_eq!(m.answer, "42");
    assert_eq!(m.reasoning_type, ReasoningType::MultiHop);
}

#[test]
fn shared_property_gives_no_bridge() {
    let deck = hand_deck("1999");
    let q = single("What was the revenue of Acme in 2015?", "42", AnswerType::SingleSpan);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(edit_to_multi_hop(&deck, &q, &mut rng), Err(CorpusError::NoBridgeFound));
}

#[test]
fn two_bridges_chain_three_pages() {
    let deck = hand_deck("2001");
    let q = single("What were the revenue of Acme and Globex in 2015?", "42, 17", AnswerType::MultiSpan);
    let mut sizes = BTreeSet::new();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = edit_to_multi_hop(&deck, &q, &mut rng).unwrap();
        sizes.insert(m.evidence_pages.len());
        if m.evidence_pages.len() == 3 {
            assert_eq!(m.evidence_pages, BTreeSet::from([3, 7, 8]));
            assert!(!m.question.contains("Acme") && !m.question.contains("Globex"));
        }
    }
    assert_eq!(sizes, BTreeSet::from([2, 3]));
}

#[test]
fn validator_flags_broken_records() {
    let deck = hand_deck("2001");
    let decks = BTreeMap::from([("hand".to_string(), deck)]);
    let mut arith = single("How much higher?", "13", AnswerType::NonSpan);
    arith.reasoning_type = ReasoningType::Numerical;
    arith.numerical_op = NumericalOp::Arithmetic;
    arith.arithmetic_expression = Some("42 - 30".into());
    let report = validate_corpus(&[arith.clone()], &decks);
    assert_eq!(report.violations.len(), 1);
    assert_eq!(report.violations[0].kind, ViolationKind::ExpressionMismatch);

    arith.answer = "12".into();
    assert!(validate_corpus(&[arith], &decks).is_clean());

    let mut out_of_range = single("What was the revenue of Acme in 2015?", "42", AnswerType::SingleSpan);
    out_of_range.evidence_pages = BTreeSet::from([21]);
    let report = validate_corpus(&[out_of_range], &decks);
    assert_eq!(report.count(ViolationKind::PageOutOfRange), 1);
}
