use deckqa::corpus::*;
use deckqa::textproc::*;
use proptest::prelude::*;

fn one_region_slide(category: RegionCategory, text: &str) -> Slide {
    let tokens = text
        .split_whitespace()
        .enumerate()
        .map(|(i, w)| Word { word: w.into(), bbox: BBox::new(40 + 100 * i as u32, 30, 130 + 100 * i as u32, 60) })
        .collect();
    Slide {
        page_number: 3,
        width: PAGE_WIDTH,
        height: PAGE_HEIGHT,
        regions: vec![Region { category, bbox: BBox::new(32, 24, 992, 104), tokens }],
    }
}

fn small_corpus() -> Corpus {
    generate_corpus(&GeneratorConfig { num_decks: 20, pages_per_deck: 5, ..Default::default() }).unwrap()
}

#[test]
fn vocab_counts_and_determinism() {
    let deck = SlideDeck {
        deck_id: "d".into(),
        topic: "t".into(),
        slides: vec![one_region_slide(RegionCategory::Title, "Revenue 2015")],
    };
    let v = build_vocab(&[DeckBundle { deck, records: vec![] }], 1);
    assert_eq!(v.len(), NUM_SPECIAL + 2);
    assert_eq!(v.id("2015"), NUM_SPECIAL as u32);
    assert_eq!(v.id("revenue"), NUM_SPECIAL as u32 + 1);
    assert_eq!(tokenize("unseen", &v), [UNK]);

    let corpus = small_corpus();
    let a = build_vocab(&corpus.train, 1);
    let b = build_vocab(&corpus.train, 1);
    assert_eq!(a, b);
    assert_eq!(Vocab::from_text(&a.to_text()).unwrap(), a);
    assert!(Vocab::from_text("revenue\n").is_err());
}

#[test]
fn tokenize_round_trips_corpus_text() {
    let corpus = small_corpus();
    let vocab = build_vocab(&corpus.train, 1);
    for r in corpus.train.iter().flat_map(|b| &b.records) {
        let ids = tokenize(&r.question, &vocab);
        assert!(!ids.contains(&UNK));
        assert_eq!(detokenize(&ids, &vocab), split_words(&r.question).join(" "));
    }
    let v = Vocab::with_words(["revenue".to_string(), ":".to_string(), "42".to_string()]);
    assert_eq!(detokenize(&tokenize("Revenue: 42", &v), &v), "revenue : 42");
    assert!(tokenize("", &v).is_empty());
}

#[test]
fn sequence_layout_follows_the_template() {
    let vocab = Vocab::with_words(["q3", "results", "what", "?"].map(String::from));
    let slide = one_region_slide(RegionCategory::Title, "Q3 Results");
    let seq = build_input_sequence(TaskPrefix::QuestionAnswering, "what?", &slide, &vocab, SequenceOptions::default());
    let expected = [
        MARK_TASK,
        TASK_QA,
        MARK_QUESTION,
        vocab.id("what"),
        vocab.id("?"),
        MARK_PAGE,
        page_token(3).unwrap(),
        MARK_CONTEXT,
        region_token(RegionCategory::Title),
        vocab.id("q3"),
        vocab.id("results"),
    ];
    assert_eq!(seq.real_tokens(), expected);
    assert_eq!(seq.token_ids.len(), DEFAULT_MAX_LEN);
    assert!(seq.token_ids[seq.len..].iter().all(|&t| t == PAD));
    for i in 0..8 {
        assert_eq!(seq.layout[i], [0; 4]);
        assert_eq!(seq.vis_ids[i], 0);
        assert_eq!(seq.seg_ids[i], 0);
    }
    for i in 8..11 {
        assert_eq!(seq.seg_ids[i], 1);
        assert!(seq.vis_ids[i] > 0);
        assert!(seq.layout[i].iter().all(|&b| b > 0));
    }
    assert!(!seq.truncated);
}

#[test]
fn long_pages_truncate_to_max_len() {
    let text = vec!["word"; 400].join(" ");
    let slide = one_region_slide(RegionCategory::PageText, &text);
    let seq = build_input_sequence(TaskPrefix::EvidenceSelection, "q", &slide, &Vocab::base(), SequenceOptions::default());
    assert_eq!(seq.len, 200);
    assert_eq!(seq.token_ids.len(), 200);
    assert!(seq.truncated);
}

#[test]
fn box_binning_examples() {
    let b = |x0, y0, x1, y1| normalize_and_bin_box(BBox::new(x0, y0, x1, y1), 1024, 768, 100).unwrap();
    let t = |l: LayoutBox| (l.x0_bin, l.y0_bin, l.x1_bin, l.y1_bin);
    assert_eq!(t(b(512, 384, 512, 384)), (50, 50, 50, 50));
    assert_eq!(t(b(0, 0, 1024, 768)), (0, 0, 99, 99));
    // floor(100/1024*100)=9, floor(200/768*100)=26, floor(300/1024*100)=29, floor(400/768*100)=52
    assert_eq!(t(b(100, 200, 300, 400)), (9, 26, 29, 52));
    assert_eq!(
        normalize_and_bin_box(BBox::new(5, 0, 4, 10), 1024, 768, 100),
        Err(TextError::InvalidBox(BBox::new(5, 0, 4, 10)))
    );
}

#[test]
fn subword_units_inherit_word_boxes() {
    let vocab = Vocab::with_words(["rev", "enue", "42"].map(String::from));
    let slide = one_region_slide(RegionCategory::Table, "Revenue 42");
    let seq = build_input_sequence_with(
        TaskPrefix::QuestionAnswering,
        "",
        &slide,
        &vocab,
        SequenceOptions::default(),
        &HalvingSplitter { min_len: 4 },
    );
    let ctx = 6;
    assert_eq!(seq.real_tokens()[ctx..], [region_token(RegionCategory::Table), vocab.id("rev"), vocab.id("enue"), vocab.id("42")]);
    let word_box = |i: usize| {
        let l = normalize_and_bin_box(slide.regions[0].tokens[i].bbox, 1024, 768, 100).unwrap();
        [l.x0_bin + 1, l.y0_bin + 1, l.x1_bin + 1, l.y1_bin + 1]
    };
    assert_eq!(seq.layout[ctx + 1], word_box(0));
    assert_eq!(seq.layout[ctx + 2], word_box(0));
    assert_eq!(seq.layout[ctx + 3], word_box(1));
}

proptest! {
    #[test]
    fn binning_is_monotone(a in 0u32..=1024, b in 0u32..=1024, bins in 1u32..200) {
        let (lo, hi) = (a.min(b), a.max(b));
        let l = normalize_and_bin_box(BBox::new(lo, 0, hi, 0), 1024, 768, bins).unwrap();
        prop_assert!(l.x0_bin <= l.x1_bin);
        prop_assert!(l.x1_bin < bins);
    }

    #[test]
    fn channels_align_and_labels_count_regions(seed in 0u64..500, max_len in 20usize..200) {
        let cfg = GeneratorConfig { seed, num_decks: 1, pages_per_deck: 5, ..Default::default() };
        let deck = generate_deck(&cfg, 0).unwrap();
        let vocab = Vocab::base();
        for slide in &deck.slides {
            let seq = build_input_sequence(TaskPrefix::QuestionAnswering, "how many?", slide, &vocab, SequenceOptions { max_len, bins: 100 });
            prop_assert_eq!(seq.token_ids.len(), max_len);
            prop_assert_eq!(seq.seg_ids.len(), max_len);
            prop_assert_eq!(seq.layout.len(), max_len);
            prop_assert_eq!(seq.vis_ids.len(), max_len);
            let labels = seq.real_tokens().iter().filter(|&&t| (REGION_BASE..PAGE_BASE).contains(&t)).count();
            if !seq.truncated {
                prop_assert_eq!(labels, slide.regions.len());
            } else {
                prop_assert!(labels <= slide.regions.len());
            }
        }
    }
}
