mod common;

use common::{corpus, instances, small_config, vocab};
use deckqa::textproc::{build_input_sequence, InputSequence, SequenceOptions, TaskPrefix, BOS};
use deckqa_model::batch::{encode_inputs, Instance, Recipe, TargetStyle};
use deckqa_model::network::MemorySpan;
use deckqa_model::{batch_loss, training_step, Model, ModelConfig, SelectorKind};
use deckqa_numerics::{gradcheck, AdamW, AdamWConfig, Graph, Schedule, Tensor};
use proptest::prelude::*;

fn encoded_rows(model: &Model, seqs: &[&InputSequence]) -> Vec<Vec<f32>> {
    let mut g = Graph::new(&model.store);
    let enc = model.encode(&mut g, seqs).unwrap();
    let t = g.value(enc);
    let mut out = Vec::new();
    let mut at = 0;
    for s in seqs {
        out.push(t.data()[at * t.cols()..(at + s.len) * t.cols()].to_vec());
        at += s.len;
    }
    out
}

fn setup() -> (Vec<deckqa::corpus::DeckBundle>, deckqa::textproc::Vocab, Model) {
    let bundles = corpus(4, 5);
    let v = vocab(&bundles);
    let model = Model::new(small_config(&v, SelectorKind::None), 3).unwrap();
    (bundles, v, model)
}

#[test]
fn page_permutation_permutes_memory_blocks_exactly() {
    let (bundles, v, model) = setup();
    let b = &bundles[0];
    let seqs = encode_inputs(TaskPrefix::QuestionAnswering, &b.records[0].question, &b.deck, None, &v, &model.config).unwrap();
    let order = [3usize, 0, 4, 2, 1];
    let straight = encoded_rows(&model, &seqs.iter().collect::<Vec<_>>());
    let permuted = encoded_rows(&model, &order.iter().map(|&i| &seqs[i]).collect::<Vec<_>>());
    for (pos, &i) in order.iter().enumerate() {
        assert_eq!(permuted[pos], straight[i], "page {} block differs", i + 1);
    }
    // a one-page deck is plain single-sequence encoding
    assert_eq!(encoded_rows(&model, &[&seqs[2]])[0], straight[2]);
}

#[test]
fn editing_one_page_leaves_other_pages_bit_identical() {
    let (bundles, v, model) = setup();
    let b = &bundles[1];
    let seqs = encode_inputs(TaskPrefix::EvidenceSelection, &b.records[0].question, &b.deck, None, &v, &model.config).unwrap();
    let mut edited = seqs.clone();
    let last = edited[4].len - 1;
    edited[4].token_ids[last] = v.id("revenue");
    edited[4].len -= 1;
    let a = encoded_rows(&model, &seqs.iter().collect::<Vec<_>>());
    let e = encoded_rows(&model, &edited.iter().collect::<Vec<_>>());
    assert_ne!(a[4], e[4]);
    for k in 0..4 {
        assert_eq!(a[k], e[k]);
    }
}

fn logits_for(model: &Model, seqs: &[InputSequence], prefix: &[u32]) -> Vec<f32> {
    let mut g = Graph::new(&model.store);
    let refs: Vec<&InputSequence> = seqs.iter().collect();
    let enc = model.encode(&mut g, &refs).unwrap();
    let rows = seqs.iter().map(|s| s.len).sum();
    let kv = model.memory_kv(&mut g, enc).unwrap();
    let states = model.decode_states(&mut g, &kv, &[(prefix, MemorySpan { start: 0, len: rows })]).unwrap();
    let l = model.logits(&mut g, states).unwrap();
    g.value(l).data().to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn padding_never_reaches_the_logits(seed in 0u64..10_000) {
        let (bundles, v, model) = setup();
        let b = &bundles[2];
        let seqs = encode_inputs(TaskPrefix::QuestionAnswering, &b.records[1].question, &b.deck, None, &v, &model.config).unwrap();
        let mut noisy = seqs.clone();
        let mut x = seed;
        for s in &mut noisy {
            for i in s.len..s.token_ids.len() {
                x = deckqa_numerics::mix64(x);
                s.token_ids[i] = (x % v.len() as u64) as u32;
                s.seg_ids[i] = (x % 17) as u32;
                s.layout[i] = [(x % 101) as u32; 4];
                s.vis_ids[i] = (x % 37) as u32;
            }
        }
        let prefix = [BOS, 10, 42];
        prop_assert_eq!(logits_for(&model, &seqs, &prefix), logits_for(&model, &noisy, &prefix));
    }
}

#[test]
fn question_positions_embed_to_layer_norm_of_token_row() {
    let (bundles, v, model) = setup();
    let slide = &bundles[0].deck.slides[0];
    let seq = build_input_sequence(TaskPrefix::QuestionAnswering, "what was the revenue", slide, &v, SequenceOptions::default());
    let z = model.embed_inputs(&seq).unwrap();
    let d = model.config.d_model;
    let table = model.store.value(model.store.id("embed.token").unwrap());
    // position 3 is the first question word; its side channels are all zero
    assert_eq!(seq.seg_ids[3], 0);
    assert_eq!(seq.layout[3], [0; 4]);
    assert_eq!(seq.vis_ids[3], 0);
    let row = table.row(seq.token_ids[3] as usize);
    let mean = row.iter().map(|&x| x as f64).sum::<f64>() / d as f64;
    let var = row.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / d as f64;
    let rstd = 1.0 / (var + model.config.ln_eps as f64).sqrt();
    for (j, &x) in row.iter().enumerate() {
        let expect = (x as f64 - mean) * rstd;
        assert!((z.row(3)[j] as f64 - expect).abs() < 1e-4);
    }
    // the same question word on another page embeds identically
    let other = build_input_sequence(TaskPrefix::QuestionAnswering, "what was the revenue", &bundles[1].deck.slides[1], &v, SequenceOptions::default());
    let z2 = model.embed_inputs(&other).unwrap();
    assert_eq!(z.row(3), z2.row(3));
}

#[test]
fn layout_table_gradient_matches_finite_differences() {
    let (bundles, v, mut model) = setup();
    let slide = &bundles[0].deck.slides[1];
    let seq = build_input_sequence(TaskPrefix::QuestionAnswering, "what was it", slide, &v, SequenceOptions::default());
    // perturbing only one x0 bin changes exactly the rows that use it
    let mut moved = seq.clone();
    let pos = (0..seq.len).find(|&i| seq.layout[i][0] > 0).unwrap();
    moved.layout[pos][0] += 1;
    let a = model.embed_inputs(&seq).unwrap();
    let b = model.embed_inputs(&moved).unwrap();
    assert_ne!(a.row(pos), b.row(pos));
    assert_eq!(a.row(0), b.row(0));

    let weights: Vec<f32> = (0..seq.len * model.config.d_model).map(|i| ((i * 37 % 17) as f32 - 8.0) / 8.0).collect();
    let ids = [model.store.id("embed.layout_x").unwrap(), model.store.id("embed.layout_y").unwrap()];
    let m = Model { config: model.config.clone(), store: deckqa_numerics::ParamStore::new() };
    let report = gradcheck::check(&mut model.store, &ids, 1e-3, 1e-2, 300, |g| {
        let z = m.embed(g, &[&seq]).map_err(|e| match e {
            deckqa_model::ModelError::Numerics(n) => n,
            other => panic!("{other}"),
        })?;
        g.dot(z, &weights)
    })
    .unwrap();
    assert!(report.fraction_within() >= 0.95, "{report:?}");
    assert!(report.max_rel_error < 5e-2, "{report:?}");
}

fn toy_batch(model_cfg: &ModelConfig) -> (Vec<Instance>, deckqa::textproc::Vocab) {
    let bundles = corpus(4, 5);
    let v = vocab(&bundles);
    let cfg = ModelConfig { vocab_size: v.len(), ..model_cfg.clone() };
    (instances(Recipe::MultiTask(TargetStyle::Expression), &bundles[..1], &v, &cfg), v)
}

#[test]
fn zero_rows_stay_zero_through_training() {
    let (_, v, _) = setup();
    let cfg = small_config(&v, SelectorKind::None);
    let (inst, v2) = toy_batch(&cfg);
    let mut model = Model::new(ModelConfig { vocab_size: v2.len(), ..cfg }, 5).unwrap();
    let opt = AdamW::new(AdamWConfig::default(), Schedule::new(1e-2, 0));
    let refs: Vec<&Instance> = inst.iter().take(6).collect();
    for _ in 0..5 {
        training_step(&mut model, &opt, &refs, 9).unwrap();
    }
    for name in ["embed.segment", "embed.layout_x", "embed.layout_y", "embed.visual"] {
        let t = model.store.value(model.store.id(name).unwrap());
        assert!(t.row(0).iter().all(|&x| x == 0.0), "{name} row 0 moved");
        assert!(t.row(1).iter().any(|&x| x != 0.0));
    }
}

fn loss_of(model: &Model, batch: &[&Instance]) -> deckqa_model::LossParts {
    let mut g = Graph::new(&model.store);
    batch_loss(model, &mut g, batch).unwrap().1
}

#[test]
fn loss_weights_and_mean_reduction() {
    let (_, v, _) = setup();
    let (inst, v2) = toy_batch(&small_config(&v, SelectorKind::None));
    let base = ModelConfig { vocab_size: v2.len(), ..small_config(&v, SelectorKind::None) };
    let model = Model::new(base.clone(), 11).unwrap();
    let pair: Vec<&Instance> = inst[..2].iter().collect();
    let parts = loss_of(&model, &pair);
    assert!(parts.dec > 0.0 && parts.sel > 0.0);
    assert!((parts.total - (parts.dec + parts.sel)).abs() < 1e-5);

    let dup: Vec<&Instance> = [&inst[0], &inst[1], &inst[0], &inst[1]].into();
    let d = loss_of(&model, &dup);
    assert!((d.total - parts.total).abs() < 1e-6, "{d:?} vs {parts:?}");

    let qa_only = Model { config: ModelConfig { lambda_sel: 0.0, ..base }, store: model.store.clone() };
    let z = loss_of(&qa_only, &pair);
    assert!((z.total - z.dec).abs() < 1e-7);

    // with lambda_sel = 0 the evidence rows contribute no gradient at all
    let grads_of = |m: &Model, b: &[&Instance]| {
        let mut g = Graph::new(&m.store);
        let (l, _) = batch_loss(m, &mut g, b).unwrap();
        g.backward(l)
    };
    let mixed = grads_of(&qa_only, &pair);
    let answer_only = grads_of(&qa_only, &pair[..1]);
    for (id, p) in qa_only.store.iter() {
        let a = mixed.get(id).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; p.value.len()]);
        let b = answer_only.get(id).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; p.value.len()]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-6 * (1.0 + y.abs()), "{}: {x} vs {y}", p.name);
        }
    }
}

#[test]
fn answer_and_evidence_share_one_decoder() {
    let (_, v, _) = setup();
    let (inst, v2) = toy_batch(&small_config(&v, SelectorKind::None));
    let model = Model::new(ModelConfig { vocab_size: v2.len(), ..small_config(&v, SelectorKind::None) }, 2).unwrap();
    let decoder_params: Vec<&str> = model.store.iter_by_name().map(|(n, _)| n).filter(|n| n.starts_with("decoder.")).collect();
    let blocks: std::collections::BTreeSet<&str> = decoder_params.iter().filter_map(|n| n.split('.').nth(1)).filter(|s| s.parse::<usize>().is_ok()).collect();
    assert_eq!(blocks.len(), model.config.layers);
    let touched = |i: usize| {
        let mut g = Graph::new(&model.store);
        let (l, _) = batch_loss(&model, &mut g, &[&inst[i]]).unwrap();
        let grads = g.backward(l);
        model
            .store
            .iter()
            .filter(|(id, p)| p.name.starts_with("decoder.") && grads.get(*id).is_some_and(|g| g.iter().any(|&x| x != 0.0)))
            .map(|(_, p)| p.name.clone())
            .collect::<Vec<_>>()
    };
    let answer = touched(0);
    assert_eq!(answer.len(), decoder_params.len());
    assert_eq!(answer, touched(1));
}

#[test]
fn loss_on_fixed_batch_decreases_at_default_learning_rate() {
    let bundles = corpus(4, 5);
    let v = vocab(&bundles);
    let cfg = ModelConfig { vocab_size: v.len(), dropout: 0.0, ..ModelConfig::default() };
    let inst = instances(Recipe::MultiTask(TargetStyle::Expression), &bundles[..1], &v, &cfg);
    let batch: Vec<&Instance> = inst.iter().take(4).collect();
    let mut model = Model::new(cfg, 17).unwrap();
    let opt = AdamW::new(AdamWConfig::default(), Schedule::new(5e-5, 0));
    let mut losses = Vec::new();
    for _ in 0..50 {
        losses.push(training_step(&mut model, &opt, &batch, 1).unwrap().total);
    }
    let rises = losses.windows(2).filter(|w| w[1] >= w[0]).count();
    assert!(rises <= 5, "{rises} non-decreasing steps: {losses:?}");
    assert!(losses[49] < losses[0]);
}

#[test]
fn zeroed_cross_page_update_leaves_first_states() {
    let (bundles, v, _) = setup();
    let mut model = Model::new(small_config(&v, SelectorKind::Hierarchical), 4).unwrap();
    for name in ["pages.attn.o.w", "pages.attn.o.b", "pages.ffn.out.w", "pages.ffn.out.b"] {
        let shape = model.store.value(model.store.id(name).unwrap()).shape().to_vec();
        model.store.set_value(name, Tensor::zeros(shape)).unwrap();
    }
    let b = &bundles[0];
    let seqs = encode_inputs(TaskPrefix::EvidenceSelection, &b.records[0].question, &b.deck, None, &v, &model.config).unwrap();
    let refs: Vec<&InputSequence> = seqs.iter().collect();
    let mut g = Graph::new(&model.store);
    let enc = model.encode(&mut g, &refs).unwrap();
    let rows = Model::first_rows(&refs);
    let with_layer = model.page_logits(&mut g, enc, &rows, &[5]).unwrap();
    let h = g.select_rows(enc, &rows).unwrap();
    let direct = model.selector_logits(&mut g, h).unwrap();
    assert_eq!(g.value(with_layer).data(), g.value(direct).data());
}
