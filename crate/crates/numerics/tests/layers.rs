use deckqa_numerics::{AttentionSpec, AttnBlock, Graph, ParamStore, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn const_row(g: &mut Graph, v: &[f32]) -> deckqa_numerics::Var {
    g.constant(Tensor::from_rows(1, v.len(), v.to_vec()).unwrap())
}

#[test]
fn layer_norm_of_constant_vector_is_zero() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.constant(Tensor::from_rows(1, 4, vec![3.0; 4]).unwrap());
    let gain = const_row(&mut g, &[1.0; 4]);
    let bias = const_row(&mut g, &[0.0; 4]);
    let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn layer_norm_two_values_is_symmetric() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.constant(Tensor::from_rows(1, 2, vec![1.0, 3.0]).unwrap());
    let gain = const_row(&mut g, &[1.0; 2]);
    let bias = const_row(&mut g, &[0.0; 2]);
    let y = g.layer_norm(x, gain, bias, 1e-12).unwrap();
    let out = g.value(y).data();
    assert!((out[0] + 1.0).abs() < 1e-5 && (out[1] - 1.0).abs() < 1e-5, "{out:?}");
}

#[test]
fn layer_norm_standardizes_random_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let xid = store.add_normal("x", 16, 64, 3.0, &mut rng).unwrap();
    let mut g = Graph::new(&store);
    let x = g.param(xid);
    let gain = const_row(&mut g, &[1.0; 64]);
    let bias = const_row(&mut g, &[0.0; 64]);
    let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
    let t = g.value(y);
    for r in 0..16 {
        let row = t.row(r);
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / 64.0;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 64.0;
        assert!(mean.abs() < 1e-5, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-3, "var {var}");
    }
}

fn attn_inputs(n_q: usize, n_k: usize, d: usize, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    s.add_normal("q", n_q, d, 1.0, &mut rng).unwrap();
    s.add_normal("k", n_k, d, 1.0, &mut rng).unwrap();
    s.add_normal("v", n_k, d, 1.0, &mut rng).unwrap();
    s
}

#[test]
fn single_key_gets_full_weight() {
    let store = attn_inputs(3, 1, 8, 1);
    let mut g = Graph::new(&store);
    let (q, k, v) = (
        g.param_named("q").unwrap(),
        g.param_named("k").unwrap(),
        g.param_named("v").unwrap(),
    );
    let spec = AttentionSpec {
        heads: 2,
        blocks: vec![AttnBlock {
            q_start: 0,
            q_len: 3,
            k_start: 0,
            k_len: 1,
        }],
        causal: false,
        key_mask: None,
    };
    let out = g.attention(q, k, v, &spec).unwrap();
    for h in 0..2 {
        assert!(g.attention_weights(out, 0, h).unwrap().iter().all(|&w| w == 1.0));
    }
    let vrow = store.value(store.id("v").unwrap()).row(0).to_vec();
    for r in 0..3 {
        assert_eq!(g.value(out).row(r), vrow.as_slice());
    }
}

#[test]
fn masked_keys_get_exactly_zero_weight() {
    let store = attn_inputs(2, 5, 8, 2);
    let mut g = Graph::new(&store);
    let (q, k, v) = (
        g.param_named("q").unwrap(),
        g.param_named("k").unwrap(),
        g.param_named("v").unwrap(),
    );
    let spec = AttentionSpec {
        heads: 4,
        blocks: vec![AttnBlock {
            q_start: 0,
            q_len: 2,
            k_start: 0,
            k_len: 5,
        }],
        causal: false,
        key_mask: Some(vec![false, false, true, false, false]),
    };
    let out = g.attention(q, k, v, &spec).unwrap();
    for h in 0..4 {
        let w = g.attention_weights(out, 0, h).unwrap();
        for i in 0..2 {
            assert_eq!(&w[i * 5..(i + 1) * 5], &[0.0, 0.0, 1.0, 0.0, 0.0]);
        }
    }
    let vrow = store.value(store.id("v").unwrap()).row(2).to_vec();
    assert_eq!(g.value(out).row(0), vrow.as_slice());
}

#[test]
fn heads_must_divide_width() {
    let store = attn_inputs(2, 2, 6, 3);
    let mut g = Graph::new(&store);
    let (q, k, v) = (
        g.param_named("q").unwrap(),
        g.param_named("k").unwrap(),
        g.param_named("v").unwrap(),
    );
    let spec = AttentionSpec::self_blocks(4, &[2], false);
    assert!(g.attention(q, k, v, &spec).is_err());
}

#[test]
fn uniform_logits_give_ln_v() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let logits = g.constant(Tensor::from_rows(3, 4, vec![0.5; 12]).unwrap());
    let loss = g.cross_entropy(logits, &[0, 1, 3], usize::MAX).unwrap();
    assert!((g.value(loss).item() - 4f32.ln()).abs() < 1e-6);
    assert!((4f64.ln() - 1.3863).abs() < 1e-4);
}

#[test]
fn confident_correct_logits_give_near_zero_loss() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let logits = g.constant(Tensor::from_rows(1, 3, vec![50.0, 0.0, 0.0]).unwrap());
    let loss = g.cross_entropy(logits, &[0], 99).unwrap();
    assert!(g.value(loss).item() < 1e-6);
}

#[test]
fn fully_ignored_targets_give_zero_loss_and_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let id = store.add_normal("logits", 2, 5, 1.0, &mut rng).unwrap();
    let mut g = Graph::new(&store);
    let logits = g.param(id);
    let loss = g.cross_entropy(logits, &[0, 0], 0).unwrap();
    assert_eq!(g.value(loss).item(), 0.0);
    let grads = g.backward(loss);
    assert!(grads.get(id).map_or(true, |g| g.iter().all(|&x| x == 0.0)));
}

#[test]
fn target_out_of_range_is_an_error() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let logits = g.constant(Tensor::from_rows(1, 3, vec![0.0; 3]).unwrap());
    assert!(g.cross_entropy(logits, &[3], 99).is_err());
}

#[test]
fn dropout_is_keyed_and_identity_at_inference() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let id = store.add_normal("x", 8, 16, 1.0, &mut rng).unwrap();
    let run = |seed: u64| {
        let mut g = Graph::training(&store, 0.1, seed, 7);
        let x = g.param(id);
        let y = g.dropout(x, 11);
        g.value(y).clone()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
    let zeros = run(1).data().iter().filter(|&&v| v == 0.0).count();
    assert!(zeros > 0 && zeros < 40);
    let mut g = Graph::new(&store);
    let x = g.param(id);
    let y = g.dropout(x, 11);
    assert_eq!(x, y);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(seed in 0u64..1000, nq in 1usize..6, nk in 1usize..9, causal: bool) {
        let store = attn_inputs(nq, nk, 8, seed);
        let mut g = Graph::new(&store);
        let (q, k, v) = (
            g.param_named("q").unwrap(),
            g.param_named("k").unwrap(),
            g.param_named("v").unwrap(),
        );
        let spec = AttentionSpec {
            heads: 2,
            blocks: vec![AttnBlock { q_start: 0, q_len: nq, k_start: 0, k_len: nk }],
            causal,
            key_mask: None,
        };
        let out = g.attention(q, k, v, &spec).unwrap();
        for h in 0..2 {
            let w = g.attention_weights(out, 0, h).unwrap();
            for i in 0..nq {
                let s: f64 = w[i * nk..(i + 1) * nk].iter().map(|&x| x as f64).sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn residual_add_preserves_shape(rows in 1usize..10, cols in 1usize..10) {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.constant(Tensor::zeros(vec![rows, cols]));
        let b = g.constant(Tensor::zeros(vec![rows, cols]));
        let c = g.add(a, b).unwrap();
        prop_assert_eq!(g.value(c).shape(), &[rows, cols][..]);
    }
}
