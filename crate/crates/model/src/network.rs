//! Parameters and forward passes of the encoder, decoder and selector heads.
//!
//! Everything runs on packed batches: the real (unpadded) rows of many
//! page sequences are stacked into one matrix, and attention is restricted
//! to per-page (encoder), per-target (decoder) and per-example (cross)
//! blocks. Padding positions are never computed.

use deckqa::textproc::InputSequence;
use deckqa_numerics::{AttentionSpec, AttnBlock, Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, SelectorKind};
use crate::ModelError;

type Result<T> = std::result::Result<T, ModelError>;

pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
}

/// Row range of one example's memory inside a packed encoder output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemorySpan {
    pub start: usize,
    pub len: usize,
}

/// Cached cross-attention keys and values, one pair per decoder block.
pub struct MemoryKv {
    pub kv: Vec<(Var, Var)>,
}

/// Dropout call-site key.
fn site(stack: u64, layer: usize, slot: u64) -> u64 {
    (stack << 32) | ((layer as u64) << 8) | slot
}

const ENC: u64 = 1;
const DEC: u64 = 2;
const HIER: u64 = 3;

/// Weights drawn with std `1/sqrt(fan_in)` so every projection roughly
/// preserves scale at initialization.
fn add_linear(store: &mut ParamStore, name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    store.add_normal(&format!("{name}.w"), rows, cols, (rows as f32).sqrt().recip(), rng)?;
    store.add_constant(&format!("{name}.b"), cols, 0.0)?;
    Ok(())
}

fn add_ln(store: &mut ParamStore, name: &str, d: usize) -> Result<()> {
    store.add_constant(&format!("{name}.gain"), d, 1.0)?;
    store.add_constant(&format!("{name}.bias"), d, 0.0)?;
    Ok(())
}

fn add_attention(store: &mut ParamStore, name: &str, d: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    for p in ["q", "k", "v", "o"] {
        add_linear(store, &format!("{name}.{p}"), d, d, rng)?;
    }
    Ok(())
}

fn add_ffn(store: &mut ParamStore, name: &str, d: usize, d_ff: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    add_linear(store, &format!("{name}.in"), d, d_ff, rng)?;
    add_linear(store, &format!("{name}.out"), d_ff, d, rng)?;
    Ok(())
}

impl Model {
    /// Fresh parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let (d, std) = (config.d_model, config.init_std);
        let c = &config;
        s.add_normal("embed.token", c.vocab_size, d, std, &mut rng)?;
        s.add_zero_row_table("embed.segment", c.max_segments + 1, d, std, &mut rng)?;
        s.add_zero_row_table("embed.layout_x", c.bins as usize + 1, d, std, &mut rng)?;
        s.add_zero_row_table("embed.layout_y", c.bins as usize + 1, d, std, &mut rng)?;
        s.add_zero_row_table("embed.visual", c.vis_ids, d, std, &mut rng)?;
        s.add_normal("embed.position", c.max_len, d, std, &mut rng)?;
        add_ln(&mut s, "embed.ln", d)?;
        for l in 0..c.layers {
            let p = format!("encoder.{l}");
            add_ln(&mut s, &format!("{p}.ln_attn"), d)?;
            add_attention(&mut s, &format!("{p}.attn"), d, &mut rng)?;
            add_ln(&mut s, &format!("{p}.ln_ffn"), d)?;
            add_ffn(&mut s, &format!("{p}.ffn"), d, c.d_ff, &mut rng)?;
        }
        add_ln(&mut s, "encoder.ln_final", d)?;
        if c.has_decoder() {
            s.add_normal("decoder.position", c.target_max + 1, d, std, &mut rng)?;
            for l in 0..c.layers {
                let p = format!("decoder.{l}");
                add_ln(&mut s, &format!("{p}.ln_self"), d)?;
                add_attention(&mut s, &format!("{p}.self"), d, &mut rng)?;
                add_ln(&mut s, &format!("{p}.ln_cross"), d)?;
                add_attention(&mut s, &format!("{p}.cross"), d, &mut rng)?;
                add_ln(&mut s, &format!("{p}.ln_ffn"), d)?;
                add_ffn(&mut s, &format!("{p}.ffn"), d, c.d_ff, &mut rng)?;
            }
            add_ln(&mut s, "decoder.ln_final", d)?;
        }
        if c.selector == SelectorKind::Hierarchical {
            add_ln(&mut s, "pages.ln_attn", d)?;
            add_attention(&mut s, "pages.attn", d, &mut rng)?;
            add_ln(&mut s, "pages.ln_ffn", d)?;
            add_ffn(&mut s, "pages.ffn", d, c.d_ff, &mut rng)?;
        }
        if c.selector != SelectorKind::None {
            add_linear(&mut s, "select.hidden", d, d, &mut rng)?;
            add_linear(&mut s, "select.out", d, 1, &mut rng)?;
        }
        Ok(Self { config, store: s })
    }

    fn p(&self, g: &mut Graph, name: &str) -> Result<Var> {
        Ok(g.param_named(name)?)
    }

    fn linear(&self, g: &mut Graph, x: Var, name: &str) -> Result<Var> {
        let w = self.p(g, &format!("{name}.w"))?;
        let b = self.p(g, &format!("{name}.b"))?;
        Ok(g.linear(x, w, b)?)
    }

    fn ln(&self, g: &mut Graph, x: Var, name: &str) -> Result<Var> {
        let gain = self.p(g, &format!("{name}.gain"))?;
        let bias = self.p(g, &format!("{name}.bias"))?;
        Ok(g.layer_norm(x, gain, bias, self.config.ln_eps)?)
    }

    fn ffn(&self, g: &mut Graph, x: Var, name: &str) -> Result<Var> {
        let h = self.linear(g, x, &format!("{name}.in"))?;
        let h = g.gelu(h);
        self.linear(g, h, &format!("{name}.out"))
    }

    fn attend(&self, g: &mut Graph, xq: Var, k: Var, v: Var, name: &str, spec: &AttentionSpec) -> Result<Var> {
        let q = self.linear(g, xq, &format!("{name}.q"))?;
        let a = g.attention(q, k, v, spec)?;
        self.linear(g, a, &format!("{name}.o"))
    }

    fn self_attend(&self, g: &mut Graph, x: Var, name: &str, spec: &AttentionSpec) -> Result<Var> {
        let k = self.linear(g, x, &format!("{name}.k"))?;
        let v = self.linear(g, x, &format!("{name}.v"))?;
        self.attend(g, x, k, v, name, spec)
    }

    /// Multi-modal input embedding `LN(token + segment + layout + visual)`
    /// for the real positions of each sequence, stacked.
    pub fn embed(&self, g: &mut Graph, seqs: &[&InputSequence]) -> Result<Var> {
        let n: usize = seqs.iter().map(|s| s.len).sum();
        let mut tok = Vec::with_capacity(n);
        let mut seg = Vec::with_capacity(n);
        let mut x0 = Vec::with_capacity(n);
        let mut x1 = Vec::with_capacity(n);
        let mut y0 = Vec::with_capacity(n);
        let mut y1 = Vec::with_capacity(n);
        let mut vis = Vec::with_capacity(n);
        for s in seqs {
            for i in 0..s.len {
                tok.push(s.token_ids[i] as usize);
                seg.push(s.seg_ids[i] as usize);
                let [a, b, c, d] = s.layout[i];
                x0.push(a as usize);
                y0.push(b as usize);
                x1.push(c as usize);
                y1.push(d as usize);
                vis.push(s.vis_ids[i] as usize);
            }
        }
        let tables = [
            ("embed.token", tok),
            ("embed.segment", seg),
            ("embed.layout_x", x0),
            ("embed.layout_y", y0),
            ("embed.layout_x", x1),
            ("embed.layout_y", y1),
            ("embed.visual", vis),
        ];
        let mut sum: Option<Var> = None;
        for (name, ids) in &tables {
            let t = self.p(g, name)?;
            let e = g.gather(t, ids)?;
            sum = Some(match sum {
                None => e,
                Some(acc) => g.add(acc, e)?,
            });
        }
        self.ln(g, sum.expect("seven tables"), "embed.ln")
    }

    /// Encodes each sequence independently; returns the stacked final states.
    pub fn encode(&self, g: &mut Graph, seqs: &[&InputSequence]) -> Result<Var> {
        let z = self.embed(g, seqs)?;
        let positions: Vec<usize> = seqs.iter().flat_map(|s| 0..s.len).collect();
        let table = self.p(g, "embed.position")?;
        let pos = g.gather(table, &positions)?;
        let x = g.add(z, pos)?;
        let mut x = g.dropout(x, site(ENC, 0, 0));
        let lens: Vec<usize> = seqs.iter().map(|s| s.len).collect();
        let spec = AttentionSpec::self_blocks(self.config.heads, &lens, false);
        for l in 0..self.config.layers {
            let p = format!("encoder.{l}");
            let h = self.ln(g, x, &format!("{p}.ln_attn"))?;
            let a = self.self_attend(g, h, &format!("{p}.attn"), &spec)?;
            let a = g.dropout(a, site(ENC, l, 1));
            x = g.add(x, a)?;
            let h = self.ln(g, x, &format!("{p}.ln_ffn"))?;
            let f = self.ffn(g, h, &format!("{p}.ffn"))?;
            let f = g.dropout(f, site(ENC, l, 2));
            x = g.add(x, f)?;
        }
        self.ln(g, x, "encoder.ln_final")
    }

    /// Keys and values of every decoder cross-attention block over `memory`.
    pub fn memory_kv(&self, g: &mut Graph, memory: Var) -> Result<MemoryKv> {
        let mut kv = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let k = self.linear(g, memory, &format!("decoder.{l}.cross.k"))?;
            let v = self.linear(g, memory, &format!("decoder.{l}.cross.v"))?;
            kv.push((k, v));
        }
        Ok(MemoryKv { kv })
    }

    /// Final decoder states for each `(input tokens, memory span)` pair,
    /// stacked in order.
    pub fn decode_states(&self, g: &mut Graph, memory: &MemoryKv, inputs: &[(&[u32], MemorySpan)]) -> Result<Var> {
        let mut tok = Vec::new();
        let mut pos = Vec::new();
        let mut lens = Vec::with_capacity(inputs.len());
        let mut cross = Vec::with_capacity(inputs.len());
        let mut row = 0;
        for (ids, span) in inputs {
            if ids.len() > self.config.target_max + 1 {
                return Err(ModelError::Config {
                    field: "target_max".into(),
                    message: format!("decoder input of {} tokens", ids.len()),
                });
            }
            tok.extend(ids.iter().map(|&t| t as usize));
            pos.extend(0..ids.len());
            lens.push(ids.len());
            cross.push(AttnBlock { q_start: row, q_len: ids.len(), k_start: span.start, k_len: span.len });
            row += ids.len();
        }
        let table = self.p(g, "embed.token")?;
        let e = g.gather(table, &tok)?;
        let ptable = self.p(g, "decoder.position")?;
        let pe = g.gather(ptable, &pos)?;
        let x = g.add(e, pe)?;
        let mut x = g.dropout(x, site(DEC, 0, 0));
        let self_spec = AttentionSpec::self_blocks(self.config.heads, &lens, true);
        let cross_spec = AttentionSpec { heads: self.config.heads, blocks: cross, causal: false, key_mask: None };
        for l in 0..self.config.layers {
            let p = format!("decoder.{l}");
            let h = self.ln(g, x, &format!("{p}.ln_self"))?;
            let a = self.self_attend(g, h, &format!("{p}.self"), &self_spec)?;
            let a = g.dropout(a, site(DEC, l, 1));
            x = g.add(x, a)?;
            let h = self.ln(g, x, &format!("{p}.ln_cross"))?;
            let (k, v) = memory.kv[l];
            let c = self.attend(g, h, k, v, &format!("{p}.cross"), &cross_spec)?;
            let c = g.dropout(c, site(DEC, l, 2));
            x = g.add(x, c)?;
            let h = self.ln(g, x, &format!("{p}.ln_ffn"))?;
            let f = self.ffn(g, h, &format!("{p}.ffn"))?;
            let f = g.dropout(f, site(DEC, l, 3));
            x = g.add(x, f)?;
        }
        self.ln(g, x, "decoder.ln_final")
    }

    /// Vocabulary logits through the tied token table, scaled by
    /// `1/sqrt(d_model)`.
    pub fn logits(&self, g: &mut Graph, states: Var) -> Result<Var> {
        let table = self.p(g, "embed.token")?;
        let states = g.scale(states, (self.config.d_model as f32).sqrt().recip());
        Ok(g.matmul_nt(states, table)?)
    }

    /// Row index of each sequence's first position in a packed encoding.
    pub fn first_rows(seqs: &[&InputSequence]) -> Vec<usize> {
        let mut rows = Vec::with_capacity(seqs.len());
        let mut at = 0;
        for s in seqs {
            rows.push(at);
            at += s.len;
        }
        rows
    }

    /// Cross-page layer over first states, grouped into decks of the given
    /// sizes. Returns only the update; the caller adds it to the input.
    pub fn cross_page_update(&self, g: &mut Graph, h: Var, deck_sizes: &[usize]) -> Result<Var> {
        let spec = AttentionSpec::self_blocks(self.config.heads, deck_sizes, false);
        let n = self.ln(g, h, "pages.ln_attn")?;
        let a = self.self_attend(g, n, "pages.attn", &spec)?;
        let a = g.dropout(a, site(HIER, 0, 1));
        let mid = g.add(h, a)?;
        let n = self.ln(g, mid, "pages.ln_ffn")?;
        let f = self.ffn(g, n, "pages.ffn")?;
        let f = g.dropout(f, site(HIER, 0, 2));
        Ok(g.add(a, f)?)
    }

    /// Two-layer head giving one relevance logit per row.
    pub fn selector_logits(&self, g: &mut Graph, h: Var) -> Result<Var> {
        let x = self.linear(g, h, "select.hidden")?;
        let x = g.gelu(x);
        self.linear(g, x, "select.out")
    }

    /// Page relevance logits from the first encoder state of each page.
    /// `first_rows` are grouped into decks of `deck_sizes` consecutive pages.
    pub fn page_logits(&self, g: &mut Graph, encoded: Var, first_rows: &[usize], deck_sizes: &[usize]) -> Result<Var> {
        let h = g.select_rows(encoded, first_rows)?;
        let h = match self.config.selector {
            SelectorKind::Hierarchical => {
                let update = self.cross_page_update(g, h, deck_sizes)?;
                g.add(h, update)?
            }
            _ => h,
        };
        self.selector_logits(g, h)
    }

    /// Embedding of a single sequence as a plain tensor (`[len, d]`).
    pub fn embed_inputs(&self, seq: &InputSequence) -> Result<Tensor> {
        let mut g = Graph::new(&self.store);
        let v = self.embed(&mut g, &[seq])?;
        Ok(g.value(v).clone())
    }
}
