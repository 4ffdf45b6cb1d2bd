//! Single-use reverse-mode tape.
//!
//! A [`Graph`] borrows a [`ParamStore`], records every operation applied to
//! it and, on [`Graph::backward`], walks the tape in reverse to produce
//! parameter gradients. Values are 2-D (`rows x cols`); scalars are `1 x 1`.

use crate::error::{shape_err, NumericsError, Result};
use crate::gemm::{matmul, matmul_nt, matmul_tn, sgemm_strided};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::rng::{stream_key, stream_uniform};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// One attention block of a packed batch: queries `q_start..q_start+q_len`
/// attend only to keys `k_start..k_start+k_len`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnBlock {
    pub q_start: usize,
    pub q_len: usize,
    pub k_start: usize,
    pub k_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionSpec {
    pub heads: usize,
    pub blocks: Vec<AttnBlock>,
    /// Query `i` of a block may only see keys `j <= i` of the same block.
    pub causal: bool,
    /// Global key mask; `false` keys get exactly zero weight.
    pub key_mask: Option<Vec<bool>>,
}

impl AttentionSpec {
    /// Self-attention over consecutive segments of the given lengths.
    pub fn self_blocks(heads: usize, lens: &[usize], causal: bool) -> Self {
        let mut blocks = Vec::with_capacity(lens.len());
        let mut start = 0;
        for &len in lens {
            blocks.push(AttnBlock {
                q_start: start,
                q_len: len,
                k_start: start,
                k_len: len,
            });
            start += len;
        }
        Self {
            heads,
            blocks,
            causal,
            key_mask: None,
        }
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    MatMulNT {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    AddRow {
        a: Var,
        bias: Var,
    },
    Scale {
        a: Var,
        s: f32,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f32>,
        rstd: Vec<f32>,
    },
    Gelu {
        x: Var,
        tanh: Vec<f32>,
    },
    Dropout {
        x: Var,
        mask: Vec<f32>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        spec: AttentionSpec,
        probs: Vec<f32>,
        offsets: Vec<usize>,
    },
    ConcatRows {
        parts: Vec<Var>,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        ignore: usize,
        probs: Vec<f32>,
        count: usize,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<f32>,
    },
    Dot {
        x: Var,
        w: Vec<f32>,
    },
    WeightedSum {
        terms: Vec<(Var, f32)>,
    },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
}

/// Training-mode settings: dropout masks are keyed by `(seed, step, layer key, index)`.
#[derive(Clone, Copy, Debug)]
pub struct DropoutCtx {
    pub rate: f32,
    pub seed: u64,
    pub step: u64,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    dropout: Option<DropoutCtx>,
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)

/// `tanh` through a single `exp`; absolute error stays near f32 epsilon.
fn fast_tanh(u: f32) -> f32 {
    let u = u.clamp(-15.0, 15.0);
    1.0 - 2.0 / ((2.0 * u).exp() + 1.0)
}

impl<'s> Graph<'s> {
    /// Inference graph: dropout is the identity.
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            dropout: None,
        }
    }

    pub fn training(store: &'s ParamStore, rate: f32, seed: u64, step: u64) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            dropout: (rate > 0.0).then_some(DropoutCtx { rate, seed, step }),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Option<Tensor>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(None, Op::Param(id))
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let id = self.store.id(name)?;
        Ok(self.param(id))
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Some(t), Op::Leaf)
    }

    /// Row lookup: `out[i] = table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, cols) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(NumericsError::IdOutOfRange { id, rows });
            }
            out.extend_from_slice(t.row(id));
        }
        let value = Tensor::from_rows(ids.len(), cols, out)?;
        Ok(self.push(
            Some(value),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims(a);
        let (k2, m) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul", format!("[{n},{k}] x [{k2},{m}]")));
        }
        let mut out = vec![0.0; n * m];
        matmul(self.value(a).data(), self.value(b).data(), &mut out, n, k, m);
        Ok(self.push(Some(Tensor::from_rows(n, m, out)?), Op::MatMul { a, b }))
    }

    /// `a * b^T`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims(a);
        let (m, k2) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul_nt", format!("[{n},{k}] x [{m},{k2}]^T")));
        }
        let mut out = vec![0.0; n * m];
        matmul_nt(self.value(a).data(), self.value(b).data(), &mut out, n, k, m);
        Ok(self.push(Some(Tensor::from_rows(n, m, out)?), Op::MatMulNT { a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", format!("{:?} + {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Some(value), Op::Add { a, b }))
    }

    /// Broadcast-add a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (n, c) = self.dims(a);
        let tb = self.value(bias);
        if tb.len() != c {
            return Err(shape_err("add_row", format!("[{n},{c}] + {:?}", tb.shape())));
        }
        let b = tb.data();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(c) {
            for (x, y) in row.iter_mut().zip(b) {
                *x += *y;
            }
        }
        Ok(self.push(Some(Tensor::from_rows(n, c, out)?), Op::AddRow { a, bias }))
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        let t = self.value(a);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x * s).collect())
            .expect("same shape");
        self.push(Some(value), Op::Scale { a, s })
    }

    /// `x W + b` with `W: [in, out]`, `b: [1, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    /// Row-wise layer normalization with affine `gain`/`bias` (`1 x cols` each).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f32) -> Result<Var> {
        let (n, c) = self.dims(x);
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(shape_err("layer_norm", "gain/bias width"));
        }
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0f32; n * c];
        let mut rstd = vec![0.0f32; n];
        let mut out = vec![0.0f32; n * c];
        for i in 0..n {
            let row = &xs[i * c..(i + 1) * c];
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / c as f64;
            let var = row
                .iter()
                .map(|&v| {
                    let d = v as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / c as f64;
            let r = 1.0 / (var + eps as f64).sqrt();
            rstd[i] = r as f32;
            for j in 0..c {
                let h = ((row[j] as f64 - mean) * r) as f32;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        Ok(self.push(
            Some(Tensor::from_rows(n, c, out)?),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        ))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let tanh: Vec<f32> = t.data().iter().map(|&v| fast_tanh(GELU_C * (v + 0.044715 * v * v * v))).collect();
        let data = t.data().iter().zip(&tanh).map(|(&v, &th)| 0.5 * v * (1.0 + th)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(Some(value), Op::Gelu { x, tanh })
    }

    /// Inverted dropout; identity outside training. `layer` distinguishes call sites.
    pub fn dropout(&mut self, x: Var, layer: u64) -> Var {
        let Some(ctx) = self.dropout else {
            return x;
        };
        let t = self.value(x);
        let keep = 1.0 / (1.0 - ctx.rate);
        let key = stream_key(ctx.seed, ctx.step, layer);
        let mask: Vec<f32> = (0..t.len())
            .map(|i| {
                if stream_uniform(key, i as u64) < ctx.rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(Some(value), Op::Dropout { x, mask })
    }

    /// Scaled dot-product attention with `spec.heads` heads over packed blocks.
    /// `q: [nq, d]`, `k, v: [nk, d]`; output `[nq, d]`. Query rows not covered
    /// by any block produce zeros.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, spec: &AttentionSpec) -> Result<Var> {
        let (nq, d) = self.dims(q);
        let (nk, dk) = self.dims(k);
        let (nv, dv) = self.dims(v);
        if dk != d || dv != d || nv != nk {
            return Err(shape_err(
                "attention",
                format!("q [{nq},{d}] k [{nk},{dk}] v [{nv},{dv}]"),
            ));
        }
        if spec.heads == 0 || d % spec.heads != 0 {
            return Err(shape_err(
                "attention",
                format!("{} heads do not divide width {d}", spec.heads),
            ));
        }
        if let Some(mask) = &spec.key_mask {
            if mask.len() != nk {
                return Err(shape_err("attention", "key mask length"));
            }
        }
        for b in &spec.blocks {
            if b.q_start + b.q_len > nq || b.k_start + b.k_len > nk {
                return Err(shape_err("attention", format!("block {b:?} exceeds [{nq}, {nk}]")));
            }
        }
        let heads = spec.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let qd = self.value(q).data();
        let kd = self.value(k).data();
        let vd = self.value(v).data();
        let mut out = vec![0.0f32; nq * d];
        let mut offsets = Vec::with_capacity(spec.blocks.len() * heads + 1);
        let total: usize = spec.blocks.iter().map(|b| b.q_len * b.k_len).sum::<usize>() * heads;
        let mut probs = vec![0.0f32; total];
        let mut off = 0;
        for b in &spec.blocks {
            let allowed = |i: usize, j: usize| -> bool {
                if spec.causal && j > i {
                    return false;
                }
                match &spec.key_mask {
                    Some(m) => m[b.k_start + j],
                    None => true,
                }
            };
            for h in 0..heads {
                offsets.push(off);
                let p = &mut probs[off..off + b.q_len * b.k_len];
                sgemm_strided(
                    b.q_len,
                    dh,
                    b.k_len,
                    scale,
                    qd[b.q_start * d + h * dh..].as_ptr(),
                    d as isize,
                    1,
                    kd[b.k_start * d + h * dh..].as_ptr(),
                    1,
                    d as isize,
                    p.as_mut_ptr(),
                    b.k_len as isize,
                    1,
                );
                for i in 0..b.q_len {
                    let row = &mut p[i * b.k_len..(i + 1) * b.k_len];
                    let mut mx = f32::NEG_INFINITY;
                    for (j, &s) in row.iter().enumerate() {
                        if allowed(i, j) && s > mx {
                            mx = s;
                        }
                    }
                    if mx == f32::NEG_INFINITY {
                        row.fill(0.0);
                        continue;
                    }
                    let mut sum = 0.0f64;
                    for (j, s) in row.iter_mut().enumerate() {
                        if allowed(i, j) {
                            let e = (*s - mx).exp();
                            *s = e;
                            sum += e as f64;
                        } else {
                            *s = 0.0;
                        }
                    }
                    let inv = (1.0 / sum) as f32;
                    for s in row.iter_mut() {
                        *s *= inv;
                    }
                }
                if b.q_len > 0 && b.k_len > 0 {
                    sgemm_strided(
                        b.q_len,
                        b.k_len,
                        dh,
                        1.0,
                        p.as_ptr(),
                        b.k_len as isize,
                        1,
                        vd[b.k_start * d + h * dh..].as_ptr(),
                        d as isize,
                        1,
                        out[b.q_start * d + h * dh..].as_mut_ptr(),
                        d as isize,
                        1,
                    );
                }
                off += b.q_len * b.k_len;
            }
        }
        offsets.push(off);
        Ok(self.push(
            Some(Tensor::from_rows(nq, d, out)?),
            Op::Attention {
                q,
                k,
                v,
                spec: spec.clone(),
                probs,
                offsets,
            },
        ))
    }

    /// Attention weights of block `block`, head `head` from an attention node
    /// (row-major `q_len x k_len`).
    pub fn attention_weights(&self, att: Var, block: usize, head: usize) -> Option<&[f32]> {
        match &self.nodes[att.0].op {
            Op::Attention {
                spec,
                probs,
                offsets,
                ..
            } => {
                let idx = block * spec.heads + head;
                Some(&probs[offsets[idx]..offsets[idx + 1]])
            }
            _ => None,
        }
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat_rows", "no parts"));
        };
        let c = self.dims(first).1;
        let mut data = Vec::new();
        let mut n = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != c {
                return Err(shape_err("concat_rows", "column mismatch"));
            }
            n += t.rows();
            data.extend_from_slice(t.data());
        }
        Ok(self.push(
            Some(Tensor::from_rows(n, c, data)?),
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
        ))
    }

    /// `out[i] = x[rows[i]]`; duplicates allowed.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let (n, c) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if r >= n {
                return Err(NumericsError::IdOutOfRange { id: r, rows: n });
            }
            data.extend_from_slice(t.row(r));
        }
        Ok(self.push(
            Some(Tensor::from_rows(rows.len(), c, data)?),
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let rows: Vec<usize> = (start..start + len).collect();
        self.select_rows(x, &rows)
    }

    /// Mean token-level negative log-likelihood over rows whose target is not
    /// `ignore`. Returns a `1 x 1` scalar (0 when every row is ignored).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore: usize) -> Result<Var> {
        let (n, classes) = self.dims(logits);
        if targets.len() != n {
            return Err(shape_err(
                "cross_entropy",
                format!("{} targets for {n} rows", targets.len()),
            ));
        }
        for &t in targets {
            if t != ignore && t >= classes {
                return Err(NumericsError::TargetOutOfRange { target: t, classes });
            }
        }
        let ld = self.value(logits).data();
        let mut probs = vec![0.0f32; n * classes];
        let mut total = 0.0f64;
        let mut count = 0usize;
        for (i, &t) in targets.iter().enumerate() {
            if t == ignore {
                continue;
            }
            count += 1;
            let row = &ld[i * classes..(i + 1) * classes];
            let mx = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let mut sum = 0.0f64;
            for &z in row {
                sum += (z as f64 - mx).exp();
            }
            let lse = mx + sum.ln();
            total += lse - row[t] as f64;
            for j in 0..classes {
                probs[i * classes + j] = ((row[j] as f64 - lse).exp()) as f32;
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        Ok(self.push(
            Some(Tensor::scalar(loss as f32)),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore,
                probs,
                count,
            },
        ))
    }

    /// Mean binary cross-entropy on raw logits.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f32]) -> Result<Var> {
        let t = self.value(logits);
        if t.len() != targets.len() {
            return Err(shape_err("bce_with_logits", "target count"));
        }
        let mut total = 0.0f64;
        for (&x, &y) in t.data().iter().zip(targets) {
            let x = x as f64;
            total += x.max(0.0) - x * y as f64 + (-x.abs()).exp().ln_1p();
        }
        let loss = if targets.is_empty() {
            0.0
        } else {
            total / targets.len() as f64
        };
        Ok(self.push(
            Some(Tensor::scalar(loss as f32)),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
        ))
    }

    /// `sum_i x_i * w_i` as a scalar.
    pub fn dot(&mut self, x: Var, w: &[f32]) -> Result<Var> {
        let t = self.value(x);
        if t.len() != w.len() {
            return Err(shape_err("dot", "weight length"));
        }
        let s: f64 = t
            .data()
            .iter()
            .zip(w)
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum();
        Ok(self.push(
            Some(Tensor::scalar(s as f32)),
            Op::Dot {
                x,
                w: w.to_vec(),
            },
        ))
    }

    /// `sum_i w_i * x_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f32)]) -> Result<Var> {
        let mut s = 0.0f64;
        for &(v, w) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(shape_err("weighted_sum", "terms must be scalars"));
            }
            s += t.item() as f64 * w as f64;
        }
        Ok(self.push(
            Some(Tensor::scalar(s as f32)),
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
        ))
    }

    /// Reverse pass from a scalar `loss`; returns gradients for every
    /// parameter that the loss depends on.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut pg = Gradients::new(self.store.len());
        let mut grads: Vec<Option<Vec<f32>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![1.0; self.value(loss).len()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => pg.accumulate(*id, &g),
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let c = t.cols();
                    let acc = slot(&mut grads, *table, t.len());
                    for (i, &id) in ids.iter().enumerate() {
                        let dst = &mut acc[id * c..(id + 1) * c];
                        for (a, b) in dst.iter_mut().zip(&g[i * c..(i + 1) * c]) {
                            *a += *b;
                        }
                    }
                }
                Op::MatMul { a, b } => {
                    let (n, k) = self.dims(*a);
                    let m = self.dims(*b).1;
                    let bv = self.value(*b).data();
                    let av = self.value(*a).data();
                    matmul_nt(&g, bv, slot(&mut grads, *a, n * k), n, m, k);
                    matmul_tn(av, &g, slot(&mut grads, *b, k * m), n, k, m);
                }
                Op::MatMulNT { a, b } => {
                    let (n, k) = self.dims(*a);
                    let m = self.dims(*b).0;
                    let bv = self.value(*b).data();
                    let av = self.value(*a).data();
                    // dA = G B, dB = G^T A
                    matmul(&g, bv, slot(&mut grads, *a, n * k), n, m, k);
                    matmul_tn(&g, av, slot(&mut grads, *b, m * k), n, m, k);
                }
                Op::Add { a, b } => {
                    add_into(slot(&mut grads, *a, g.len()), &g);
                    add_into(slot(&mut grads, *b, g.len()), &g);
                }
                Op::AddRow { a, bias } => {
                    add_into(slot(&mut grads, *a, g.len()), &g);
                    let c = self.value(*bias).len();
                    let acc = slot(&mut grads, *bias, c);
                    for row in g.chunks(c) {
                        add_into(acc, row);
                    }
                }
                Op::Scale { a, s } => {
                    let acc = slot(&mut grads, *a, g.len());
                    for (x, y) in acc.iter_mut().zip(&g) {
                        *x += *y * *s;
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let c = self.value(*gain).len();
                    let n = g.len() / c;
                    let gv = self.value(*gain).data();
                    {
                        let dgain = slot(&mut grads, *gain, c);
                        for i in 0..n {
                            for j in 0..c {
                                dgain[j] += g[i * c + j] * xhat[i * c + j];
                            }
                        }
                    }
                    {
                        let dbias = slot(&mut grads, *bias, c);
                        for row in g.chunks(c) {
                            add_into(dbias, row);
                        }
                    }
                    let dx = slot(&mut grads, *x, n * c);
                    for i in 0..n {
                        let mut s1 = 0.0f64;
                        let mut s2 = 0.0f64;
                        for j in 0..c {
                            let dh = (g[i * c + j] * gv[j]) as f64;
                            s1 += dh;
                            s2 += dh * xhat[i * c + j] as f64;
                        }
                        let m1 = s1 / c as f64;
                        let m2 = s2 / c as f64;
                        let r = rstd[i] as f64;
                        for j in 0..c {
                            let dh = (g[i * c + j] * gv[j]) as f64;
                            dx[i * c + j] += (r * (dh - m1 - xhat[i * c + j] as f64 * m2)) as f32;
                        }
                    }
                }
                Op::Gelu { x, tanh } => {
                    let xv = self.value(*x).data();
                    let acc = slot(&mut grads, *x, g.len());
                    for i in 0..g.len() {
                        let v = xv[i];
                        let th = tanh[i];
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
                        let d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
                        acc[i] += g[i] * d;
                    }
                }
                Op::Dropout { x, mask } => {
                    let acc = slot(&mut grads, *x, g.len());
                    for i in 0..g.len() {
                        acc[i] += g[i] * mask[i];
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    spec,
                    probs,
                    offsets,
                } => {
                    self.attention_backward(&mut grads, &g, *q, *k, *v, spec, probs, offsets);
                }
                Op::ConcatRows { parts } => {
                    let mut start = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        add_into(slot(&mut grads, p, len), &g[start..start + len]);
                        start += len;
                    }
                }
                Op::SelectRows { x, rows } => {
                    let t = self.value(*x);
                    let c = t.cols();
                    let acc = slot(&mut grads, *x, t.len());
                    for (i, &r) in rows.iter().enumerate() {
                        add_into(&mut acc[r * c..(r + 1) * c], &g[i * c..(i + 1) * c]);
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    ignore,
                    probs,
                    count,
                } => {
                    if *count == 0 {
                        continue;
                    }
                    let classes = self.dims(*logits).1;
                    let scale = g[0] / *count as f32;
                    let acc = slot(&mut grads, *logits, probs.len());
                    for (i, &t) in targets.iter().enumerate() {
                        if t == *ignore {
                            continue;
                        }
                        let row = &mut acc[i * classes..(i + 1) * classes];
                        let p = &probs[i * classes..(i + 1) * classes];
                        for j in 0..classes {
                            row[j] += scale * p[j];
                        }
                        row[t] -= scale;
                    }
                }
                Op::BceWithLogits { logits, targets } => {
                    let xv = self.value(*logits).data();
                    let n = targets.len() as f32;
                    let acc = slot(&mut grads, *logits, xv.len());
                    for i in 0..xv.len() {
                        let s = 1.0 / (1.0 + (-xv[i]).exp());
                        acc[i] += g[0] * (s - targets[i]) / n;
                    }
                }
                Op::Dot { x, w } => {
                    let acc = slot(&mut grads, *x, w.len());
                    for (a, b) in acc.iter_mut().zip(w) {
                        *a += g[0] * *b;
                    }
                }
                Op::WeightedSum { terms } => {
                    for &(v, w) in terms {
                        slot(&mut grads, v, 1)[0] += g[0] * w;
                    }
                }
            }
        }
        pg
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        grads: &mut [Option<Vec<f32>>],
        g: &[f32],
        q: Var,
        k: Var,
        v: Var,
        spec: &AttentionSpec,
        probs: &[f32],
        offsets: &[usize],
    ) {
        let (nq, d) = self.dims(q);
        let nk = self.dims(k).0;
        let heads = spec.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let qd = self.value(q).data();
        let kd = self.value(k).data();
        let vd = self.value(v).data();
        let mut dq = vec![0.0f32; nq * d];
        let mut dk = vec![0.0f32; nk * d];
        let mut dv = vec![0.0f32; nk * d];
        let mut idx = 0;
        for b in &spec.blocks {
            for h in 0..heads {
                let p = &probs[offsets[idx]..offsets[idx + 1]];
                idx += 1;
                if b.q_len == 0 || b.k_len == 0 {
                    continue;
                }
                let go = g[b.q_start * d + h * dh..].as_ptr();
                // dV += P^T dO
                sgemm_strided(
                    b.k_len,
                    b.q_len,
                    dh,
                    1.0,
                    p.as_ptr(),
                    1,
                    b.k_len as isize,
                    go,
                    d as isize,
                    1,
                    dv[b.k_start * d + h * dh..].as_mut_ptr(),
                    d as isize,
                    1,
                );
                // dP = dO V^T
                let mut dp = vec![0.0f32; b.q_len * b.k_len];
                sgemm_strided(
                    b.q_len,
                    dh,
                    b.k_len,
                    1.0,
                    go,
                    d as isize,
                    1,
                    vd[b.k_start * d + h * dh..].as_ptr(),
                    1,
                    d as isize,
                    dp.as_mut_ptr(),
                    b.k_len as isize,
                    1,
                );
                // dS = P * (dP - rowsum(dP * P))
                for i in 0..b.q_len {
                    let pr = &p[i * b.k_len..(i + 1) * b.k_len];
                    let dr = &mut dp[i * b.k_len..(i + 1) * b.k_len];
                    let mut dotp = 0.0f64;
                    for j in 0..b.k_len {
                        dotp += (pr[j] * dr[j]) as f64;
                    }
                    let dotp = dotp as f32;
                    for j in 0..b.k_len {
                        dr[j] = pr[j] * (dr[j] - dotp);
                    }
                }
                // dQ += scale dS K ; dK += scale dS^T Q
                sgemm_strided(
                    b.q_len,
                    b.k_len,
                    dh,
                    scale,
                    dp.as_ptr(),
                    b.k_len as isize,
                    1,
                    kd[b.k_start * d + h * dh..].as_ptr(),
                    d as isize,
                    1,
                    dq[b.q_start * d + h * dh..].as_mut_ptr(),
                    d as isize,
                    1,
                );
                sgemm_strided(
                    b.k_len,
                    b.q_len,
                    dh,
                    scale,
                    dp.as_ptr(),
                    1,
                    b.k_len as isize,
                    qd[b.q_start * d + h * dh..].as_ptr(),
                    d as isize,
                    1,
                    dk[b.k_start * d + h * dh..].as_mut_ptr(),
                    d as isize,
                    1,
                );
            }
        }
        add_into(slot(grads, q, nq * d), &dq);
        add_into(slot(grads, k, nk * d), &dk);
        add_into(slot(grads, v, nk * d), &dv);
    }
}

fn slot(grads: &mut [Option<Vec<f32>>], v: Var, len: usize) -> &mut Vec<f32> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f32], src: &[f32]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += *b;
    }
}
