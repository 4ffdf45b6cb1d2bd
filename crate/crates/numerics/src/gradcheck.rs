//! Central finite-difference gradient checking against [`Graph::backward`].

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};

pub const DENOMINATOR_FLOOR: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates with relative error below `tolerance`.
    pub within: usize,
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn fraction_within(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.within as f64 / self.checked as f64
        }
    }
}

/// Relative error with a floor on the denominator so that coordinates whose
/// true gradient is ~0 are compared absolutely.
///
/// At `f32` with `h = 1e-3`, the central difference of an O(1) loss carries
/// roughly 1e-4 of rounding noise, so gradients much smaller than
/// [`DENOMINATOR_FLOOR`] cannot be resolved relatively.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks `d loss / d theta` for every scalar of the listed parameters (or a
/// strided subset of at most `max_per_param` coordinates each).
pub fn check<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    h: f32,
    tolerance: f64,
    max_per_param: usize,
    loss_fn: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    check_in(store, params, h, tolerance, max_per_param, |s| Graph::new(s), loss_fn)
}

/// Like [`check`], with every graph built by `new_graph` (for example a
/// training graph, so dropout masks are part of the function).
pub fn check_in<N, F>(
    store: &mut ParamStore,
    params: &[ParamId],
    h: f32,
    tolerance: f64,
    max_per_param: usize,
    new_graph: N,
    loss_fn: F,
) -> Result<GradCheckReport>
where
    N: for<'a> Fn(&'a ParamStore) -> Graph<'a>,
    F: Fn(&mut Graph) -> Result<Var>,
{
    let analytic = {
        let mut g = new_graph(store);
        let loss = loss_fn(&mut g)?;
        g.backward(loss)
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = new_graph(s);
        let loss = loss_fn(&mut g)?;
        Ok(g.value(loss).item() as f64)
    };
    let mut report = GradCheckReport {
        checked: 0,
        within: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    for &id in params {
        let n = store.get(id).value.len();
        let stride = n.div_ceil(max_per_param.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + h;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig - h;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            // Use the actually representable step.
            let step = ((orig + h) as f64) - ((orig - h) as f64);
            let numeric = (plus - minus) / step;
            let a = analytic.get(id).map_or(0.0, |g| g[i] as f64);
            let err = relative_error(a, numeric, DENOMINATOR_FLOOR);
            if std::env::var("GRADCHECK_DEBUG").is_ok() && err > tolerance {
                eprintln!("{} [{i}] analytic {a:.6e} numeric {numeric:.6e}", store.get(id).name);
            }
            report.checked += 1;
            if err < tolerance {
                report.within += 1;
            }
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.get(id).name.clone(), i));
            }
        }
    }
    Ok(report)
}

/// Step, tolerance and acceptance thresholds used by [`layer_suite`].
pub const SUITE_STEP: f32 = 1e-3;
pub const SUITE_TOLERANCE: f64 = 1e-2;
pub const SUITE_MIN_FRACTION: f64 = 0.95;
pub const SUITE_MAX_ERROR: f64 = 5e-2;

impl GradCheckReport {
    /// At least 95% of coordinates within tolerance and none above 5e-2.
    pub fn passes_suite(&self) -> bool {
        self.fraction_within() >= SUITE_MIN_FRACTION && self.max_rel_error <= SUITE_MAX_ERROR
    }
}

mod suite {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::{check, check_in, GradCheckReport, SUITE_STEP as H, SUITE_TOLERANCE as TOL};
    use crate::error::Result;
    use crate::graph::{AttentionSpec, AttnBlock, Graph, Var};
    use crate::params::{ParamId, ParamStore};

    fn weights(n: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Projects an output onto fixed random weights so every coordinate matters.
    fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
        let n = g.value(y).len();
        g.dot(y, &weights(n, seed))
    }

    fn ids(store: &ParamStore) -> Vec<ParamId> {
        store.iter().map(|(id, _)| id).collect()
    }

    fn store(seed: u64, shapes: &[(&str, usize, usize, f32)]) -> Result<ParamStore> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        for &(name, r, c, std) in shapes {
            s.add_normal(name, r, c, std, &mut rng)?;
        }
        Ok(s)
    }

    pub fn linear_gelu_scale() -> Result<GradCheckReport> {
        let mut s = store(10, &[("x", 5, 6, 1.0), ("w", 6, 4, 0.5), ("b", 1, 4, 0.5)])?;
        let params = ids(&s);
        check(&mut s, &params, H, TOL, 64, |g| {
            let x = g.param_named("x")?;
            let w = g.param_named("w")?;
            let b = g.param_named("b")?;
            let y = g.linear(x, w, b)?;
            let y = g.gelu(y);
            let y = g.scale(y, 1.5);
            project(g, y, 1)
        })
    }

    pub fn layer_norm() -> Result<GradCheckReport> {
        let mut s = store(11, &[("x", 4, 8, 1.0), ("gain", 1, 8, 1.0), ("bias", 1, 8, 1.0)])?;
        let params = ids(&s);
        check(&mut s, &params, H, TOL, 64, |g| {
            let x = g.param_named("x")?;
            let gain = g.param_named("gain")?;
            let bias = g.param_named("bias")?;
            let y = g.layer_norm(x, gain, bias, 1e-5)?;
            project(g, y, 2)
        })
    }

    pub fn gather_with_frozen_row() -> Result<GradCheckReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut s = ParamStore::new();
        s.add_zero_row_table("table", 6, 4, 1.0, &mut rng)?;
        let params = ids(&s);
        check(&mut s, &params, H, TOL, 64, |g| {
            let t = g.param_named("table")?;
            let y = g.gather(t, &[0, 3, 3, 5, 1])?;
            project(g, y, 3)
        })
    }

    pub fn attention_packed_blocks() -> Result<GradCheckReport> {
        let mut s = store(
            13,
            &[("x", 7, 8, 1.0), ("mem", 5, 8, 1.0), ("wq", 8, 8, 0.4), ("wk", 8, 8, 0.4), ("wv", 8, 8, 0.4), ("wo", 8, 8, 0.4)],
        )?;
        let params = ids(&s);
        let self_spec = AttentionSpec::self_blocks(2, &[3, 4], true);
        let cross_spec = AttentionSpec {
            heads: 4,
            blocks: vec![
                AttnBlock { q_start: 0, q_len: 3, k_start: 0, k_len: 2 },
                AttnBlock { q_start: 3, q_len: 4, k_start: 2, k_len: 3 },
            ],
            causal: false,
            key_mask: Some(vec![true, true, true, false, true]),
        };
        check(&mut s, &params, H, TOL, 64, |g| {
            let x = g.param_named("x")?;
            let mem = g.param_named("mem")?;
            let wq = g.param_named("wq")?;
            let wk = g.param_named("wk")?;
            let wv = g.param_named("wv")?;
            let wo = g.param_named("wo")?;
            let q = g.matmul(x, wq)?;
            let k = g.matmul(x, wk)?;
            let v = g.matmul(x, wv)?;
            let a = g.attention(q, k, v, &self_spec)?;
            let a = g.matmul(a, wo)?;
            let h = g.add(a, x)?;
            let q2 = g.matmul(h, wq)?;
            let k2 = g.matmul(mem, wk)?;
            let v2 = g.matmul(mem, wv)?;
            let c = g.attention(q2, k2, v2, &cross_spec)?;
            project(g, c, 4)
        })
    }

    pub fn cross_entropy_tied() -> Result<GradCheckReport> {
        let mut s = store(14, &[("h", 5, 6, 1.0), ("emb", 9, 6, 0.5)])?;
        let params = ids(&s);
        check(&mut s, &params, H, TOL, 64, |g| {
            let h = g.param_named("h")?;
            let e = g.param_named("emb")?;
            let logits = g.matmul_nt(h, e)?;
            let loss = g.cross_entropy(logits, &[1, 8, 0, 4, 2], 0)?;
            // scaled so gradients sit well above f32 noise
            Ok(g.scale(loss, 10.0))
        })
    }

    pub fn bce_rows_weighted_sum() -> Result<GradCheckReport> {
        let mut s = store(15, &[("a", 3, 4, 1.0), ("b", 2, 4, 1.0), ("w", 4, 1, 1.0)])?;
        let params = ids(&s);
        check(&mut s, &params, H, TOL, 64, |g| {
            let a = g.param_named("a")?;
            let b = g.param_named("b")?;
            let w = g.param_named("w")?;
            let cat = g.concat_rows(&[a, b])?;
            let sel = g.select_rows(cat, &[0, 4, 2, 4])?;
            let tail = g.slice_rows(cat, 1, 3)?;
            let logits = g.matmul(sel, w)?;
            let bce = g.bce_with_logits(logits, &[1.0, 0.0, 1.0, 0.0])?;
            let other = project(g, cat, 5)?;
            let more = project(g, tail, 6)?;
            g.weighted_sum(&[(bce, 3.0), (other, 0.5), (more, 1.0)])
        })
    }

    pub fn dropout_fixed_mask() -> Result<GradCheckReport> {
        let mut s = store(16, &[("x", 6, 8, 1.0), ("w", 8, 8, 0.5)])?;
        let params = ids(&s);
        check_in(&mut s, &params, H, TOL, 64, |st| Graph::training(st, 0.3, 99, 4), |g| {
            let x = g.param_named("x")?;
            let w = g.param_named("w")?;
            let y = g.matmul(x, w)?;
            let y = g.dropout(y, 7);
            project(g, y, 7)
        })
    }
}

/// Finite-difference checks of every differentiable layer, one report per
/// layer group.
pub fn layer_suite() -> Result<Vec<(&'static str, GradCheckReport)>> {
    Ok(vec![
        ("linear+gelu+scale", suite::linear_gelu_scale()?),
        ("layer_norm", suite::layer_norm()?),
        ("gather", suite::gather_with_frozen_row()?),
        ("attention", suite::attention_packed_blocks()?),
        ("cross_entropy", suite::cross_entropy_tied()?),
        ("bce/rows/weighted_sum", suite::bce_rows_weighted_sum()?),
        ("dropout", suite::dropout_fixed_mask()?),
    ])
}
