//! Transformer building blocks addressed by parameter-name prefix.

use crate::error::Result;
use crate::numerics::{Session, Var};

pub(crate) fn linear(s: &mut Session<'_>, x: Var, w: &str) -> Result<Var> {
    let w = s.param_named(w)?;
    s.tape.matmul(x, w)
}

pub(crate) fn linear_bias(s: &mut Session<'_>, x: Var, w: &str, b: &str) -> Result<Var> {
    let y = linear(s, x, w)?;
    let b = s.param_named(b)?;
    s.tape.add_row(y, b)
}

pub(crate) fn layer_norm(s: &mut Session<'_>, x: Var, prefix: &str) -> Result<Var> {
    let g = s.param_named(&format!("{prefix}.gain"))?;
    let b = s.param_named(&format!("{prefix}.bias"))?;
    s.tape.layer_norm(x, g, b)
}

/// Two-layer ReLU feed-forward network.
pub(crate) fn ffn(s: &mut Session<'_>, x: Var, prefix: &str) -> Result<Var> {
    let h = linear_bias(s, x, &format!("{prefix}.w1"), &format!("{prefix}.b1"))?;
    let h = s.tape.relu(h);
    linear_bias(s, h, &format!("{prefix}.w2"), &format!("{prefix}.b2"))
}

/// Scaled dot-product attention of `queries` over `keys`/`values` for one
/// head. `mask[t * m + i]` true hides key `i` from query `t`.
pub(crate) fn attend(
    s: &mut Session<'_>,
    queries: Var,
    keys: Var,
    values: Var,
    scale: f64,
    mask: Option<&[bool]>,
) -> Result<Var> {
    let kt = s.tape.transpose(keys);
    let mut scores = s.tape.matmul(queries, kt)?;
    if scale != 1.0 {
        scores = s.tape.scale(scores, scale);
    }
    if let Some(mask) = mask {
        scores = s.tape.masked_fill(scores, mask)?;
    }
    let weights = s.tape.softmax(scores);
    s.tape.matmul(weights, values)
}

/// Multi-head attention with `{prefix}.wq/wk/wv/wo` projections.
pub(crate) fn multi_head(
    s: &mut Session<'_>,
    prefix: &str,
    x_q: Var,
    x_kv: Var,
    heads: usize,
    mask: Option<&[bool]>,
) -> Result<Var> {
    let q = linear(s, x_q, &format!("{prefix}.wq"))?;
    let k = linear(s, x_kv, &format!("{prefix}.wk"))?;
    let v = linear(s, x_kv, &format!("{prefix}.wv"))?;
    let d = s.tape.shape(q).1;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = s.tape.slice_cols(q, h * dh, dh)?;
        let kh = s.tape.slice_cols(k, h * dh, dh)?;
        let vh = s.tape.slice_cols(v, h * dh, dh)?;
        outs.push(attend(s, qh, kh, vh, scale, mask)?);
    }
    let cat = if heads == 1 {
        outs[0]
    } else {
        s.tape.concat_cols(&outs)?
    };
    linear(s, cat, &format!("{prefix}.wo"))
}

/// Mask hiding future positions from each of `n` decoder steps.
pub(crate) fn causal_mask(n: usize) -> Vec<bool> {
    (0..n * n).map(|k| k % n > k / n).collect()
}
