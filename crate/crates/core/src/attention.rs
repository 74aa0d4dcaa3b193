//! Attention and graph-convolution kernels.
//!
//! All kernels accept either a single `[n, d]` matrix or a batch `[b, n, d]` of
//! independent matrices and return the same rank they were given. Batching is
//! how the encoder runs one block over every node (or every time step) at once.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Projections of a multi-head attention sublayer.
#[derive(Clone, Debug)]
pub struct MhaParams {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
    pub b_q: Option<Var>,
    pub b_k: Option<Var>,
    pub b_v: Option<Var>,
    pub b_o: Option<Var>,
    pub heads: usize,
}

impl MhaParams {
    /// Bias-free parameters.
    pub fn new(w_q: Var, w_k: Var, w_v: Var, w_o: Var, heads: usize) -> Self {
        Self {
            w_q,
            w_k,
            w_v,
            w_o,
            b_q: None,
            b_k: None,
            b_v: None,
            b_o: None,
            heads,
        }
    }

    fn validate(&self, tape: &Tape, d_model: usize) -> Result<usize> {
        if self.heads == 0 || d_model % self.heads != 0 {
            return Err(Error::Param(format!(
                "d_model {d_model} is not divisible by {} heads",
                self.heads
            )));
        }
        for w in [self.w_q, self.w_k, self.w_v, self.w_o] {
            if tape.shape(w) != [d_model, d_model] {
                return Err(Error::shape("attention weight", tape.shape(w), &[d_model, d_model]));
            }
        }
        Ok(d_model / self.heads)
    }
}

/// Activation applied by graph convolutions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Identity => Ok(x),
        }
    }
}

/// Parameters of a dynamic-adjacency graph convolution.
#[derive(Clone, Debug)]
pub struct GcnParams {
    pub w_q: Var,
    pub w_k: Var,
    pub theta: Var,
    pub activation: Activation,
}

impl GcnParams {
    fn validate(&self, tape: &Tape, d_model: usize) -> Result<()> {
        for w in [self.w_q, self.w_k, self.theta] {
            if tape.shape(w) != [d_model, d_model] {
                return Err(Error::shape("gcn weight", tape.shape(w), &[d_model, d_model]));
            }
        }
        Ok(())
    }
}

/// Promotes `[n, d]` to `[1, n, d]`; reports whether it did.
fn batched(tape: &mut Tape, x: Var) -> Result<(Var, bool)> {
    match tape.shape(x).len() {
        2 => {
            let s = tape.shape(x).to_vec();
            Ok((tape.reshape(x, &[1, s[0], s[1]])?, true))
        }
        3 => Ok((x, false)),
        _ => Err(Error::shape("attention input", tape.shape(x), &[])),
    }
}

fn unbatched(tape: &mut Tape, x: Var, squeeze: bool) -> Result<Var> {
    if squeeze {
        let s = tape.shape(x).to_vec();
        tape.reshape(x, &[s[1], s[2]])
    } else {
        Ok(x)
    }
}

/// `[b, n, K·dh] -> [b·K, n, dh]`
fn split_heads(tape: &mut Tape, x: Var, heads: usize) -> Result<Var> {
    if heads == 1 {
        return Ok(x);
    }
    let s = tape.shape(x).to_vec();
    let (b, n, d) = (s[0], s[1], s[2]);
    let x = tape.reshape(x, &[b, n, heads, d / heads])?;
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(x, &[b * heads, n, d / heads])
}

/// `[b·K, n, dh] -> [b, n, K·dh]`
fn merge_heads(tape: &mut Tape, x: Var, heads: usize) -> Result<Var> {
    if heads == 1 {
        return Ok(x);
    }
    let s = tape.shape(x).to_vec();
    let (bk, n, dh) = (s[0], s[1], s[2]);
    let x = tape.reshape(x, &[bk / heads, heads, n, dh])?;
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(x, &[bk / heads, n, heads * dh])
}

/// Per-head softmax scores `[b·K, m, n]` for queries from `xq` and keys from `xkv`.
fn scores(
    tape: &mut Tape,
    xq: Var,
    xkv: Var,
    w_q: (Var, Option<Var>),
    w_k: (Var, Option<Var>),
    heads: usize,
    scale: f64,
    causal: bool,
) -> Result<Var> {
    let q = tape.linear(xq, w_q.0, w_q.1)?;
    let k = tape.linear(xkv, w_k.0, w_k.1)?;
    let q = split_heads(tape, q, heads)?;
    let k = split_heads(tape, k, heads)?;
    let logits = tape.bmm(q, k, true)?;
    let logits = tape.scale(logits, 1.0 / scale)?;
    let logits = if causal { tape.causal_mask(logits)? } else { logits };
    tape.softmax(logits, 1.0)
}

/// Multi-head scaled dot-product attention with queries from `xq` and keys and
/// values from `xkv`; both `[b, *, d_model]`.
fn attend(tape: &mut Tape, xq: Var, xkv: Var, p: &MhaParams, causal: bool) -> Result<Var> {
    let d_model = *tape.shape(xq).last().unwrap();
    let d_head = p.validate(tape, d_model)?;
    if tape.shape(xkv).last() != Some(&d_model) || tape.shape(xq)[0] != tape.shape(xkv)[0] {
        return Err(Error::shape("attention", tape.shape(xq), tape.shape(xkv)));
    }
    let s = scores(
        tape,
        xq,
        xkv,
        (p.w_q, p.b_q),
        (p.w_k, p.b_k),
        p.heads,
        (d_head as f64).sqrt(),
        causal,
    )?;
    let v = tape.linear(xkv, p.w_v, p.b_v)?;
    let v = split_heads(tape, v, p.heads)?;
    let h = tape.bmm(s, v, false)?;
    let h = merge_heads(tape, h, p.heads)?;
    tape.linear(h, p.w_o, p.b_o)
}

/// Self-attention over the rows of `x` (`[n, d]` or `[b, n, d]`).
///
/// With `causal`, row `i` only attends to rows `j <= i`.
pub fn multi_head_attention(tape: &mut Tape, x: Var, p: &MhaParams, causal: bool) -> Result<Var> {
    let (x, squeeze) = batched(tape, x)?;
    if causal && tape.shape(x)[1] == 0 {
        return Err(Error::Param("causal mask requested for an empty sequence".into()));
    }
    let out = attend(tape, x, x, p, causal)?;
    unbatched(tape, out, squeeze)
}

/// Attention from the rows of `queries` to the rows of `memory`.
pub fn cross_attention(tape: &mut Tape, queries: Var, memory: Var, p: &MhaParams) -> Result<Var> {
    let (q, squeeze) = batched(tape, queries)?;
    let (m, _) = batched(tape, memory)?;
    let out = attend(tape, q, m, p, false)?;
    unbatched(tape, out, squeeze)
}

/// Softmax score matrix of one head, `[n, n]` (or `[b, n, n]`).
pub fn attention_scores(tape: &mut Tape, x: Var, p: &MhaParams, head: usize, causal: bool) -> Result<Var> {
    if head >= p.heads {
        return Err(Error::Param(format!("head {head} out of range for {} heads", p.heads)));
    }
    let (x, squeeze) = batched(tape, x)?;
    let d_model = *tape.shape(x).last().unwrap();
    let d_head = p.validate(tape, d_model)?;
    let b = tape.shape(x)[0];
    let n = tape.shape(x)[1];
    let s = scores(
        tape,
        x,
        x,
        (p.w_q, p.b_q),
        (p.w_k, p.b_k),
        p.heads,
        (d_head as f64).sqrt(),
        causal,
    )?;
    let s = tape.reshape(s, &[b, p.heads, n, n])?;
    let s = tape.narrow(s, 1, head, 1)?;
    let s = tape.reshape(s, &[b, n, n])?;
    unbatched(tape, s, squeeze)
}

/// Node-similarity adjacency `softmax((Z Wq)(Z Wk)ᵀ / √d_model)`.
pub fn dynamic_adjacency(tape: &mut Tape, z: Var, p: &GcnParams) -> Result<Var> {
    let (z, squeeze) = batched(tape, z)?;
    let d_model = *tape.shape(z).last().unwrap();
    p.validate(tape, d_model)?;
    let a = scores(
        tape,
        z,
        z,
        (p.w_q, None),
        (p.w_k, None),
        1,
        (d_model as f64).sqrt(),
        false,
    )?;
    unbatched(tape, a, squeeze)
}

/// Graph convolution `σ(Ã Z Θ)`, with `Ã` the symmetric degree normalisation of
/// `a` when `normalize` is set and `a` itself otherwise.
pub fn gcn_layer(tape: &mut Tape, z: Var, a: Var, p: &GcnParams, normalize: bool) -> Result<Var> {
    let (z, squeeze) = batched(tape, z)?;
    let (a, _) = batched(tape, a)?;
    let zs = tape.shape(z).to_vec();
    let as_ = tape.shape(a).to_vec();
    if as_[0] != zs[0] || as_[1] != zs[1] || as_[2] != zs[1] {
        return Err(Error::shape("gcn_layer", &as_, &zs));
    }
    p.validate(tape, zs[2])?;
    let a = if normalize { tape.degree_normalize(a)? } else { a };
    let projected = tape.matmul(z, p.theta)?;
    let propagated = tape.bmm(a, projected, false)?;
    let out = p.activation.apply(tape, propagated)?;
    unbatched(tape, out, squeeze)
}

/// Single-head attention over nodes with the value projection removed, `Θ` as
/// the output projection and an activation on top. Computes
/// `σ((softmax(QKᵀ/√d) Z) Θ)` through the attention path.
pub fn modified_attention(tape: &mut Tape, z: Var, p: &GcnParams) -> Result<Var> {
    let (z, squeeze) = batched(tape, z)?;
    let d_model = *tape.shape(z).last().unwrap();
    p.validate(tape, d_model)?;
    let s = scores(
        tape,
        z,
        z,
        (p.w_q, None),
        (p.w_k, None),
        1,
        (d_model as f64).sqrt(),
        false,
    )?;
    let pooled = tape.bmm(s, z, false)?;
    let projected = tape.matmul(pooled, p.theta)?;
    let out = p.activation.apply(tape, projected)?;
    unbatched(tape, out, squeeze)
}
