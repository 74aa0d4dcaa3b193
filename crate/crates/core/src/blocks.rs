//! Encoder/decoder blocks: the post-norm attention block, the attention-free
//! residual + layer-norm + feedforward block left behind by pruning, and their
//! ablation variants.
//!
//! A block sees `[n, d_model]` matrices, batched as `[b, n, d_model]`. Whether
//! `n` runs over time steps or nodes is decided by how the encoder splits its
//! input, so temporal and spatial blocks share this implementation.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::attention::{multi_head_attention, MhaParams};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Mode, Tape, Var};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    TemporalAttention,
    SpatialAttention,
    Mlp,
}

impl BlockKind {
    pub fn is_attention(self) -> bool {
        !matches!(self, BlockKind::Mlp)
    }
}

/// Where the first layer norm sits relative to the first residual add.
///
/// `Outside` is `LN(Dropout(sublayer(E)) + E)`; `Inside` is
/// `LN(Dropout(sublayer(E))) + E`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPlacement {
    #[default]
    Outside,
    Inside,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub use_feedforward: bool,
    pub use_residual: bool,
    pub use_layernorm: bool,
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub dropout: f64,
    #[serde(default)]
    pub norm_placement: NormPlacement,
}

impl BlockSpec {
    pub fn new(kind: BlockKind, d_model: usize, d_ff: usize, heads: usize) -> Self {
        Self {
            kind,
            use_feedforward: true,
            use_residual: true,
            use_layernorm: true,
            d_model,
            d_ff,
            heads,
            dropout: 0.0,
            norm_placement: NormPlacement::Outside,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_ff == 0 {
            return Err(Error::Config("block widths must be positive".into()));
        }
        if self.kind.is_attention() && (self.heads == 0 || self.d_model % self.heads != 0) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }

    fn has_ln2(&self) -> bool {
        self.use_layernorm && self.use_feedforward
    }
}

/// Parameter names a block of `spec` owns under `prefix`, with their shapes.
pub fn block_param_shapes(spec: &BlockSpec, prefix: &str) -> Vec<(String, Vec<usize>)> {
    let d = spec.d_model;
    let mut out = Vec::new();
    if spec.kind.is_attention() {
        out.extend(attention_param_shapes(&format!("{prefix}.attn"), d));
    }
    if spec.use_layernorm {
        out.push((format!("{prefix}.ln1.gain"), vec![d]));
        out.push((format!("{prefix}.ln1.bias"), vec![d]));
    }
    if spec.use_feedforward {
        out.push((format!("{prefix}.ffn.w_f"), vec![d, spec.d_ff]));
        out.push((format!("{prefix}.ffn.b_f"), vec![spec.d_ff]));
        out.push((format!("{prefix}.ffn.w_b"), vec![spec.d_ff, d]));
        out.push((format!("{prefix}.ffn.b_b"), vec![d]));
    }
    if spec.has_ln2() {
        out.push((format!("{prefix}.ln2.gain"), vec![d]));
        out.push((format!("{prefix}.ln2.bias"), vec![d]));
    }
    out
}

pub(crate) fn attention_param_shapes(prefix: &str, d: usize) -> Vec<(String, Vec<usize>)> {
    ["q", "k", "v", "o"]
        .iter()
        .flat_map(|p| {
            [
                (format!("{prefix}.w_{p}"), vec![d, d]),
                (format!("{prefix}.b_{p}"), vec![d]),
            ]
        })
        .collect()
}

/// Initialises parameters by shape convention: weights Xavier-uniform, biases
/// zero, layer-norm gains one.
pub(crate) fn init_shapes(store: &mut ParamStore, shapes: &[(String, Vec<usize>)], rng: &mut dyn RngCore) {
    for (name, shape) in shapes {
        if name.ends_with(".gain") {
            store.init_ones(name.clone(), shape);
        } else if shape.len() == 2 {
            store.init_weight(name.clone(), shape[0], shape[1], rng);
        } else {
            store.init_zeros(name.clone(), shape);
        }
    }
}

pub fn init_block_params(spec: &BlockSpec, prefix: &str, store: &mut ParamStore, rng: &mut dyn RngCore) {
    init_shapes(store, &block_param_shapes(spec, prefix), rng);
}

/// Exact scalar parameter count of a block.
pub fn block_param_count(spec: &BlockSpec) -> u64 {
    block_param_shapes(spec, "")
        .iter()
        .map(|(_, s)| s.iter().product::<usize>() as u64)
        .sum()
}

/// FLOPs of multi-head attention with `n_q` queries over `n_kv` keys, including
/// projections and biases.
pub fn attention_flops(n_q: u64, n_kv: u64, d: u64, heads: u64) -> u64 {
    let proj = |rows: u64| 2 * rows * d * d + rows * d;
    let pairwise = n_q * n_kv;
    proj(n_q) + 2 * proj(n_kv) // Q, K, V
        + 2 * pairwise * d // QKᵀ
        + heads * pairwise // scaling
        + 5 * heads * pairwise // softmax
        + 2 * pairwise * d // S·V
        + proj(n_q) // output projection
}

/// FLOPs of the residual/norm wrapper around a sublayer on `[n, d]`.
pub(crate) fn wrapper_flops(spec: &BlockSpec, n: u64) -> u64 {
    let d = spec.d_model as u64;
    let mut f = 0;
    if spec.use_residual {
        f += n * d;
    }
    if spec.use_layernorm {
        f += 8 * n * d;
    }
    f
}

/// FLOPs of the feedforward tail (FFN, residual, second norm) on `[n, d]`.
pub(crate) fn ffn_tail_flops(spec: &BlockSpec, n: u64) -> u64 {
    if !spec.use_feedforward {
        return 0;
    }
    let (d, ff) = (spec.d_model as u64, spec.d_ff as u64);
    let mut f = 2 * n * d * ff + n * ff // expand + bias
        + n * ff // activation
        + 2 * n * ff * d + n * d; // contract + bias
    if spec.use_residual {
        f += n * d;
    }
    if spec.has_ln2() {
        f += 8 * n * d;
    }
    f
}

/// Inference FLOPs of one block applied to a single `[n, d_model]` matrix.
pub fn block_flops(spec: &BlockSpec, n: usize) -> u64 {
    let n = n as u64;
    let sub = if spec.kind.is_attention() {
        attention_flops(n, n, spec.d_model as u64, spec.heads as u64)
    } else {
        0
    };
    sub + wrapper_flops(spec, n) + ffn_tail_flops(spec, n)
}

/// Block parameters resolved on a tape.
pub struct BlockParams {
    pub attn: Option<MhaParams>,
    pub ln1: Option<(Var, Var)>,
    pub ffn: Option<[Var; 4]>,
    pub ln2: Option<(Var, Var)>,
}

pub(crate) fn resolve_mha(bound: &Bound, prefix: &str, heads: usize) -> Result<MhaParams> {
    Ok(MhaParams {
        w_q: bound.get(&format!("{prefix}.w_q"))?,
        w_k: bound.get(&format!("{prefix}.w_k"))?,
        w_v: bound.get(&format!("{prefix}.w_v"))?,
        w_o: bound.get(&format!("{prefix}.w_o"))?,
        b_q: bound.opt(&format!("{prefix}.b_q")),
        b_k: bound.opt(&format!("{prefix}.b_k")),
        b_v: bound.opt(&format!("{prefix}.b_v")),
        b_o: bound.opt(&format!("{prefix}.b_o")),
        heads,
    })
}

pub(crate) fn resolve_ln(bound: &Bound, prefix: &str) -> Result<(Var, Var)> {
    Ok((
        bound.get(&format!("{prefix}.gain"))?,
        bound.get(&format!("{prefix}.bias"))?,
    ))
}

impl BlockParams {
    pub fn resolve(spec: &BlockSpec, bound: &Bound, prefix: &str) -> Result<Self> {
        let attn = if spec.kind.is_attention() {
            Some(resolve_mha(bound, &format!("{prefix}.attn"), spec.heads)?)
        } else {
            None
        };
        let ln1 = if spec.use_layernorm {
            Some(resolve_ln(bound, &format!("{prefix}.ln1"))?)
        } else {
            None
        };
        let ffn = if spec.use_feedforward {
            Some([
                bound.get(&format!("{prefix}.ffn.w_f"))?,
                bound.get(&format!("{prefix}.ffn.b_f"))?,
                bound.get(&format!("{prefix}.ffn.w_b"))?,
                bound.get(&format!("{prefix}.ffn.b_b"))?,
            ])
        } else {
            None
        };
        let ln2 = if spec.has_ln2() {
            Some(resolve_ln(bound, &format!("{prefix}.ln2"))?)
        } else {
            None
        };
        Ok(Self { attn, ln1, ffn, ln2 })
    }
}

/// Runtime context shared by every block in a forward pass.
pub struct BlockCtx<'a> {
    pub mode: Mode,
    pub rng: &'a mut dyn RngCore,
}

/// Residual + norm around an already computed sublayer output:
/// `LN(Dropout(sub) + input)` under the default placement.
pub fn wrap_sublayer(
    tape: &mut Tape,
    input: Var,
    sub: Var,
    spec: &BlockSpec,
    ln: Option<(Var, Var)>,
    ctx: &mut BlockCtx<'_>,
) -> Result<Var> {
    let dropped = tape.dropout(sub, spec.dropout, ctx.mode, ctx.rng)?;
    let norm = |tape: &mut Tape, x: Var| -> Result<Var> {
        match ln {
            Some((g, b)) if spec.use_layernorm => tape.layer_norm(x, g, b, LN_EPS),
            _ => Ok(x),
        }
    };
    match spec.norm_placement {
        NormPlacement::Outside => {
            let summed = if spec.use_residual { tape.add(dropped, input)? } else { dropped };
            norm(tape, summed)
        }
        NormPlacement::Inside => {
            let normed = norm(tape, dropped)?;
            if spec.use_residual {
                tape.add(normed, input)
            } else {
                Ok(normed)
            }
        }
    }
}

/// `LN(Dropout(σ(R W_F + b_F) W_B + b_B) + R)`, or `R` when the feedforward is off.
pub fn feedforward_tail(
    tape: &mut Tape,
    r: Var,
    spec: &BlockSpec,
    params: &BlockParams,
    ctx: &mut BlockCtx<'_>,
) -> Result<Var> {
    let Some([w_f, b_f, w_b, b_b]) = params.ffn else {
        return Ok(r);
    };
    let h = tape.linear(r, w_f, Some(b_f))?;
    let h = tape.relu(h)?;
    let f = tape.linear(h, w_b, Some(b_b))?;
    let f = tape.dropout(f, spec.dropout, ctx.mode, ctx.rng)?;
    let summed = if spec.use_residual { tape.add(f, r)? } else { f };
    match params.ln2 {
        Some((g, b)) => tape.layer_norm(summed, g, b, LN_EPS),
        None => Ok(summed),
    }
}

fn check_width(tape: &Tape, e: Var, spec: &BlockSpec) -> Result<()> {
    let shape = tape.shape(e);
    if shape.len() < 2 || *shape.last().unwrap() != spec.d_model {
        return Err(Error::shape("block input", shape, &[spec.d_model]));
    }
    Ok(())
}

/// Attention block: `R = LN(Dropout(Attn(E)) + E)`, `out = LN(Dropout(FFN(R)) + R)`.
pub fn attention_block(
    tape: &mut Tape,
    e: Var,
    spec: &BlockSpec,
    params: &BlockParams,
    causal: bool,
    ctx: &mut BlockCtx<'_>,
) -> Result<Var> {
    if !spec.kind.is_attention() {
        return Err(Error::Param("attention_block called with an mlp spec".into()));
    }
    check_width(tape, e, spec)?;
    let attn = params
        .attn
        .as_ref()
        .ok_or_else(|| Error::Config("attention block without attention parameters".into()))?;
    let a = multi_head_attention(tape, e, attn, causal)?;
    let r = wrap_sublayer(tape, e, a, spec, params.ln1, ctx)?;
    feedforward_tail(tape, r, spec, params, ctx)
}

/// Attention-free block: `R = LN(Dropout(E) + E)`, `out = LN(Dropout(FFN(R)) + R)`.
pub fn resnormffn_block(
    tape: &mut Tape,
    e: Var,
    spec: &BlockSpec,
    params: &BlockParams,
    ctx: &mut BlockCtx<'_>,
) -> Result<Var> {
    if spec.kind.is_attention() {
        return Err(Error::Param("resnormffn_block called with an attention spec".into()));
    }
    check_width(tape, e, spec)?;
    let r = wrap_sublayer(tape, e, e, spec, params.ln1, ctx)?;
    feedforward_tail(tape, r, spec, params, ctx)
}

/// Dispatches on `spec.kind`.
pub fn block_forward(
    tape: &mut Tape,
    e: Var,
    spec: &BlockSpec,
    params: &BlockParams,
    causal: bool,
    ctx: &mut BlockCtx<'_>,
) -> Result<Var> {
    if spec.kind.is_attention() {
        attention_block(tape, e, spec, params, causal, ctx)
    } else {
        resnormffn_block(tape, e, spec, params, ctx)
    }
}
