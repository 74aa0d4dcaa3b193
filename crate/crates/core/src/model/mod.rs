//! The abstract forecasting model: embedding, encoder stacks and decoder.
//!
//! Batched layout: inputs are `[B, T, N, C]`, hidden states `[B, T, N, d]`,
//! forecasts `[B, H, N, C_out]`. Temporal blocks see `[B·N, T, d]`, spatial
//! blocks `[B·T, N, d]`.

mod checkpoint;
mod config;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{DecoderKind, EmbeddingConfig, LayerSpec, ModelConfig, ProjectionHead, Task};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{cross_attention, multi_head_attention};
use crate::blocks::{
    attention_param_shapes, block_param_shapes, feedforward_tail, init_shapes, resolve_ln, resolve_mha,
    wrap_sublayer, BlockCtx, BlockParams, BlockSpec,
};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Mode, Tape, Tensor, Var};

pub const DAYS_PER_WEEK: usize = 7;

/// One mini-batch of model inputs.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B, T, N, C]`.
    pub x: Tensor,
    /// Time-of-day index per sample and lookback step, `B·T` entries.
    pub tod: Option<Vec<usize>>,
    /// Day-of-week index per sample and lookback step, `B·T` entries.
    pub dow: Option<Vec<usize>>,
    /// `[B, H, N, C_out]`, used for teacher forcing by the attention decoder.
    pub targets: Option<Tensor>,
}

impl Batch {
    pub fn new(x: Tensor) -> Self {
        Self { x, tod: None, dow: None, targets: None }
    }

    pub fn batch_size(&self) -> usize {
        self.x.shape().first().copied().unwrap_or(0)
    }
}

/// Every parameter a model built from `cfg` owns, in registry order.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let mut out = vec![
        ("embedding.w_in".to_string(), vec![cfg.in_features, d]),
        ("embedding.b_in".to_string(), vec![d]),
    ];
    if cfg.embedding.time_of_day {
        out.push(("embedding.tod".into(), vec![cfg.embedding.steps_per_day, d]));
    }
    if cfg.embedding.day_of_week {
        out.push(("embedding.dow".into(), vec![DAYS_PER_WEEK, d]));
    }
    if cfg.embedding.node_embedding {
        out.push(("embedding.node".into(), vec![cfg.nodes, d]));
    }
    for (l, layer) in cfg.encoder_temporal.iter().enumerate() {
        out.extend(block_param_shapes(&cfg.block_spec(layer), &format!("encoder.temporal.{l}")));
    }
    for (l, layer) in cfg.encoder_spatial.iter().enumerate() {
        out.extend(block_param_shapes(&cfg.block_spec(layer), &format!("encoder.spatial.{l}")));
    }
    match cfg.decoder {
        DecoderKind::Projection => match cfg.projection_head {
            ProjectionHead::Factorized => {
                out.push(("decoder.proj.w_t".into(), vec![cfg.lookback, cfg.horizon]));
                out.push(("decoder.proj.b_t".into(), vec![cfg.horizon]));
                out.push(("decoder.proj.w_out".into(), vec![d, cfg.out_features]));
                out.push(("decoder.proj.b_out".into(), vec![cfg.out_features]));
            }
            ProjectionHead::Flatten => {
                let hc = cfg.horizon * cfg.out_features;
                out.push(("decoder.proj.w".into(), vec![cfg.lookback * d, hc]));
                out.push(("decoder.proj.b".into(), vec![hc]));
            }
        },
        DecoderKind::Attention => {
            out.push(("decoder.start".into(), vec![d]));
            out.push(("decoder.in.w".into(), vec![cfg.out_features, d]));
            out.push(("decoder.in.b".into(), vec![d]));
            for (l, layer) in cfg.decoder_layers.iter().enumerate() {
                let prefix = format!("decoder.{l}");
                let spec = cfg.block_spec(layer);
                out.extend(block_param_shapes(&spec, &prefix));
                if spec.kind.is_attention() {
                    out.extend(attention_param_shapes(&format!("{prefix}.cross"), d));
                }
                if spec.use_layernorm {
                    out.push((format!("{prefix}.lnc.gain"), vec![d]));
                    out.push((format!("{prefix}.lnc.bias"), vec![d]));
                }
            }
            out.push(("decoder.head.w".into(), vec![d, cfg.out_features]));
            out.push(("decoder.head.b".into(), vec![cfg.out_features]));
        }
    }
    out
}

/// Parameter store plus the configuration it realises.
#[derive(Clone, Debug, PartialEq)]
pub struct AmtsfmModel {
    config: ModelConfig,
    params: ParamStore,
}

impl AmtsfmModel {
    /// Freshly initialised model; weights are drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        init_shapes(&mut params, &param_shapes(&config), &mut rng);
        if let Some(start) = params.get_mut("decoder.start") {
            *start = Tensor::randn(start.shape(), 0.1, &mut rng);
        }
        Ok(Self { config, params })
    }

    /// Wraps existing parameters after checking names and shapes against `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = param_shapes(&config);
        if expected.len() != params.len() {
            return Err(Error::Param(format!(
                "expected {} parameters, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in &expected {
            let t = params
                .get(name)
                .ok_or_else(|| Error::Param(format!("missing parameter `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::shape("parameter", t.shape(), shape));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_parts(self) -> (ModelConfig, ParamStore) {
        (self.config, self.params)
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Builds the forward graph on `tape` and returns `[B, H, N, C_out]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &Batch,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        let x = tape.constant(batch.x.clone());
        self.forward_from(tape, bound, x, batch, mode, rng)
    }

    /// As [`forward`](Self::forward) but with the input already on the tape,
    /// so gradients with respect to it can be taken. `batch.x` is ignored.
    pub fn forward_from(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        batch: &Batch,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        let cfg = &self.config;
        self.check_batch(tape.shape(x), batch)?;
        let mut ctx = BlockCtx { mode, rng };
        tape.push_scope("embedding");
        let e = embed(tape, cfg, bound, x, batch.tod.as_deref(), batch.dow.as_deref()).map_err(|e| e.in_stage("embed"));
        tape.pop_scope();
        let z = encode(tape, cfg, bound, e?, &mut ctx).map_err(|e| e.in_stage("encode"))?;
        tape.push_scope("decoder");
        let out = match cfg.decoder {
            DecoderKind::Projection => decode_projection(tape, cfg, bound, z),
            DecoderKind::Attention => {
                let targets = match (mode, &batch.targets) {
                    (Mode::Train, Some(t)) => Some(tape.constant(t.clone())),
                    (Mode::Eval, None) => None,
                    (Mode::Train, None) => {
                        tape.pop_scope();
                        return Err(Error::Param("train mode needs targets for teacher forcing".into())
                            .in_stage("decode"));
                    }
                    (Mode::Eval, Some(_)) => {
                        tape.pop_scope();
                        return Err(Error::Param("eval mode decodes autoregressively; drop the targets".into())
                            .in_stage("decode"));
                    }
                };
                decode_attention(tape, cfg, bound, z, targets, &mut ctx)
            }
        }
        .map_err(|e| e.in_stage("decode"));
        tape.pop_scope();
        out
    }

    /// Evaluation-mode forecast as a plain tensor.
    pub fn predict(&self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind_constant(&mut tape);
        let mut batch = batch.clone();
        batch.targets = None;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, &bound, &batch, Mode::Eval, &mut rng)?;
        Ok(tape.value(out).clone())
    }

    /// Single-sample forecast: `x [T, N, C]` to `[H, N, C_out]`.
    pub fn predict_one(&self, x: &Tensor, tod: Option<Vec<usize>>, dow: Option<Vec<usize>>) -> Result<Tensor> {
        let mut shape = vec![1];
        shape.extend_from_slice(x.shape());
        let batch = Batch { x: x.reshaped(&shape)?, tod, dow, targets: None };
        let out = self.predict(&batch)?;
        out.reshaped(&out.shape()[1..])
    }

    fn check_batch(&self, x: &[usize], batch: &Batch) -> Result<()> {
        let cfg = &self.config;
        let b = x.first().copied().unwrap_or(0);
        let want = [b, cfg.lookback, cfg.nodes, cfg.in_features];
        if x != want || b == 0 {
            return Err(Error::shape("model input", x, &want).in_stage("embed"));
        }
        if let Some(t) = &batch.targets {
            let want = [b, cfg.horizon, cfg.nodes, cfg.out_features];
            if t.shape() != want {
                return Err(Error::shape("targets", t.shape(), &want).in_stage("decode"));
            }
        }
        Ok(())
    }
}

fn calendar<'a>(name: &str, enabled: bool, idx: Option<&'a [usize]>, len: usize) -> Result<Option<&'a [usize]>> {
    match (enabled, idx) {
        (false, _) => Ok(None),
        (true, None) => Err(Error::Data(format!("{name} indices missing"))),
        (true, Some(v)) if v.len() != len => Err(Error::Data(format!(
            "{name} indices: expected {len}, found {}",
            v.len()
        ))),
        (true, Some(v)) => Ok(Some(v)),
    }
}

/// `E₀ = X·W_in + b + tod[idx] + dow[idx] + node[n]` for `x [B, T, N, C]`.
pub fn embed(
    tape: &mut Tape,
    cfg: &ModelConfig,
    bound: &Bound,
    x: Var,
    tod: Option<&[usize]>,
    dow: Option<&[usize]>,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let [b, t, _, _] = shape[..] else {
        return Err(Error::shape("embed", &shape, &[0, cfg.lookback, cfg.nodes, cfg.in_features]));
    };
    let d = cfg.d_model;
    let mut e = tape.linear(x, bound.get("embedding.w_in")?, Some(bound.get("embedding.b_in")?))?;
    let tables = [
        ("time_of_day", "embedding.tod", cfg.embedding.time_of_day, tod),
        ("day_of_week", "embedding.dow", cfg.embedding.day_of_week, dow),
    ];
    for (label, name, enabled, idx) in tables {
        if let Some(idx) = calendar(label, enabled, idx, b * t)? {
            let rows = tape.gather_rows(bound.get(name)?, idx)?;
            let rows = tape.reshape(rows, &[b, t, 1, d])?;
            e = tape.add(e, rows)?;
        }
    }
    if cfg.embedding.node_embedding {
        e = tape.add(e, bound.get("embedding.node")?)?;
    }
    Ok(e)
}

/// Runs `layers` on `h` laid out as `[rows, len, d]`.
fn run_stack(
    tape: &mut Tape,
    cfg: &ModelConfig,
    bound: &Bound,
    mut h: Var,
    layers: &[(usize, &LayerSpec)],
    scope: &str,
    ctx: &mut BlockCtx<'_>,
) -> Result<Var> {
    for &(l, layer) in layers {
        let spec = cfg.block_spec(layer);
        let prefix = format!("encoder.{scope}.{l}");
        let params = BlockParams::resolve(&spec, bound, &prefix)?;
        tape.push_scope(prefix);
        let out = crate::blocks::block_forward(tape, h, &spec, &params, false, ctx);
        tape.pop_scope();
        h = out?;
    }
    Ok(h)
}

fn to_temporal(tape: &mut Tape, e: Var, b: usize, t: usize, n: usize, d: usize) -> Result<Var> {
    let p = tape.permute(e, &[0, 2, 1, 3])?;
    tape.reshape(p, &[b * n, t, d])
}

fn from_temporal(tape: &mut Tape, h: Var, b: usize, t: usize, n: usize, d: usize) -> Result<Var> {
    let r = tape.reshape(h, &[b, n, t, d])?;
    tape.permute(r, &[0, 2, 1, 3])
}

/// Temporal stack then spatial stack (or alternating when `interleave` is set).
pub fn encode(tape: &mut Tape, cfg: &ModelConfig, bound: &Bound, e: Var, ctx: &mut BlockCtx<'_>) -> Result<Var> {
    let shape = tape.shape(e).to_vec();
    let [b, t, n, d] = shape[..] else {
        return Err(Error::shape("encode", &shape, &[0, cfg.lookback, cfg.nodes, cfg.d_model]));
    };
    let temporal: Vec<_> = cfg.encoder_temporal.iter().enumerate().collect();
    let spatial: Vec<_> = cfg.encoder_spatial.iter().enumerate().collect();
    let mut phases: Vec<(&str, Vec<(usize, &LayerSpec)>)> = Vec::new();
    if cfg.interleave {
        for (tl, sl) in temporal.iter().zip(&spatial) {
            phases.push(("temporal", vec![*tl]));
            phases.push(("spatial", vec![*sl]));
        }
    } else {
        phases.push(("temporal", temporal));
        phases.push(("spatial", spatial));
    }
    let mut h = e;
    for (scope, layers) in phases {
        if layers.is_empty() {
            continue;
        }
        if scope == "temporal" {
            let x = to_temporal(tape, h, b, t, n, d)?;
            let y = run_stack(tape, cfg, bound, x, &layers, scope, ctx)?;
            h = from_temporal(tape, y, b, t, n, d)?;
        } else {
            let x = tape.reshape(h, &[b * t, n, d])?;
            let y = run_stack(tape, cfg, bound, x, &layers, scope, ctx)?;
            h = tape.reshape(y, &[b, t, n, d])?;
        }
    }
    Ok(h)
}

/// Maps the encoded lookback `[B, T, N, d]` to `[B, H, N, C_out]` with the configured head.
pub fn decode_projection(tape: &mut Tape, cfg: &ModelConfig, bound: &Bound, z: Var) -> Result<Var> {
    match cfg.projection_head {
        ProjectionHead::Factorized => decode_factorized(tape, bound, z),
        ProjectionHead::Flatten => {
            let shape = tape.shape(z).to_vec();
            let [b, t, n, d] = shape[..] else {
                return Err(Error::shape("decoder", &shape, &[0, cfg.lookback, cfg.nodes, cfg.d_model]));
            };
            let zn = tape.permute(z, &[0, 2, 1, 3])?; // [B, N, T, d]
            let flat = tape.reshape(zn, &[b, n, t * d])?;
            let y = tape.linear(flat, bound.get("decoder.proj.w")?, Some(bound.get("decoder.proj.b")?))?;
            let y = tape.reshape(y, &[b, n, cfg.horizon, cfg.out_features])?;
            tape.permute(y, &[0, 2, 1, 3])
        }
    }
}

/// Time map `W_T [T, H]` across the lookback axis, then feature map `W_out [d, C_out]`.
fn decode_factorized(tape: &mut Tape, bound: &Bound, z: Var) -> Result<Var> {
    let zt = tape.permute(z, &[0, 2, 3, 1])?; // [B, N, d, T]
    let h = tape.linear(zt, bound.get("decoder.proj.w_t")?, Some(bound.get("decoder.proj.b_t")?))?;
    let h = tape.permute(h, &[0, 3, 1, 2])?; // [B, H, N, d]
    tape.linear(h, bound.get("decoder.proj.w_out")?, Some(bound.get("decoder.proj.b_out")?))
}

struct DecoderLayer {
    spec: BlockSpec,
    block: BlockParams,
    cross: Option<crate::attention::MhaParams>,
    lnc: Option<(Var, Var)>,
}

fn resolve_decoder(cfg: &ModelConfig, bound: &Bound) -> Result<Vec<DecoderLayer>> {
    cfg.decoder_layers
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let spec = cfg.block_spec(layer);
            let prefix = format!("decoder.{l}");
            let block = BlockParams::resolve(&spec, bound, &prefix)?;
            let cross = if spec.kind.is_attention() {
                Some(resolve_mha(bound, &format!("{prefix}.cross"), spec.heads)?)
            } else {
                None
            };
            let lnc = if spec.use_layernorm {
                Some(resolve_ln(bound, &format!("{prefix}.lnc"))?)
            } else {
                None
            };
            Ok(DecoderLayer { spec, block, cross, lnc })
        })
        .collect()
}

/// Decoder stack over `y [rows, h, d]` with encoder memory `[rows, T, d]`.
fn decoder_stack(
    tape: &mut Tape,
    layers: &[DecoderLayer],
    mut y: Var,
    memory: Var,
    ctx: &mut BlockCtx<'_>,
) -> Result<Var> {
    for layer in layers {
        let spec = &layer.spec;
        let s = match &layer.block.attn {
            Some(p) => multi_head_attention(tape, y, p, true)?,
            None => y,
        };
        let r1 = wrap_sublayer(tape, y, s, spec, layer.block.ln1, ctx)?;
        let c = match &layer.cross {
            Some(p) => cross_attention(tape, r1, memory, p)?,
            None => {
                // Attention-free stand-in: the pooled encoder summary.
                let pooled = tape.mean_axis(memory, 1)?;
                let shape = tape.shape(r1).to_vec();
                tape.expand(pooled, &shape)?
            }
        };
        let r2 = wrap_sublayer(tape, r1, c, spec, layer.lnc, ctx)?;
        y = feedforward_tail(tape, r2, spec, &layer.block, ctx)?;
    }
    Ok(y)
}

/// Masked self-attention decoder with cross-attention to the encoder output.
///
/// With `targets` (`[B, H, N, C_out]`) the decoder is teacher forced; without
/// them it runs autoregressively from the learned start token, recomputing
/// the full prefix at every step.
pub fn decode_attention(
    tape: &mut Tape,
    cfg: &ModelConfig,
    bound: &Bound,
    z: Var,
    targets: Option<Var>,
    ctx: &mut BlockCtx<'_>,
) -> Result<Var> {
    let shape = tape.shape(z).to_vec();
    let [b, t, n, d] = shape[..] else {
        return Err(Error::shape("decode", &shape, &[0, cfg.lookback, cfg.nodes, cfg.d_model]));
    };
    let (hz, c_out, rows) = (cfg.horizon, cfg.out_features, b * n);
    let layers = resolve_decoder(cfg, bound)?;
    let memory = to_temporal(tape, z, b, t, n, d)?;
    let start = tape.reshape(bound.get("decoder.start")?, &[1, 1, d])?;
    let start = tape.expand(start, &[rows, 1, d])?;
    let (w_in, b_in) = (bound.get("decoder.in.w")?, bound.get("decoder.in.b")?);
    let (w_head, b_head) = (bound.get("decoder.head.w")?, bound.get("decoder.head.b")?);

    let out = match targets {
        Some(y) => {
            let y = to_temporal(tape, y, b, hz, n, c_out)?;
            let inputs = if hz > 1 {
                let prev = tape.narrow(y, 1, 0, hz - 1)?;
                let emb = tape.linear(prev, w_in, Some(b_in))?;
                tape.concat(&[start, emb], 1)?
            } else {
                start
            };
            let h = decoder_stack(tape, &layers, inputs, memory, ctx)?;
            tape.linear(h, w_head, Some(b_head))?
        }
        None => {
            let mut preds: Vec<Var> = Vec::with_capacity(hz);
            for step in 0..hz {
                let inputs = if step == 0 {
                    start
                } else {
                    let prev = tape.concat(&preds, 1)?;
                    let emb = tape.linear(prev, w_in, Some(b_in))?;
                    tape.concat(&[start, emb], 1)?
                };
                let h = decoder_stack(tape, &layers, inputs, memory, ctx)?;
                let last = tape.narrow(h, 1, step, 1)?;
                preds.push(tape.linear(last, w_head, Some(b_head))?);
            }
            tape.concat(&preds, 1)?
        }
    };
    from_temporal(tape, out, b, hz, n, c_out)
}

/// Axis along which [`split`] cuts a `[T, N, d]` tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitAxis {
    /// `N` matrices of shape `[T, d]`.
    Node,
    /// `T` matrices of shape `[N, d]`.
    Time,
}

pub fn split(e: &Tensor, axis: SplitAxis) -> Result<Vec<Tensor>> {
    let [t, n, d] = e.shape()[..] else {
        return Err(Error::shape("split", e.shape(), &[0, 0, 0]));
    };
    let data = e.data();
    let out = match axis {
        SplitAxis::Time => (0..t)
            .map(|ti| Tensor::new(&[n, d], data[ti * n * d..(ti + 1) * n * d].to_vec()))
            .collect::<Result<Vec<_>>>()?,
        SplitAxis::Node => (0..n)
            .map(|ni| {
                let mut m = Vec::with_capacity(t * d);
                for ti in 0..t {
                    let off = (ti * n + ni) * d;
                    m.extend_from_slice(&data[off..off + d]);
                }
                Tensor::new(&[t, d], m)
            })
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(out)
}

pub fn stack(parts: &[Tensor], axis: SplitAxis) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::Param("stack of nothing".into()))?;
    let [rows, d] = first.shape()[..] else {
        return Err(Error::shape("stack", first.shape(), &[0, 0]));
    };
    if let Some(bad) = parts.iter().find(|p| p.shape() != first.shape()) {
        return Err(Error::shape("stack", bad.shape(), first.shape()));
    }
    let k = parts.len();
    match axis {
        SplitAxis::Time => {
            let data = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
            Tensor::new(&[k, rows, d], data)
        }
        SplitAxis::Node => {
            let mut data = Vec::with_capacity(k * rows * d);
            for ti in 0..rows {
                for p in parts {
                    data.extend_from_slice(&p.data()[ti * d..(ti + 1) * d]);
                }
            }
            Tensor::new(&[rows, k, d], data)
        }
    }
}

#[cfg(test)]
mod tests;
