//! Self-check suites behind the `gradcheck` and `lemma-check` commands.

use std::fmt;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    cross_attention, dynamic_adjacency, gcn_layer, modified_attention, multi_head_attention, Activation, GcnParams,
    MhaParams,
};
use crate::blocks::{block_forward, init_block_params, BlockCtx, BlockKind, BlockParams, BlockSpec, NormPlacement};
use crate::error::Result;
use crate::gradcheck::{check, STEP};
use crate::model::{AmtsfmModel, Batch, DecoderKind, LayerSpec, ModelConfig, ProjectionHead, Task};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Mode, Tape, Tensor, Var};

/// Gradient-check tolerance on the relative error.
pub const GRAD_TOL: f64 = 1e-4;
/// Tolerance of the closed-form identities.
pub const EXACT_TOL: f64 = 1e-12;

/// Worst error of one named check over all its cases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckLine {
    pub name: String,
    pub worst: f64,
    pub tol: f64,
    pub cases: usize,
    /// Where the worst error occurred.
    #[serde(default)]
    pub at: String,
}

impl CheckLine {
    pub fn passed(&self) -> bool {
        self.worst < self.tol
    }
}

impl fmt::Display for CheckLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<36} worst {:.3e} (tol {:.0e}, {} cases, {})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tol,
            self.cases,
            self.at
        )
    }
}

struct Tally {
    lines: IndexMap<String, CheckLine>,
    case: u64,
    step: f64,
}

impl Default for Tally {
    fn default() -> Self {
        Self { lines: IndexMap::new(), case: 0, step: STEP }
    }
}

impl Tally {
    fn record(&mut self, name: &str, err: f64, tol: f64) {
        self.record_at(name, err, tol, String::new());
    }

    fn record_at(&mut self, name: &str, err: f64, tol: f64, at: String) {
        let line = self.lines.entry(name.to_string()).or_insert_with(|| CheckLine {
            name: name.to_string(),
            worst: 0.0,
            tol,
            cases: 0,
            at: String::new(),
        });
        line.cases += 1;
        if err > line.worst || err.is_nan() {
            line.worst = err;
            line.at = if at.is_empty() { format!("case {}", self.case) } else { format!("case {} {at}", self.case) };
        }
    }

    fn grad<F>(&mut self, name: &str, inputs: &[(&str, Tensor)], f: F) -> Result<()>
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    {
        let inputs: Vec<(String, Tensor)> = inputs.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        let report = check(&inputs, self.step, f)?;
        let at = format!("{}[{}]", report.worst_input, report.worst_index);
        self.record_at(name, report.max_rel_err, GRAD_TOL, at);
        Ok(())
    }

    fn finish(self) -> Vec<CheckLine> {
        self.lines.into_values().collect()
    }
}

/// Smallest `|input|` an instance keeps from every ReLU or abs kink, so the
/// central-difference stencil stays on one linear piece.
const KINK_MARGIN: f64 = 1e-3;
/// Data redraws before an instance is checked regardless of its margin.
const MAX_REDRAWS: usize = 64;

fn kink_margin<F>(inputs: &[(&str, Tensor)], f: F) -> Result<f64>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tp = Tape::new();
    let v: Vec<Var> = inputs.iter().map(|(_, x)| tp.leaf(x.clone())).collect();
    f(&mut tp, &v)?;
    Ok(tp.smoothness().kink_margin)
}

/// Reduces any output to a scalar with fixed pseudo-random weights so every
/// output entry contributes a distinct gradient.
fn project(tape: &mut Tape, out: Var) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let w = tape.constant(Tensor::randn(&shape, 1.0, &mut rng));
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

fn op_checks(t: &mut Tally, rng: &mut ChaCha8Rng) -> Result<()> {
    let (m, k, n) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
    let b = rng.random_range(1..3);
    let a = randn(rng, &[m, k]);
    let bm = randn(rng, &[k, n]);
    t.grad("matmul", &[("a", a.clone()), ("b", bm)], |tp, v| {
        let o = tp.matmul(v[0], v[1])?;
        project(tp, o)
    })?;
    let x3 = randn(rng, &[b, m, k]);
    let y3 = randn(rng, &[b, k, n]);
    let z3 = randn(rng, &[b, n, k]);
    t.grad("bmm", &[("x", x3.clone()), ("y", y3)], |tp, v| {
        let o = tp.bmm(v[0], v[1], false)?;
        project(tp, o)
    })?;
    t.grad("bmm_transposed", &[("x", x3.clone()), ("z", z3)], |tp, v| {
        let o = tp.bmm(v[0], v[1], true)?;
        project(tp, o)
    })?;
    let row = randn(rng, &[1, k]);
    t.grad("expand", &[("r", row)], move |tp, v| {
        let o = tp.expand(v[0], &[m, k])?;
        project(tp, o)
    })?;
    let c = randn(rng, &[m, k]);
    for (name, which) in [("add", 0), ("sub", 1), ("mul", 2)] {
        t.grad(name, &[("a", a.clone()), ("c", c.clone())], move |tp, v| {
            let o = match which {
                0 => tp.add(v[0], v[1])?,
                1 => tp.sub(v[0], v[1])?,
                _ => tp.mul(v[0], v[1])?,
            };
            project(tp, o)
        })?;
    }
    let s = rng.random_range(-2.0..2.0);
    t.grad("scale", &[("a", a.clone())], move |tp, v| {
        let o = tp.scale(v[0], s)?;
        project(tp, o)
    })?;
    for (name, which) in [("relu", 0), ("abs", 1), ("square", 2)] {
        t.grad(name, &[("a", a.clone())], move |tp, v| {
            let o = match which {
                0 => tp.relu(v[0])?,
                1 => tp.abs(v[0])?,
                _ => tp.square(v[0])?,
            };
            project(tp, o)
        })?;
    }
    let beta = [0.1, 1.0, 10.0][rng.random_range(0..3)];
    t.grad("softmax", &[("x", x3.clone())], move |tp, v| {
        let o = tp.softmax(v[0], beta)?;
        project(tp, o)
    })?;
    let sq = randn(rng, &[b, m, m]);
    t.grad("causal_mask+softmax", &[("x", sq)], |tp, v| {
        let o = tp.causal_mask(v[0])?;
        let o = tp.softmax(o, 1.0)?;
        project(tp, o)
    })?;
    let gain = randn(rng, &[k]);
    let bias = randn(rng, &[k]);
    t.grad("layer_norm", &[("x", x3.clone()), ("g", gain), ("b", bias.clone())], |tp, v| {
        let o = tp.layer_norm(v[0], v[1], v[2], crate::blocks::LN_EPS)?;
        project(tp, o)
    })?;
    let w = randn(rng, &[k, n]);
    let bb = randn(rng, &[n]);
    t.grad("linear", &[("x", x3.clone()), ("w", w), ("b", bb)], |tp, v| {
        let o = tp.linear(v[0], v[1], Some(v[2]))?;
        project(tp, o)
    })?;
    t.grad("permute", &[("x", x3.clone())], |tp, v| {
        let o = tp.permute(v[0], &[2, 0, 1])?;
        project(tp, o)
    })?;
    t.grad("transpose", &[("a", a.clone())], |tp, v| {
        let o = tp.transpose(v[0])?;
        project(tp, o)
    })?;
    t.grad("reshape", &[("x", x3.clone())], move |tp, v| {
        let o = tp.reshape(v[0], &[b * m * k])?;
        project(tp, o)
    })?;
    let other = randn(rng, &[b, m, n]);
    t.grad("concat", &[("x", x3.clone()), ("o", other)], |tp, v| {
        let o = tp.concat(&[v[0], v[1]], 2)?;
        project(tp, o)
    })?;
    let start = rng.random_range(0..m);
    t.grad("narrow", &[("x", x3.clone())], move |tp, v| {
        let o = tp.narrow(v[0], 1, start, m - start)?;
        project(tp, o)
    })?;
    t.grad("sum", &[("x", x3.clone())], |tp, v| tp.sum(v[0]))?;
    t.grad("mean", &[("x", x3.clone())], |tp, v| {
        let o = tp.mean(v[0])?;
        tp.scale(o, 3.0)
    })?;
    let axis = rng.random_range(0..3);
    t.grad("mean_axis", &[("x", x3.clone())], move |tp, v| {
        let o = tp.mean_axis(v[0], axis)?;
        project(tp, o)
    })?;
    let idx: Vec<usize> = (0..5).map(|_| rng.random_range(0..m)).collect();
    t.grad("gather_rows", &[("a", a.clone())], move |tp, v| {
        let o = tp.gather_rows(v[0], &idx)?;
        project(tp, o)
    })?;
    let adj = Tensor::uniform(&[b, m, m], 0.2, 1.5, rng);
    t.grad("degree_normalize", &[("a", adj)], |tp, v| {
        let o = tp.degree_normalize(v[0])?;
        project(tp, o)
    })?;
    let drop_seed: u64 = rng.random();
    t.grad("dropout", &[("x", x3)], move |tp, v| {
        let mut r = ChaCha8Rng::seed_from_u64(drop_seed);
        let o = tp.dropout(v[0], 0.3, Mode::Train, &mut r)?;
        project(tp, o)
    })?;
    Ok(())
}

fn mha_from(v: &[Var], heads: usize, biases: bool) -> MhaParams {
    let mut p = MhaParams::new(v[0], v[1], v[2], v[3], heads);
    if biases {
        p.b_q = Some(v[4]);
        p.b_k = Some(v[5]);
        p.b_v = Some(v[6]);
        p.b_o = Some(v[7]);
    }
    p
}

fn attention_checks(t: &mut Tally, rng: &mut ChaCha8Rng) -> Result<()> {
    let heads = rng.random_range(1..3);
    let d = heads * rng.random_range(1..4);
    let (b, n, nk) = (rng.random_range(1..3), rng.random_range(1..5), rng.random_range(1..5));
    let mut inputs: Vec<(&str, Tensor)> = ["w_q", "w_k", "w_v", "w_o"]
        .into_iter()
        .map(|name| (name, Tensor::randn(&[d, d], 0.6, rng)))
        .collect();
    for name in ["b_q", "b_k", "b_v", "b_o"] {
        inputs.push((name, Tensor::randn(&[d], 0.3, rng)));
    }
    inputs.push(("x", randn(rng, &[b, n, d])));
    for causal in [false, true] {
        let name = if causal { "attention.masked" } else { "attention.self" };
        t.grad(name, &inputs, move |tp, v| {
            let o = multi_head_attention(tp, v[8], &mha_from(v, heads, true), causal)?;
            project(tp, o)
        })?;
    }
    inputs.push(("memory", randn(rng, &[b, nk, d])));
    t.grad("attention.cross", &inputs, move |tp, v| {
        let o = cross_attention(tp, v[8], v[9], &mha_from(v, heads, true))?;
        project(tp, o)
    })?;

    let z = randn(rng, &[b, n, d]);
    let g: Vec<(&str, Tensor)> = vec![
        ("z", z),
        ("w_q", Tensor::randn(&[d, d], 0.6, rng)),
        ("w_k", Tensor::randn(&[d, d], 0.6, rng)),
        ("theta", Tensor::randn(&[d, d], 0.6, rng)),
    ];
    let gcn = |v: &[Var]| GcnParams { w_q: v[1], w_k: v[2], theta: v[3], activation: Activation::Identity };
    t.grad("gcn.dynamic_adjacency", &g, move |tp, v| {
        let o = dynamic_adjacency(tp, v[0], &gcn(v))?;
        project(tp, o)
    })?;
    t.grad("gcn.layer_normalized", &g, move |tp, v| {
        let p = gcn(v);
        let a = dynamic_adjacency(tp, v[0], &p)?;
        let o = gcn_layer(tp, v[0], a, &p, true)?;
        project(tp, o)
    })?;
    t.grad("gcn.modified_attention", &g, move |tp, v| {
        let p = GcnParams { activation: Activation::Relu, ..gcn(v) };
        let o = modified_attention(tp, v[0], &p)?;
        project(tp, o)
    })?;
    Ok(())
}

/// Model widths drawn by the random generators. Width 2 is avoided: a
/// LayerNorm over two nearly equal entries has curvature of order eps^(-3/2),
/// which no fixed finite-difference step resolves.
const WIDTHS: [usize; 3] = [4, 6, 8];

fn random_flags(rng: &mut ChaCha8Rng) -> (bool, bool, bool) {
    (rng.random_bool(0.7), rng.random_bool(0.7), rng.random_bool(0.7))
}

fn block_checks(t: &mut Tally, rng: &mut ChaCha8Rng) -> Result<()> {
    for kind in [BlockKind::TemporalAttention, BlockKind::SpatialAttention, BlockKind::Mlp] {
        let heads = rng.random_range(1..3);
        let mut spec = BlockSpec::new(kind, WIDTHS[rng.random_range(0..3)], rng.random_range(2..7), heads);
        (spec.use_feedforward, spec.use_residual, spec.use_layernorm) = random_flags(rng);
        if rng.random_bool(0.3) {
            spec.norm_placement = NormPlacement::Inside;
        }
        let causal = kind == BlockKind::TemporalAttention && rng.random_bool(0.5);
        let mut store = ParamStore::new();
        init_block_params(&spec, "b", &mut store, rng);
        // Push weights away from zero so ReLU kinks and zero biases are not special.
        for (_, p) in store.iter_mut() {
            let noise = Tensor::randn(p.shape(), 0.3, rng);
            p.data_mut().iter_mut().zip(noise.data()).for_each(|(w, e)| *w += e);
        }
        let names: Vec<String> = store.names().cloned().collect();
        let mut inputs: Vec<(&str, Tensor)> =
            names.iter().map(|n| (n.as_str(), store.get(n).expect("named").clone())).collect();
        let shape = [rng.random_range(1..3), rng.random_range(1..5), spec.d_model];
        let name = match kind {
            BlockKind::TemporalAttention => "block.temporal_attention",
            BlockKind::SpatialAttention => "block.spatial_attention",
            BlockKind::Mlp => "block.mlp",
        };
        let f = |tp: &mut Tape, v: &[Var]| {
            let bound = Bound::from_pairs(names.iter().cloned().zip(v.iter().copied()));
            let params = BlockParams::resolve(&spec, &bound, "b")?;
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let mut ctx = BlockCtx { mode: Mode::Eval, rng: &mut r };
            let o = block_forward(tp, v[v.len() - 1], &spec, &params, causal, &mut ctx)?;
            project(tp, o)
        };
        inputs.push(("e", randn(rng, &shape)));
        for _ in 0..MAX_REDRAWS {
            if kink_margin(&inputs, f)? >= KINK_MARGIN {
                break;
            }
            inputs.last_mut().expect("pushed").1 = randn(rng, &shape);
        }
        t.grad(name, &inputs, f)?;
    }
    Ok(())
}

/// Random small valid model config covering both tasks, both decoders,
/// embeddings, layer flags and both norm placements.
pub fn random_model_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let heads = rng.random_range(1..3);
    let d = WIDTHS[rng.random_range(0..3)];
    let dff = rng.random_range(2..7);
    let n = rng.random_range(1..4);
    let mut cfg = if rng.random_bool(0.5) {
        ModelConfig::stf(n, d, dff, heads, rng.random_range(1..3))
    } else {
        ModelConfig::ltsf(n, 4, 2, d, dff, heads, rng.random_range(1..3))
    };
    cfg.lookback = rng.random_range(2..5);
    cfg.horizon = rng.random_range(1..4);
    cfg.in_features = rng.random_range(1..3);
    cfg.out_features = rng.random_range(1..=cfg.in_features);
    cfg.embedding.time_of_day = rng.random_bool(0.5);
    cfg.embedding.steps_per_day = 6;
    cfg.embedding.day_of_week = rng.random_bool(0.5);
    cfg.embedding.node_embedding = rng.random_bool(0.5);
    if rng.random_bool(0.3) {
        cfg.norm_placement = NormPlacement::Inside;
    }
    let stacks = [&mut cfg.encoder_temporal, &mut cfg.encoder_spatial];
    for stack in stacks {
        for l in stack.iter_mut() {
            if rng.random_bool(0.4) {
                l.kind = BlockKind::Mlp;
            }
            (l.use_feedforward, l.use_residual, l.use_layernorm) = random_flags(rng);
        }
    }
    if rng.random_bool(0.5) {
        cfg.decoder = DecoderKind::Attention;
        cfg.decoder_layers = (0..rng.random_range(1..3))
            .map(|_| {
                let kind = if rng.random_bool(0.7) { BlockKind::TemporalAttention } else { BlockKind::Mlp };
                let mut l = LayerSpec::full(kind);
                (l.use_feedforward, l.use_residual, l.use_layernorm) = random_flags(rng);
                l
            })
            .collect();
    } else if rng.random_bool(0.3) {
        cfg.projection_head = ProjectionHead::Flatten;
    }
    cfg.interleave = cfg.task == Task::Stf && cfg.encoder_temporal.len() == cfg.encoder_spatial.len() && rng.random_bool(0.3);
    cfg
}

fn model_loss<'a>(
    model: &'a AmtsfmModel,
    names: &'a [String],
    batch: &'a Batch,
    mode: Mode,
) -> impl Fn(&mut Tape, &[Var]) -> Result<Var> + Copy + 'a {
    move |tp, v| {
        let bound = Bound::from_pairs(names.iter().cloned().zip(v.iter().copied()));
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let o = model.forward_from(tp, &bound, v[v.len() - 1], batch, mode, &mut r)?;
        project(tp, o)
    }
}

fn model_check(t: &mut Tally, rng: &mut ChaCha8Rng) -> Result<()> {
    let cfg = random_model_config(rng);
    cfg.validate()?;
    let mut model = AmtsfmModel::new(cfg.clone(), rng.random())?;
    for (_, p) in model.params_mut().iter_mut() {
        let noise = Tensor::randn(p.shape(), 0.2, rng);
        p.data_mut().iter_mut().zip(noise.data()).for_each(|(w, e)| *w += e);
    }
    let b = rng.random_range(1..3);
    let teacher = cfg.decoder == DecoderKind::Attention && rng.random_bool(0.5);
    let mode = if teacher { Mode::Train } else { Mode::Eval };
    let draw = |rng: &mut ChaCha8Rng| Batch {
        x: randn(rng, &[b, cfg.lookback, cfg.nodes, cfg.in_features]),
        tod: Some((0..b * cfg.lookback).map(|_| rng.random_range(0..6)).collect()),
        dow: Some((0..b * cfg.lookback).map(|_| rng.random_range(0..7)).collect()),
        targets: teacher.then(|| randn(rng, &[b, cfg.horizon, cfg.nodes, cfg.out_features])),
    };
    let names: Vec<String> = model.params().names().cloned().collect();
    let mut inputs: Vec<(&str, Tensor)> =
        names.iter().map(|n| (n.as_str(), model.params().get(n).expect("named").clone())).collect();
    let name = match (cfg.decoder, teacher) {
        (DecoderKind::Projection, _) => "model.projection_decoder",
        (DecoderKind::Attention, true) => "model.attention_decoder.teacher",
        (DecoderKind::Attention, false) => "model.attention_decoder.autoregressive",
    };
    let mut batch = draw(rng);
    inputs.push(("x", batch.x.clone()));
    for _ in 0..MAX_REDRAWS {
        if kink_margin(&inputs, model_loss(&model, &names, &batch, mode))? >= KINK_MARGIN {
            break;
        }
        batch = draw(rng);
        inputs.last_mut().expect("pushed").1 = batch.x.clone();
    }
    t.grad(name, &inputs, model_loss(&model, &names, &batch, mode))
}

/// Central-difference checks of every op, attention function, block kind and
/// whole model over `cases` seeded random instances each.
pub fn gradcheck_suite(cases: usize, seed: u64) -> Result<Vec<CheckLine>> {
    gradcheck_suite_with_step(cases, seed, STEP)
}

/// As [`gradcheck_suite`] with a custom finite-difference step.
pub fn gradcheck_suite_with_step(cases: usize, seed: u64, step: f64) -> Result<Vec<CheckLine>> {
    let mut t = Tally { step, ..Tally::default() };
    for i in 0..cases as u64 {
        t.case = seed.wrapping_add(i);
        let mut rng = ChaCha8Rng::seed_from_u64(t.case);
        op_checks(&mut t, &mut rng)?;
        attention_checks(&mut t, &mut rng)?;
        block_checks(&mut t, &mut rng)?;
        model_check(&mut t, &mut rng)?;
    }
    Ok(t.finish())
}

/// Softmax of constant logits, uniform-score attention and the `y = 2x`
/// residual degeneration on constant-row input.
pub fn lemma_suite(seed: u64) -> Result<Vec<CheckLine>> {
    let mut t = Tally::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for len in 1..=64usize {
        for beta in [0.1, 1.0, 10.0] {
            let c = rng.random_range(-50.0..50.0);
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::full(&[3, len], c));
            let s = tape.softmax(x, beta)?;
            let err = tape.value(s).data().iter().map(|v| (v - 1.0 / len as f64).abs()).fold(0.0, f64::max);
            t.record("softmax_constant_logits", err, EXACT_TOL);
        }
    }
    for _ in 0..50 {
        let heads = rng.random_range(1..4);
        let d = heads * rng.random_range(1..4);
        let n = rng.random_range(1..20);
        let x = randn(&mut rng, &[n, d]);
        let w_v = randn(&mut rng, &[d, d]);

        // Zero query weights make every score row uniform, so each output row is the column mean of V.
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let zero = tape.constant(Tensor::zeros(&[d, d]));
        let wk = tape.constant(randn(&mut rng, &[d, d]));
        let wv = tape.constant(w_v.clone());
        let eye = tape.constant(Tensor::eye(d));
        let out = multi_head_attention(&mut tape, xv, &MhaParams::new(zero, wk, wv, eye, heads), false)?;
        let v = tape.matmul(xv, wv)?;
        let col_mean = tape.mean_axis(v, 0)?;
        let want = tape.value(col_mean).clone();
        let got = tape.value(out);
        let mut err: f64 = 0.0;
        for i in 0..n {
            for j in 0..d {
                err = err.max((got.get(&[i, j]) - want.data()[j]).abs());
            }
        }
        t.record("uniform_scores_mean_of_v", err, EXACT_TOL);

        // Constant rows with identity value/output projections reproduce the input; the residual doubles it.
        let row = randn(&mut rng, &[d]);
        let xc = Tensor::from_fn(&[n, d], |ix| row.data()[ix[1]]);
        let mut tape = Tape::new();
        let xv = tape.constant(xc.clone());
        let wq = tape.constant(randn(&mut rng, &[d, d]));
        let wk = tape.constant(randn(&mut rng, &[d, d]));
        let eye = tape.constant(Tensor::eye(d));
        let a = multi_head_attention(&mut tape, xv, &MhaParams::new(wq, wk, eye, eye, heads), false)?;
        let y = tape.add(a, xv)?;
        let err = tape
            .value(y)
            .data()
            .iter()
            .zip(xc.data())
            .map(|(y, x)| (y - 2.0 * x).abs())
            .fold(0.0, f64::max);
        t.record("residual_degenerates_to_2x", err, EXACT_TOL);
    }
    Ok(t.finish())
}

/// Attention with the value projection removed equals a graph convolution
/// over the dynamic adjacency, on `instances` random graphs of 1 to 16 nodes.
pub fn gcn_equivalence(instances: usize, seed: u64) -> Result<CheckLine> {
    let mut t = Tally::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..instances {
        let n = 1 + i % 16;
        let d = rng.random_range(1..9);
        let mut tape = Tape::new();
        let z = tape.constant(randn(&mut rng, &[n, d]));
        let p = GcnParams {
            w_q: tape.constant(randn(&mut rng, &[d, d])),
            w_k: tape.constant(randn(&mut rng, &[d, d])),
            theta: tape.constant(randn(&mut rng, &[d, d])),
            activation: if rng.random_bool(0.5) { Activation::Relu } else { Activation::Identity },
        };
        let via_attention = modified_attention(&mut tape, z, &p)?;
        let a = dynamic_adjacency(&mut tape, z, &p)?;
        let via_gcn = gcn_layer(&mut tape, z, a, &p, false)?;
        t.record("gcn_equals_attention", tape.value(via_attention).max_abs_diff(tape.value(via_gcn)), EXACT_TOL);
    }
    Ok(t.finish().remove(0))
}
