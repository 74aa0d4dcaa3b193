use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(1);

/// Whether stochastic layers are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    pub(crate) tape: usize,
    pub(crate) idx: usize,
}

/// FLOPs accumulated per scope name.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlopCounter {
    by_scope: BTreeMap<String, u64>,
}

impl FlopCounter {
    pub fn total(&self) -> u64 {
        self.by_scope.values().sum()
    }

    pub fn by_scope(&self) -> &BTreeMap<String, u64> {
        &self.by_scope
    }

    /// Sum over every scope whose name starts with `prefix`.
    pub fn prefixed(&self, prefix: &str) -> u64 {
        self.by_scope
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v)
            .sum()
    }

    pub(crate) fn add(&mut self, scope: &str, flops: u64) {
        if flops > 0 {
            *self.by_scope.entry(scope.to_string()).or_insert(0) += flops;
        }
    }
}

pub(crate) enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    BatchMatMul { a: usize, b: usize, trans_b: bool },
    Add { a: usize, b: usize },
    Expand { a: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, s: f64 },
    Relu { a: usize },
    Abs { a: usize },
    Square { a: usize },
    Softmax { a: usize, beta: f64 },
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Vec<f64>, rstd: Vec<f64> },
    Dropout { a: usize, mask: Vec<f64> },
    Permute { a: usize, axes: Vec<usize> },
    Reshape { a: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    Narrow { a: usize, axis: usize, start: usize },
    Sum { a: usize },
    MeanAxis { a: usize, axis: usize },
    Gather { table: usize, indices: Vec<usize> },
    CausalMask { a: usize },
    DegreeNormalize { a: usize, rsqrt_deg: Vec<f64> },
}

/// See [`Tape::smoothness`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Smoothness {
    pub kink_margin: f64,
    pub max_rstd: f64,
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Records operations for reverse-mode differentiation and counts their FLOPs.
pub struct Tape {
    id: usize,
    pub(crate) nodes: Vec<Node>,
    grads: Option<Vec<Option<Vec<f64>>>>,
    counter: FlopCounter,
    scope: Vec<String>,
    scope_name: String,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: None,
            counter: FlopCounter::default(),
            scope: Vec::new(),
            scope_name: String::new(),
        }
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.idx].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.idx].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn flops(&self) -> &FlopCounter {
        &self.counter
    }

    /// How close the recorded point is to where the graph stops being smooth:
    /// the smallest `|input|` to any ReLU or abs and the largest layer-norm `1/std`.
    pub fn smoothness(&self) -> Smoothness {
        let mut s = Smoothness { kink_margin: f64::INFINITY, max_rstd: 0.0 };
        for node in &self.nodes {
            match &node.op {
                Op::Relu { a } | Op::Abs { a } => {
                    for v in self.nodes[*a].value.data() {
                        s.kink_margin = s.kink_margin.min(v.abs());
                    }
                }
                Op::LayerNorm { rstd, .. } => {
                    s.max_rstd = rstd.iter().fold(s.max_rstd, |m, r| m.max(*r));
                }
                _ => {}
            }
        }
        s
    }

    /// Enter a named scope; FLOPs are attributed to the dotted scope path.
    pub fn push_scope(&mut self, name: impl Into<String>) {
        self.scope.push(name.into());
        self.scope_name = self.scope.join(".");
    }

    pub fn pop_scope(&mut self) {
        self.scope.pop();
        self.scope_name = self.scope.join(".");
    }

    pub(crate) fn count(&mut self, flops: u64) {
        let scope = if self.scope_name.is_empty() {
            "root"
        } else {
            self.scope_name.as_str()
        };
        self.counter.add(scope, flops);
    }

    pub(crate) fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::Tape("variable belongs to a different tape".into()));
        }
        Ok(v.idx)
    }

    pub(crate) fn rg(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let idx = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { tape: self.id, idx }
    }

    /// Pushes an op result after verifying every value is finite.
    pub(crate) fn emit(&mut self, name: &'static str, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        Ok(self.push(value, op, requires_grad))
    }

    /// Gradient of the last backward pass with respect to `v`.
    ///
    /// Returns zeros for differentiable values the loss does not depend on and
    /// `None` before backward or for constants.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let grads = self.grads.as_ref()?;
        if v.tape != self.id || !self.nodes.get(v.idx)?.requires_grad {
            return None;
        }
        let shape = self.nodes[v.idx].value.shape();
        Some(match &grads[v.idx] {
            Some(g) => Tensor::new(shape, g.clone()).expect("grad shape"),
            None => Tensor::zeros(shape),
        })
    }

    /// Clears gradients so another backward pass may run.
    pub fn reset_grads(&mut self) {
        self.grads = None;
    }

    /// Backpropagates from a scalar loss.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let idx = self.check(loss)?;
        if self.nodes[idx].value.numel() != 1 {
            return Err(Error::Tape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[idx].value.shape()
            )));
        }
        let seed = Tensor::ones(self.nodes[idx].value.shape());
        self.backward_with_seed(loss, &seed)
    }

    /// Vector-Jacobian product: backpropagates `seed` from a tensor output.
    pub fn backward_with_seed(&mut self, output: Var, seed: &Tensor) -> Result<()> {
        let idx = self.check(output)?;
        if self.grads.is_some() {
            return Err(Error::Tape("backward already ran; call reset_grads first".into()));
        }
        if !self.nodes[idx].requires_grad {
            return Err(Error::Tape("output does not depend on any differentiable input".into()));
        }
        if seed.shape() != self.nodes[idx].value.shape() {
            return Err(Error::shape("backward seed", seed.shape(), self.nodes[idx].value.shape()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[idx] = Some(seed.data().to_vec());
        for i in (0..=idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let av = &nodes[*a].value;
                let bv = &nodes[*b].value;
                let k = bv.shape()[0];
                let n = bv.shape()[1];
                let m = av.numel() / k;
                if self.rg(*a) {
                    let ga = acc(grads, *a, av.numel());
                    kernels::gemm_nt(g, bv.data(), ga, m, n, k);
                }
                if self.rg(*b) {
                    let gb = acc(grads, *b, bv.numel());
                    kernels::gemm_tn(av.data(), g, gb, k, m, n);
                }
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let av = &nodes[*a].value;
                let bv = &nodes[*b].value;
                let (bt, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = out.shape()[2];
                let (sa, sb, sc) = (m * k, k * n, m * n);
                if self.rg(*a) {
                    let ga = acc(grads, *a, av.numel());
                    for t in 0..bt {
                        let gc = &g[t * sc..(t + 1) * sc];
                        let bs = &bv.data()[t * sb..(t + 1) * sb];
                        let gas = &mut ga[t * sa..(t + 1) * sa];
                        if *trans_b {
                            // C = A Bᵀ, B [n,k] -> dA = dC B
                            kernels::gemm_nn(gc, bs, gas, m, n, k);
                        } else {
                            kernels::gemm_nt(gc, bs, gas, m, n, k);
                        }
                    }
                }
                if self.rg(*b) {
                    let gb = acc(grads, *b, bv.numel());
                    for t in 0..bt {
                        let gc = &g[t * sc..(t + 1) * sc];
                        let as_ = &av.data()[t * sa..(t + 1) * sa];
                        let gbs = &mut gb[t * sb..(t + 1) * sb];
                        if *trans_b {
                            // dB [n,k] = dCᵀ A
                            kernels::gemm_tn(gc, as_, gbs, n, m, k);
                        } else {
                            kernels::gemm_tn(as_, gc, gbs, k, m, n);
                        }
                    }
                }
            }
            Op::Add { a, b } | Op::Sub { a, b } => {
                let sign = if matches!(nodes[i].op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                for (operand, s) in [(*a, 1.0), (*b, sign)] {
                    if !self.rg(operand) {
                        continue;
                    }
                    let map = kernels::broadcast_index(out.shape(), nodes[operand].value.shape());
                    let ga = acc(grads, operand, nodes[operand].value.numel());
                    for (j, &gj) in g.iter().enumerate() {
                        ga[map.get(j)] += s * gj;
                    }
                }
            }
            Op::Expand { a } => {
                let map = kernels::broadcast_index(out.shape(), nodes[*a].value.shape());
                let ga = acc(grads, *a, nodes[*a].value.numel());
                for (j, &gj) in g.iter().enumerate() {
                    ga[map.get(j)] += gj;
                }
            }
            Op::Mul { a, b } => {
                let av = &nodes[*a].value;
                let bv = &nodes[*b].value;
                let ma = kernels::broadcast_index(out.shape(), av.shape());
                let mb = kernels::broadcast_index(out.shape(), bv.shape());
                if self.rg(*a) {
                    let ga = acc(grads, *a, av.numel());
                    for (j, &gj) in g.iter().enumerate() {
                        ga[ma.get(j)] += gj * bv.data()[mb.get(j)];
                    }
                }
                if self.rg(*b) {
                    let gb = acc(grads, *b, bv.numel());
                    for (j, &gj) in g.iter().enumerate() {
                        gb[mb.get(j)] += gj * av.data()[ma.get(j)];
                    }
                }
            }
            Op::Scale { a, s } => {
                let ga = acc(grads, *a, g.len());
                for (x, &gj) in ga.iter_mut().zip(g) {
                    *x += s * gj;
                }
            }
            Op::Relu { a } => {
                let av = nodes[*a].value.data();
                let ga = acc(grads, *a, g.len());
                for ((x, &gj), &v) in ga.iter_mut().zip(g).zip(av) {
                    if v > 0.0 {
                        *x += gj;
                    }
                }
            }
            Op::Abs { a } => {
                let av = nodes[*a].value.data();
                let ga = acc(grads, *a, g.len());
                for ((x, &gj), &v) in ga.iter_mut().zip(g).zip(av) {
                    *x += gj * sign0(v);
                }
            }
            Op::Square { a } => {
                let av = nodes[*a].value.data();
                let ga = acc(grads, *a, g.len());
                for ((x, &gj), &v) in ga.iter_mut().zip(g).zip(av) {
                    *x += 2.0 * v * gj;
                }
            }
            Op::Softmax { a, beta } => {
                let n = *out.shape().last().unwrap_or(&1);
                let s = out.data();
                let ga = acc(grads, *a, g.len());
                for r in 0..s.len() / n.max(1) {
                    let sr = &s[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let dot: f64 = sr.iter().zip(gr).map(|(x, y)| x * y).sum();
                    for j in 0..n {
                        ga[r * n + j] += beta * sr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = nodes[*gain].value.numel();
                let gv = nodes[*gain].value.data().to_vec();
                let rows = g.len() / d;
                if self.rg(*gain) {
                    let gg = acc(grads, *gain, d);
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if self.rg(*bias) {
                    let gb = acc(grads, *bias, d);
                    for r in 0..rows {
                        for j in 0..d {
                            gb[j] += g[r * d + j];
                        }
                    }
                }
                if self.rg(*x) {
                    let gx = acc(grads, *x, g.len());
                    let inv_d = 1.0 / d as f64;
                    for r in 0..rows {
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_xhat = 0.0;
                        for j in 0..d {
                            let dxh = g[r * d + j] * gv[j];
                            mean_dxhat += dxh;
                            mean_dxhat_xhat += dxh * xhat[r * d + j];
                        }
                        mean_dxhat *= inv_d;
                        mean_dxhat_xhat *= inv_d;
                        for j in 0..d {
                            let dxh = g[r * d + j] * gv[j];
                            gx[r * d + j] +=
                                rstd[r] * (dxh - mean_dxhat - xhat[r * d + j] * mean_dxhat_xhat);
                        }
                    }
                }
            }
            Op::Dropout { a, mask } => {
                let ga = acc(grads, *a, g.len());
                for ((x, &gj), &m) in ga.iter_mut().zip(g).zip(mask) {
                    *x += gj * m;
                }
            }
            Op::Permute { a, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inverse[ax] = i;
                }
                let (_, back) = kernels::permute(g, out.shape(), &inverse);
                let ga = acc(grads, *a, g.len());
                for (x, v) in ga.iter_mut().zip(back) {
                    *x += v;
                }
            }
            Op::Reshape { a } => {
                let ga = acc(grads, *a, g.len());
                for (x, &v) in ga.iter_mut().zip(g) {
                    *x += v;
                }
            }
            Op::Concat { inputs, axis } => {
                let shape = out.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis];
                let mut offset = 0;
                for &inp in inputs {
                    let width = nodes[inp].value.shape()[*axis];
                    if self.rg(inp) {
                        let ga = acc(grads, inp, nodes[inp].value.numel());
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + width) * inner];
                            let dst = &mut ga[o * width * inner..(o + 1) * width * inner];
                            for (x, &v) in dst.iter_mut().zip(src) {
                                *x += v;
                            }
                        }
                    }
                    offset += width;
                }
            }
            Op::Narrow { a, axis, start } => {
                let in_shape = nodes[*a].value.shape();
                let outer: usize = in_shape[..*axis].iter().product();
                let inner: usize = in_shape[axis + 1..].iter().product();
                let total = in_shape[*axis];
                let len = out.shape()[*axis];
                let ga = acc(grads, *a, nodes[*a].value.numel());
                for o in 0..outer {
                    let dst = &mut ga[(o * total + start) * inner..(o * total + start + len) * inner];
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    for (x, &v) in dst.iter_mut().zip(src) {
                        *x += v;
                    }
                }
            }
            Op::Sum { a } => {
                let n = nodes[*a].value.numel();
                let ga = acc(grads, *a, n);
                for x in ga.iter_mut() {
                    *x += g[0];
                }
            }
            Op::MeanAxis { a, axis } => {
                let in_shape = nodes[*a].value.shape();
                let outer: usize = in_shape[..*axis].iter().product();
                let inner: usize = in_shape[axis + 1..].iter().product();
                let len = in_shape[*axis];
                let scale = 1.0 / len as f64;
                let ga = acc(grads, *a, nodes[*a].value.numel());
                for o in 0..outer {
                    for t in 0..len {
                        for j in 0..inner {
                            ga[(o * len + t) * inner + j] += g[o * inner + j] * scale;
                        }
                    }
                }
            }
            Op::Gather { table, indices } => {
                let d = nodes[*table].value.shape()[1];
                let gt = acc(grads, *table, nodes[*table].value.numel());
                for (r, &ix) in indices.iter().enumerate() {
                    for j in 0..d {
                        gt[ix * d + j] += g[r * d + j];
                    }
                }
            }
            Op::DegreeNormalize { a, rsqrt_deg } => {
                // out_ij = a_ij r_i r_j with r_i = (sum_k a_ik)^(-1/2)
                let av = nodes[*a].value.data();
                let n = rsqrt_deg.len().min(out.shape().last().copied().unwrap_or(0));
                let mats = g.len() / (n * n).max(1);
                let ga = acc(grads, *a, g.len());
                for m in 0..mats {
                    let base = m * n * n;
                    let r = &rsqrt_deg[m * n..(m + 1) * n];
                    let mut c = vec![0.0; n];
                    for i in 0..n {
                        for j in 0..n {
                            let w = g[base + i * n + j] * av[base + i * n + j];
                            c[i] += w * r[j];
                            c[j] += w * r[i];
                        }
                    }
                    for i in 0..n {
                        let ri3 = r[i] * r[i] * r[i];
                        for j in 0..n {
                            ga[base + i * n + j] += g[base + i * n + j] * r[i] * r[j] - 0.5 * ri3 * c[i];
                        }
                    }
                }
            }
            Op::CausalMask { a } => {
                let n = *out.shape().last().unwrap_or(&1);
                let ga = acc(grads, *a, g.len());
                for (j, (x, &v)) in ga.iter_mut().zip(g).enumerate() {
                    let col = j % n;
                    let row = (j / n) % n;
                    if col <= row {
                        *x += v;
                    }
                }
            }
        }
    }
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut Vec<f64> {
    grads[idx].get_or_insert_with(|| vec![0.0; len])
}
