// Forward definitions of every taped operation, with their FLOP charges.
//
// Counting convention (shared with the analytic cost model):
//   matmul [m,k]·[k,n]            2·m·k·n
//   add / sub / mul / scale        1 per output element
//   relu / abs / square            1 per element
//   softmax over n                 5·n per row
//   layer norm over d              8·d per row
//   dropout                        1 per element in train mode with p > 0, else 0
//   sum                            1 per input element
//   mean over an axis              1 per input element + 1 per output element
//   permute / reshape / expand / concat / narrow / gather / causal mask   0

use rand::Rng;

use super::kernels;
use super::tape::{Mode, Op, Tape, Var};
use super::{numel, Tensor};
use crate::error::{Error, Result};

/// Logit assigned to masked-out attention positions.
pub const MASKED_LOGIT: f64 = -1e30;

impl Tape {
    /// `a [.., m, k] · b [k, n]`; leading axes of `a` are flattened into rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let (k, n) = (sb[0], sb[1]);
        let m = numel(&sa) / k.max(1);
        let mut out = vec![0.0; m * n];
        kernels::gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = n;
        self.count(2 * (m * k * n) as u64);
        let rg = self.rg(ia) || self.rg(ib);
        self.emit("matmul", Tensor::new(&shape, out)?, Op::MatMul { a: ia, b: ib }, rg)
    }

    /// Batched product `[bt, m, k] · [bt, k, n]`, or `· [bt, n, k]ᵀ` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok = sa.len() == 3
            && sb.len() == 3
            && sa[0] == sb[0]
            && if trans_b { sa[2] == sb[2] } else { sa[2] == sb[1] };
        if !ok {
            return Err(Error::shape("bmm", &sa, &sb));
        }
        let (bt, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        let mut out = vec![0.0; bt * m * n];
        {
            let ad = self.value(a).data();
            let bd = self.value(b).data();
            for t in 0..bt {
                let a_s = &ad[t * m * k..(t + 1) * m * k];
                let b_s = &bd[t * k * n..(t + 1) * k * n];
                let c_s = &mut out[t * m * n..(t + 1) * m * n];
                if trans_b {
                    kernels::gemm_nt(a_s, b_s, c_s, m, k, n);
                } else {
                    kernels::gemm_nn(a_s, b_s, c_s, m, k, n);
                }
            }
        }
        self.count(2 * (bt * m * k * n) as u64);
        let rg = self.rg(ia) || self.rg(ib);
        self.emit(
            "bmm",
            Tensor::new(&[bt, m, n], out)?,
            Op::BatchMatMul { a: ia, b: ib, trans_b },
            rg,
        )
    }

    fn broadcast_binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let shape = kernels::broadcast_shape(&sa, &sb).ok_or_else(|| Error::shape(name, &sa, &sb))?;
        let ma = kernels::broadcast_index(&shape, &sa);
        let mb = kernels::broadcast_index(&shape, &sb);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let out: Vec<f64> = (0..numel(&shape))
            .map(|j| f(ad[ma.get(j)], bd[mb.get(j)]))
            .collect();
        self.count(out.len() as u64);
        let rg = self.rg(ia) || self.rg(ib);
        self.emit(name, Tensor::new(&shape, out)?, op(ia, ib), rg)
    }

    /// Broadcasts `a` to `shape` by copying.
    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.check(a)?;
        let sa = self.shape(a).to_vec();
        if kernels::broadcast_shape(&sa, shape).as_deref() != Some(shape) {
            return Err(Error::shape("expand", &sa, shape));
        }
        let map = kernels::broadcast_index(shape, &sa);
        let ad = self.value(a).data();
        let out: Vec<f64> = (0..numel(shape)).map(|j| ad[map.get(j)]).collect();
        let rg = self.rg(ia);
        Ok(self.push(Tensor::new(shape, out)?, Op::Expand { a: ia }, rg))
    }

    /// Elementwise sum with right-aligned broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary("add", a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary("sub", a, b, |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    /// Elementwise product with right-aligned broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary("mul", a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let ia = self.check(a)?;
        let t = self.value(a);
        let out = Tensor::new(t.shape(), t.data().iter().map(|&v| f(v)).collect())?;
        self.count(out.numel() as u64);
        let rg = self.rg(ia);
        self.emit(name, out, op, rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary("scale", a, |v| v * s, Op::Scale { a: ia, s })
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary("relu", a, |v| v.max(0.0), Op::Relu { a: ia })
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary("abs", a, f64::abs, Op::Abs { a: ia })
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary("square", a, |v| v * v, Op::Square { a: ia })
    }

    /// Temperature softmax over the last axis, stabilised by max subtraction.
    pub fn softmax(&mut self, a: Var, beta: f64) -> Result<Var> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Param(format!("softmax temperature must be > 0, got {beta}")));
        }
        let ia = self.check(a)?;
        let t = self.value(a);
        let n = *t.shape().last().ok_or_else(|| Error::shape("softmax", t.shape(), &[]))?;
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(n.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (beta * (*v - max)).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let out = Tensor::new(t.shape(), out)?;
        self.count(5 * out.numel() as u64);
        let rg = self.rg(ia);
        self.emit("softmax", out, Op::Softmax { a: ia, beta }, rg)
    }

    /// Layer normalisation over the last axis with learnable gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps < 0.0 || !eps.is_finite() {
            return Err(Error::Param(format!("layer norm eps must be >= 0, got {eps}")));
        }
        let (ix, ig, ib) = (self.check(x)?, self.check(gain)?, self.check(bias)?);
        let sx = self.shape(x).to_vec();
        let d = *sx.last().ok_or_else(|| Error::shape("layer_norm", &sx, &[]))?;
        if d == 0 || self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::shape("layer_norm", &sx, self.shape(gain)));
        }
        let xd = self.value(x).data();
        let gd = self.value(gain).data();
        let bd = self.value(bias).data();
        let rows = xd.len() / d;
        let mut xhat = vec![0.0; xd.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gd[j] + bd[j];
            }
        }
        if !rstd.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("layer_norm"));
        }
        self.count(8 * xd.len() as u64);
        let rg = self.rg(ix) || self.rg(ig) || self.rg(ib);
        self.emit(
            "layer_norm",
            Tensor::new(&sx, out)?,
            Op::LayerNorm {
                x: ix,
                gain: ig,
                bias: ib,
                xhat,
                rstd,
            },
            rg,
        )
    }

    /// Inverted dropout. Identity (and free) in eval mode or with `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Param(format!("dropout probability must lie in [0,1), got {p}")));
        }
        let ix = self.check(x)?;
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let t = self.value(x);
        let out = Tensor::new(t.shape(), t.data().iter().zip(&mask).map(|(v, m)| v * m).collect())?;
        self.count(n as u64);
        let rg = self.rg(ix);
        self.emit("dropout", out, Op::Dropout { a: ix, mask }, rg)
    }

    /// `x · w + b` over the last axis.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => {
                let n = self.shape(w)[1];
                if self.shape(b) != [n] {
                    return Err(Error::shape("linear bias", self.shape(b), &[n]));
                }
                self.add(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let ia = self.check(a)?;
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&ax| ax >= shape.len() || std::mem::replace(&mut seen[ax], true)) {
            return Err(Error::shape("permute", &shape, axes));
        }
        let (out_shape, out) = kernels::permute(self.value(a).data(), &shape, axes);
        let rg = self.rg(ia);
        Ok(self.push(
            Tensor::new(&out_shape, out)?,
            Op::Permute {
                a: ia,
                axes: axes.to_vec(),
            },
            rg,
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let nd = self.shape(a).len();
        if nd < 2 {
            return Err(Error::shape("transpose", self.shape(a), &[]));
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 1, nd - 2);
        self.permute(a, &axes)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.check(a)?;
        if numel(shape) != self.value(a).numel() {
            return Err(Error::shape("reshape", self.shape(a), shape));
        }
        let out = Tensor::new(shape, self.value(a).data().to_vec())?;
        let rg = self.rg(ia);
        Ok(self.push(out, Op::Reshape { a: ia }, rg))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs.first().ok_or_else(|| Error::Param("concat of zero tensors".into()))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", &base, &[axis]));
        }
        let mut ids = Vec::with_capacity(inputs.len());
        let mut total = 0;
        for &v in inputs {
            ids.push(self.check(v)?);
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(ax, (x, y))| ax == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut shape = base.clone();
        shape[axis] = total;
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &v in inputs {
                let w = self.shape(v)[axis];
                out.extend_from_slice(&self.value(v).data()[o * w * inner..(o + 1) * w * inner]);
            }
        }
        let rg = ids.iter().any(|&i| self.rg(i));
        Ok(self.push(Tensor::new(&shape, out)?, Op::Concat { inputs: ids, axis }, rg))
    }

    /// Concatenates along the last axis.
    pub fn concat_last_axis(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs.first().ok_or_else(|| Error::Param("concat of zero tensors".into()))?;
        let axis = self.shape(first).len().saturating_sub(1);
        self.concat(inputs, axis)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape("narrow", &shape, &[axis, start, len]));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let total = shape[axis];
        let data = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&data[(o * total + start) * inner..(o * total + start + len) * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let rg = self.rg(ia);
        Ok(self.push(Tensor::new(&out_shape, out)?, Op::Narrow { a: ia, axis, start }, rg))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let t = self.value(a);
        let s: f64 = t.data().iter().sum();
        self.count(t.numel() as u64);
        let rg = self.rg(ia);
        self.emit("sum", Tensor::scalar(s), Op::Sum { a: ia }, rg)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        if n == 0 {
            return Err(Error::Param("mean of an empty tensor".into()));
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Mean over `axis`, keeping it with extent 1.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::shape("mean_axis", &shape, &[axis]));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let len = shape[axis];
        let data = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for t in 0..len {
                let src = &data[(o * len + t) * inner..(o * len + t + 1) * inner];
                for (x, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *x += v;
                }
            }
        }
        let inv = 1.0 / len as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let mut out_shape = shape.clone();
        out_shape[axis] = 1;
        self.count((data.len() + out.len()) as u64);
        let rg = self.rg(ia);
        self.emit("mean_axis", Tensor::new(&out_shape, out)?, Op::MeanAxis { a: ia, axis }, rg)
    }

    /// Row lookup: `table [v, d]` indexed by `indices` gives `[len, d]`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let it = self.check(table)?;
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(Error::shape("gather_rows", &shape, &[]));
        }
        let (v, d) = (shape[0], shape[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(Error::Param(format!("lookup index {bad} out of range for table of {v} rows")));
        }
        let data = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&data[i * d..(i + 1) * d]);
        }
        let rg = self.rg(it);
        Ok(self.push(
            Tensor::new(&[indices.len(), d], out)?,
            Op::Gather {
                table: it,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Symmetric degree normalisation `D^(-1/2) A D^(-1/2)` of trailing `[n, n]`
    /// matrices, with `D` the diagonal of row sums. No self-loops are added.
    pub fn degree_normalize(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let shape = self.shape(a).to_vec();
        let nd = shape.len();
        if nd < 2 || shape[nd - 1] != shape[nd - 2] {
            return Err(Error::shape("degree_normalize", &shape, &[]));
        }
        let n = shape[nd - 1];
        let data = self.value(a).data();
        if data.iter().any(|&v| v < 0.0) {
            return Err(Error::Param("adjacency must be nonnegative".into()));
        }
        let mats = data.len() / (n * n).max(1);
        let mut rsqrt_deg = vec![0.0; mats * n];
        for m in 0..mats {
            for i in 0..n {
                let deg: f64 = data[m * n * n + i * n..m * n * n + (i + 1) * n].iter().sum();
                if deg <= 0.0 {
                    return Err(Error::DegenerateGraph(i));
                }
                rsqrt_deg[m * n + i] = 1.0 / deg.sqrt();
            }
        }
        let mut out = data.to_vec();
        for m in 0..mats {
            for i in 0..n {
                for j in 0..n {
                    out[m * n * n + i * n + j] *= rsqrt_deg[m * n + i] * rsqrt_deg[m * n + j];
                }
            }
        }
        // row sums, rsqrt per node, two scalings per entry
        self.count((mats * (3 * n * n + n)) as u64);
        let rg = self.rg(ia);
        self.emit(
            "degree_normalize",
            Tensor::new(&shape, out)?,
            Op::DegreeNormalize { a: ia, rsqrt_deg },
            rg,
        )
    }

    /// Sets entries above the diagonal of the trailing `[n, n]` matrices to [`MASKED_LOGIT`].
    pub fn causal_mask(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let shape = self.shape(a).to_vec();
        let nd = shape.len();
        if nd < 2 || shape[nd - 1] != shape[nd - 2] {
            return Err(Error::shape("causal_mask", &shape, &[]));
        }
        let n = shape[nd - 1];
        let mut out = self.value(a).data().to_vec();
        for (j, v) in out.iter_mut().enumerate() {
            if j % n > (j / n) % n {
                *v = MASKED_LOGIT;
            }
        }
        let rg = self.rg(ia);
        Ok(self.push(Tensor::new(&shape, out)?, Op::CausalMask { a: ia }, rg))
    }
}
