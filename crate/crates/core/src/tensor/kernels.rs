// Raw slice kernels shared by forward and backward passes. All accumulate into `c`.

/// c[m,n] += a[m,k] · b[k,n]
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aip * bv;
            }
        }
    }
}

/// c[m,n] += a[m,k] · b[n,k]ᵀ
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let dot: f64 = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            c[i * n + j] += dot;
        }
    }
}

/// c[m,n] += a[k,m]ᵀ · b[k,n]
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &api) in a_row.iter().enumerate() {
            if api == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += api * bv;
            }
        }
    }
}

/// Numpy-style broadcast of two shapes (right-aligned).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For each linear index of `out_shape`, the linear index into an operand of
/// shape `in_shape` that broadcasts to it.
pub(crate) fn broadcast_index(out_shape: &[usize], in_shape: &[usize]) -> BroadcastIndex {
    let out_numel: usize = out_shape.iter().product();
    let in_numel: usize = in_shape.iter().product();
    if out_shape == in_shape {
        return BroadcastIndex::Same;
    }
    // Operand equals a suffix of the output shape: plain modulo.
    let nd = out_shape.len();
    let lead = nd - in_shape.len();
    if out_shape[lead..] == *in_shape {
        return BroadcastIndex::Modulo(in_numel);
    }
    let mut strides = vec![0usize; nd];
    let mut s = 1;
    for i in (0..in_shape.len()).rev() {
        if in_shape[i] != 1 {
            strides[lead + i] = s;
        }
        s *= in_shape[i];
    }
    let mut map = Vec::with_capacity(out_numel);
    let mut idx = vec![0usize; nd];
    let mut off = 0usize;
    for _ in 0..out_numel {
        map.push(off);
        for ax in (0..nd).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    BroadcastIndex::Map(map)
}

pub(crate) enum BroadcastIndex {
    Same,
    Modulo(usize),
    Map(Vec<usize>),
}

impl BroadcastIndex {
    #[inline]
    pub(crate) fn get(&self, i: usize) -> usize {
        match self {
            BroadcastIndex::Same => i,
            BroadcastIndex::Modulo(m) => i % m,
            BroadcastIndex::Map(map) => map[i],
        }
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Permutes axes: out.shape[i] = shape[axes[i]].
pub(crate) fn permute(data: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let gather_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let nd = out_shape.len();
    let mut out = Vec::with_capacity(data.len());
    if nd == 0 {
        out.extend_from_slice(data);
        return (out_shape, out);
    }
    let inner = out_shape[nd - 1];
    let inner_stride = gather_strides[nd - 1];
    let outer: usize = out_shape[..nd - 1].iter().product();
    let mut idx = vec![0usize; nd - 1];
    let mut base = 0usize;
    for _ in 0..outer {
        for j in 0..inner {
            out.push(data[base + j * inner_stride]);
        }
        for ax in (0..nd - 1).rev() {
            idx[ax] += 1;
            base += gather_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= gather_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_variants_agree() {
        // a [2,3], b [3,2]
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = [0.0; 4];
        gemm_nn(&a, &b, &mut c, 2, 3, 2);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);

        // bᵀ stored as [2,3]
        let bt = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0];
        let mut c2 = [0.0; 4];
        gemm_nt(&a, &bt, &mut c2, 2, 3, 2);
        assert_eq!(c, c2);

        // aᵀ stored as [3,2]
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let mut c3 = [0.0; 4];
        gemm_tn(&at, &b, &mut c3, 2, 3, 2);
        assert_eq!(c, c3);
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3, 4], &[4]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[4]), None);
        let map = broadcast_index(&[2, 3, 2], &[2, 1, 2]);
        let got: Vec<usize> = (0..12).map(|i| map.get(i)).collect();
        assert_eq!(got, vec![0, 1, 0, 1, 0, 1, 2, 3, 2, 3, 2, 3]);
    }

    #[test]
    fn permute_matches_index_formula() {
        let shape = [2, 3, 4];
        let data: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let (out_shape, out) = permute(&data, &shape, &[2, 0, 1]);
        assert_eq!(out_shape, vec![4, 2, 3]);
        for k in 0..4 {
            for i in 0..2 {
                for j in 0..3 {
                    assert_eq!(out[k * 6 + i * 3 + j], data[i * 12 + j * 4 + k]);
                }
            }
        }
    }
}
