//! Raw numeric kernels over flat slices. No graph bookkeeping here.

use crate::error::{Error, Result};

use super::Tensor;

/// Broadcast two shapes, right-aligned; each pair of dims must match or
/// one of them must be 1.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = dim_from_right(a, rank - 1 - i);
        let db = dim_from_right(b, rank - 1 - i);
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn dim_from_right(shape: &[usize], k: usize) -> usize {
    if k < shape.len() {
        shape[shape.len() - 1 - k]
    } else {
        1
    }
}

/// Element strides of `shape` viewed inside `out_shape`, with 0 for
/// broadcast dimensions.
fn aligned_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..rank).rev() {
        let k = rank - 1 - i;
        let d = dim_from_right(shape, k);
        strides[i] = if d == 1 { 0 } else { acc };
        acc *= d;
    }
    strides
}

/// Visit every index of `out_shape`, yielding the flat offset into each of
/// the two (broadcast) operands.
fn for_each_pair(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n: usize = out_shape.iter().product();
    if n == 0 {
        return;
    }
    let rank = out_shape.len();
    match rank {
        0 => f(0, 0, 0),
        1 => {
            for i in 0..out_shape[0] {
                f(i, i * sa[0], i * sb[0]);
            }
        }
        2 => {
            let (r, c) = (out_shape[0], out_shape[1]);
            let mut o = 0;
            for i in 0..r {
                let ia = i * sa[0];
                let ib = i * sb[0];
                for j in 0..c {
                    f(o, ia + j * sa[1], ib + j * sb[1]);
                    o += 1;
                }
            }
        }
        _ => {
            let mut idx = vec![0usize; rank];
            for o in 0..n {
                let ia: usize = idx.iter().zip(sa).map(|(i, s)| i * s).sum();
                let ib: usize = idx.iter().zip(sb).map(|(i, s)| i * s).sum();
                f(o, ia, ib);
                for d in (0..rank).rev() {
                    idx[d] += 1;
                    if idx[d] < out_shape[d] {
                        break;
                    }
                    idx[d] = 0;
                }
            }
        }
    }
}

pub fn binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    let out_shape = broadcast_shapes(a.shape(), b.shape()).ok_or_else(|| Error::Dimension {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })?;
    let sa = aligned_strides(a.shape(), &out_shape);
    let sb = aligned_strides(b.shape(), &out_shape);
    let n: usize = out_shape.iter().product();
    let mut out = vec![0.0; n];
    let (ad, bd) = (a.data(), b.data());
    for_each_pair(&out_shape, &sa, &sb, |o, ia, ib| out[o] = f(ad[ia], bd[ib]));
    Tensor::new(out_shape, out)
}

/// Broadcast `a` up to `shape`.
pub fn expand(a: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let ok = broadcast_shapes(a.shape(), shape).is_some_and(|s| s == shape);
    if !ok {
        return Err(Error::Dimension {
            op: "expand",
            lhs: a.shape().to_vec(),
            rhs: shape.to_vec(),
        });
    }
    let sa = aligned_strides(a.shape(), shape);
    let zero = vec![0; shape.len()];
    let n: usize = shape.iter().product();
    let mut out = vec![0.0; n];
    let ad = a.data();
    for_each_pair(shape, &sa, &zero, |o, ia, _| out[o] = ad[ia]);
    Tensor::new(shape.to_vec(), out)
}

/// Sum `a` down to `shape`, the reverse of [`expand`].
pub fn sum_to(a: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let ok = broadcast_shapes(shape, a.shape()).is_some_and(|s| s == a.shape());
    if !ok {
        return Err(Error::Dimension {
            op: "sum_to",
            lhs: a.shape().to_vec(),
            rhs: shape.to_vec(),
        });
    }
    let st = aligned_strides(shape, a.shape());
    let zero = vec![0; a.rank()];
    let n: usize = shape.iter().product();
    let mut out = vec![0.0; n];
    let ad = a.data();
    for_each_pair(a.shape(), &st, &zero, |o, it, _| out[it] += ad[o]);
    Tensor::new(shape.to_vec(), out)
}

/// `(outer, len, inner)` decomposition around `axis`.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn sum_axis(a: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = axis_split(a.shape(), axis);
    let mut out = vec![0.0; outer * inner];
    let ad = a.data();
    for o in 0..outer {
        for l in 0..len {
            let base = (o * len + l) * inner;
            let dst = &mut out[o * inner..(o + 1) * inner];
            for (d, &x) in dst.iter_mut().zip(&ad[base..base + inner]) {
                *d += x;
            }
        }
    }
    let mut shape = a.shape().to_vec();
    shape[axis] = 1;
    Tensor::new(shape, out).expect("sum_axis shape")
}

pub fn softmax(a: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = axis_split(a.shape(), axis);
    let ad = a.data();
    let mut out = vec![0.0; ad.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| (o * len + l) * inner + i;
            let mut max = f64::NEG_INFINITY;
            for l in 0..len {
                max = max.max(ad[at(l)]);
            }
            let mut sum = 0.0;
            for l in 0..len {
                let e = (ad[at(l)] - max).exp();
                out[at(l)] = e;
                sum += e;
            }
            for l in 0..len {
                out[at(l)] /= sum;
            }
        }
    }
    Tensor::new(a.shape().to_vec(), out).expect("softmax shape")
}

pub fn layernorm(x: &Tensor, gain: &[f64], bias: &[f64], eps: f64) -> Tensor {
    let d = *x.shape().last().unwrap_or(&1);
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for (row, dst) in xd.chunks(d).zip(out.chunks_mut(d)) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        for j in 0..d {
            dst[j] = (row[j] - mean) * rstd * gain[j] + bias[j];
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("layernorm shape")
}

/// `op(a) · op(b)` where `op` optionally transposes the last two axes.
///
/// Operands are either both rank 2, or both rank 3 with a shared leading
/// batch axis. Returns the product and `(m, n, k)` summed over batches as
/// `(batch·m, n, k)` for FLOP accounting.
pub fn matmul(
    a: &Tensor,
    b: &Tensor,
    ta: bool,
    tb: bool,
) -> Result<(Tensor, (usize, usize, usize))> {
    let mismatch = || Error::Dimension {
        op: "matmul",
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    };
    let (batch, ar, ac, br, bc) = match (a.shape(), b.shape()) {
        ([ar, ac], [br, bc]) => (1, *ar, *ac, *br, *bc),
        ([ga, ar, ac], [gb, br, bc]) if ga == gb => (*ga, *ar, *ac, *br, *bc),
        _ => return Err(mismatch()),
    };
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(mismatch());
    }
    let mut out = vec![0.0; batch * m * n];
    let (asz, bsz, osz) = (ar * ac, br * bc, m * n);
    for g in 0..batch {
        matmul_block(
            &a.data()[g * asz..(g + 1) * asz],
            &b.data()[g * bsz..(g + 1) * bsz],
            &mut out[g * osz..(g + 1) * osz],
            (m, n, k),
            ta,
            tb,
        );
    }
    let shape = if a.rank() == 3 {
        vec![batch, m, n]
    } else {
        vec![m, n]
    };
    Ok((Tensor::new(shape, out)?, (batch * m, n, k)))
}

fn matmul_block(
    ad: &[f64],
    bd: &[f64],
    out: &mut [f64],
    (m, n, k): (usize, usize, usize),
    ta: bool,
    tb: bool,
) {
    match (ta, tb) {
        (false, false) => {
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = ad[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let brow = &bd[p * n..(p + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += aip * bv;
                    }
                }
            }
        }
        (false, true) => {
            for i in 0..m {
                let arow = &ad[i * k..(i + 1) * k];
                for j in 0..n {
                    let brow = &bd[j * k..(j + 1) * k];
                    out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
                }
            }
        }
        (true, false) => {
            for p in 0..k {
                let brow = &bd[p * n..(p + 1) * n];
                for i in 0..m {
                    let api = ad[p * m + i];
                    if api == 0.0 {
                        continue;
                    }
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += api * bv;
                    }
                }
            }
        }
        (true, true) => {
            for i in 0..m {
                for j in 0..n {
                    let mut s = 0.0;
                    for p in 0..k {
                        s += ad[p * m + i] * bd[j * k + p];
                    }
                    out[i * n + j] = s;
                }
            }
        }
    }
}

/// Reorder axes: output axis `i` is input axis `perm[i]`.
pub fn permute(a: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let rank = a.rank();
    let mut seen = vec![false; rank];
    if perm.len() != rank
        || perm
            .iter()
            .any(|&p| p >= rank || std::mem::replace(&mut seen[p], true))
    {
        return Err(Error::Dimension {
            op: "permute",
            lhs: a.shape().to_vec(),
            rhs: perm.to_vec(),
        });
    }
    let in_shape = a.shape();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = a.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let ad = a.data();
    for _ in 0..n {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(ad[off]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::new(out_shape, out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (r, c) = a.dims2()?;
    let ad = a.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = ad[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out)
}

pub fn gather_rows(a: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let (r, c) = a.dims2()?;
    let ad = a.data();
    let mut out = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        if i >= r {
            return Err(Error::Domain(format!(
                "row index {i} out of range for {r} rows"
            )));
        }
        out.extend_from_slice(&ad[i * c..(i + 1) * c]);
    }
    Tensor::new(vec![idx.len(), c], out)
}

pub fn scatter_add_rows(a: &Tensor, idx: &[usize], rows: usize) -> Result<Tensor> {
    let (r, c) = a.dims2()?;
    if r != idx.len() {
        return Err(Error::Dimension {
            op: "scatter_add",
            lhs: a.shape().to_vec(),
            rhs: vec![idx.len()],
        });
    }
    let ad = a.data();
    let mut out = vec![0.0; rows * c];
    for (src, &i) in idx.iter().enumerate() {
        if i >= rows {
            return Err(Error::Domain(format!(
                "row index {i} out of range for {rows} rows"
            )));
        }
        let dst = &mut out[i * c..(i + 1) * c];
        for (d, &x) in dst.iter_mut().zip(&ad[src * c..(src + 1) * c]) {
            *d += x;
        }
    }
    Tensor::new(vec![rows, c], out)
}

pub fn slice2(a: &Tensor, r0: usize, nr: usize, c0: usize, nc: usize) -> Result<Tensor> {
    let (r, c) = a.dims2()?;
    if r0 + nr > r || c0 + nc > c {
        return Err(Error::Dimension {
            op: "slice",
            lhs: a.shape().to_vec(),
            rhs: vec![r0 + nr, c0 + nc],
        });
    }
    let ad = a.data();
    let mut out = Vec::with_capacity(nr * nc);
    for i in r0..r0 + nr {
        out.extend_from_slice(&ad[i * c + c0..i * c + c0 + nc]);
    }
    Tensor::new(vec![nr, nc], out)
}

pub fn pad2(a: &Tensor, rows: usize, cols: usize, r0: usize, c0: usize) -> Result<Tensor> {
    let (r, c) = a.dims2()?;
    if r0 + r > rows || c0 + c > cols {
        return Err(Error::Dimension {
            op: "pad",
            lhs: a.shape().to_vec(),
            rhs: vec![rows, cols],
        });
    }
    let ad = a.data();
    let mut out = vec![0.0; rows * cols];
    for i in 0..r {
        out[(r0 + i) * cols + c0..(r0 + i) * cols + c0 + c]
            .copy_from_slice(&ad[i * c..(i + 1) * c]);
    }
    Tensor::new(vec![rows, cols], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shapes(&[4, 3], &[3]), Some(vec![4, 3]));
        assert_eq!(broadcast_shapes(&[4, 1], &[1, 5]), Some(vec![4, 5]));
        assert_eq!(broadcast_shapes(&[], &[2, 2]), Some(vec![2, 2]));
        assert_eq!(broadcast_shapes(&[4, 3], &[4]), None);
    }

    #[test]
    fn sum_to_inverts_expand_shape() {
        let a = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let e = expand(&a, &[2, 3]).unwrap();
        assert_eq!(e.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let s = sum_to(&e, &[1, 3]).unwrap();
        assert_eq!(s.data(), &[2.0, 4.0, 6.0]);
        let col = sum_to(&e, &[2, 1]).unwrap();
        assert_eq!(col.data(), &[6.0, 6.0]);
    }

    #[test]
    fn matmul_transposes_agree() {
        let a = Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::new(vec![3, 2], vec![7., 8., 9., 10., 11., 12.]).unwrap();
        let (c, _) = matmul(&a, &b, false, false).unwrap();
        let at = transpose(&a).unwrap();
        let bt = transpose(&b).unwrap();
        assert_eq!(matmul(&at, &b, true, false).unwrap().0, c);
        assert_eq!(matmul(&a, &bt, false, true).unwrap().0, c);
        assert_eq!(matmul(&at, &bt, true, true).unwrap().0, c);
        assert_eq!(c.data(), &[58., 64., 139., 154.]);
    }

    #[test]
    fn batched_matmul_matches_per_batch() {
        let a = Tensor::new(vec![2, 1, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::new(vec![2, 2, 1], vec![5., 6., 7., 8.]).unwrap();
        let (c, (m, n, k)) = matmul(&a, &b, false, false).unwrap();
        assert_eq!(c.shape(), &[2, 1, 1]);
        assert_eq!(c.data(), &[17., 53.]);
        assert_eq!((m, n, k), (2, 1, 2));
    }

    #[test]
    fn permute_swaps_axes() {
        let a = Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(permute(&a, &[1, 0]).unwrap(), transpose(&a).unwrap());
        let b = Tensor::new(vec![2, 2, 2], (0..8).map(f64::from).collect()).unwrap();
        let p = permute(&b, &[2, 0, 1]).unwrap();
        assert_eq!(p.data(), &[0., 2., 4., 6., 1., 3., 5., 7.]);
        assert!(permute(&b, &[0, 0, 1]).is_err());
    }
}
