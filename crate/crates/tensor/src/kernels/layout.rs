//! Permutation, concatenation, axis reductions and batched matrix products.

use crate::scalar::{gemm, Scalar};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub fn permuted_shape(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    perm.iter().map(|&p| shape[p]).collect()
}

pub fn is_permutation(perm: &[usize], rank: usize) -> bool {
    let mut seen = vec![false; rank];
    perm.len() == rank && perm.iter().all(|&p| p < rank && !std::mem::replace(&mut seen[p], true))
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// `out[i_0..i_r] = x[i_perm^-1...]`, i.e. output axis `j` is input axis `perm[j]`.
pub fn permute<T: Scalar>(x: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let out_shape = permuted_shape(shape, perm);
    let in_strides = strides(shape);
    let src: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(x.len());
    let rank = shape.len();
    if rank == 0 {
        return x.to_vec();
    }
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..x.len() {
        out.push(x[off]);
        let mut d = rank;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            off += src[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= src[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

/// Split a shape around `axis` into (outer, axis extent, inner) element counts.
pub fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn concat<T: Scalar>(parts: &[(&[T], &[usize])], axis: usize) -> Vec<T> {
    let (outer, _, inner) = split_axis(parts[0].1, axis);
    let total: usize = parts.iter().map(|(d, _)| d.len()).sum();
    let mut out = Vec::with_capacity(total);
    for o in 0..outer {
        for (data, shape) in parts {
            let chunk = shape[axis] * inner;
            out.extend_from_slice(&data[o * chunk..(o + 1) * chunk]);
        }
    }
    out
}

/// Inverse of [`concat`]: slice a gradient back into per-part buffers.
pub fn split<T: Scalar>(dy: &[T], shapes: &[&[usize]], axis: usize) -> Vec<Vec<T>> {
    let (outer, _, inner) = split_axis(shapes[0], axis);
    let mut outs: Vec<Vec<T>> = shapes.iter().map(|s| Vec::with_capacity(s.iter().product())).collect();
    let mut off = 0;
    for _ in 0..outer {
        for (out, shape) in outs.iter_mut().zip(shapes) {
            let chunk = shape[axis] * inner;
            out.extend_from_slice(&dy[off..off + chunk]);
            off += chunk;
        }
    }
    outs
}

pub fn sum_axis<T: Scalar>(x: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, n, inner) = split_axis(shape, axis);
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for a in 0..n {
            let src = &x[(o * n + a) * inner..][..inner];
            for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    out
}

/// Max along `axis` plus the winning flat input index; ties go to the first index.
pub fn max_axis<T: Scalar>(x: &[T], shape: &[usize], axis: usize) -> (Vec<T>, Vec<usize>) {
    let (outer, n, inner) = split_axis(shape, axis);
    let mut out = vec![T::neg_infinity(); outer * inner];
    let mut arg = vec![0usize; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let slot = o * inner + i;
            for a in 0..n {
                let src = (o * n + a) * inner + i;
                if a == 0 || x[src] > out[slot] {
                    out[slot] = x[src];
                    arg[slot] = src;
                }
            }
        }
    }
    (out, arg)
}

/// Broadcast a reduced buffer back over `axis` (the reduction's adjoint).
pub fn expand_axis<T: Scalar>(g: &[T], shape: &[usize], axis: usize, scale: T) -> Vec<T> {
    let (outer, n, inner) = split_axis(shape, axis);
    let mut out = Vec::with_capacity(outer * n * inner);
    for o in 0..outer {
        for _ in 0..n {
            out.extend(g[o * inner..(o + 1) * inner].iter().map(|&v| v * scale));
        }
    }
    out
}

/// Matrix product over trailing two axes. `b` either shares `a`'s batch
/// prefix or is a plain 2-D matrix applied to every batch entry.
#[derive(Clone, Copy, Debug)]
pub struct MatmulGeom {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub shared_rhs: bool,
}

impl MatmulGeom {
    pub fn new(a: &[usize], b: &[usize]) -> Option<(Self, Vec<usize>)> {
        if a.len() < 2 || b.len() < 2 {
            return None;
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (kb, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != kb {
            return None;
        }
        let prefix = &a[..a.len() - 2];
        let shared_rhs = b.len() == 2;
        if !shared_rhs && &b[..b.len() - 2] != prefix {
            return None;
        }
        let mut out = prefix.to_vec();
        out.extend([m, n]);
        Some((Self { batch: prefix.iter().product(), m, k, n, shared_rhs }, out))
    }
}

pub fn matmul<T: Scalar>(a: &[T], b: &[T], g: &MatmulGeom) -> Vec<T> {
    let MatmulGeom { batch, m, k, n, shared_rhs } = *g;
    let mut out = vec![T::zero(); batch * m * n];
    if shared_rhs {
        gemm(batch * m, k, n, a, false, b, false, T::zero(), &mut out);
    } else {
        for i in 0..batch {
            gemm(m, k, n, &a[i * m * k..], false, &b[i * k * n..], false, T::zero(), &mut out[i * m * n..]);
        }
    }
    out
}

pub fn matmul_backward<T: Scalar>(
    a: &[T],
    b: &[T],
    dy: &[T],
    g: &MatmulGeom,
    need: (bool, bool),
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let MatmulGeom { batch, m, k, n, shared_rhs } = *g;
    let da = need.0.then(|| {
        let mut da = vec![T::zero(); batch * m * k];
        if shared_rhs {
            gemm(batch * m, n, k, dy, false, b, true, T::zero(), &mut da);
        } else {
            for i in 0..batch {
                gemm(m, n, k, &dy[i * m * n..], false, &b[i * k * n..], true, T::zero(), &mut da[i * m * k..]);
            }
        }
        da
    });
    let db = need.1.then(|| {
        if shared_rhs {
            let mut db = vec![T::zero(); k * n];
            gemm(k, batch * m, n, a, true, dy, false, T::zero(), &mut db);
            db
        } else {
            let mut db = vec![T::zero(); batch * k * n];
            for i in 0..batch {
                gemm(k, m, n, &a[i * m * k..], true, &dy[i * m * n..], false, T::zero(), &mut db[i * k * n..]);
            }
            db
        }
    });
    (da, db)
}
