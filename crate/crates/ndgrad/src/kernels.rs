//! Raw loops over row-major slices. No shape checking happens here; the
//! callers in `ops` validate shapes first.

use crate::float::Float;

/// `c[m,n] += a[m,k] · b[k,n]`
pub(crate) fn gemm_nn<T: Float>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * *bv;
            }
        }
    }
}

/// `c[m,k] += a[m,n] · b[k,n]ᵀ`
pub(crate) fn gemm_nt<T: Float>(a: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (x, y) in a_row.iter().zip(b_row) {
                acc += *x * *y;
            }
            c[i * k + p] += acc;
        }
    }
}

/// `c[k,n] += a[m,k]ᵀ · b[m,n]`
pub(crate) fn gemm_tn<T: Float>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * *bv;
            }
        }
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Gathers `src` (with shape `shape`) into a new buffer laid out as the
/// permuted shape `shape[axes[0]], shape[axes[1]], ...`.
pub(crate) fn permute<T: Float>(src: &[T], shape: &[usize], axes: &[usize]) -> Vec<T> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let moved: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let rank = shape.len();
    let mut out = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; rank];
    for _ in 0..src.len() {
        let off: usize = idx.iter().zip(&moved).map(|(i, s)| i * s).sum();
        out.push(src[off]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

/// Inverse of an axis permutation.
pub(crate) fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Shape of a 1-D convolution over `[batch, len, c_in]` with kernel
/// `[width, c_in, c_out]` and symmetric zero padding.
pub(crate) struct ConvDims {
    pub batch: usize,
    pub len: usize,
    pub c_in: usize,
    pub width: usize,
    pub c_out: usize,
    pub pad: usize,
    pub out_len: usize,
}

pub(crate) fn conv1d_forward<T: Float>(x: &[T], w: &[T], d: &ConvDims) -> Vec<T> {
    let mut out = vec![T::zero(); d.batch * d.out_len * d.c_out];
    for b in 0..d.batch {
        for t in 0..d.out_len {
            let o = &mut out[(b * d.out_len + t) * d.c_out..(b * d.out_len + t + 1) * d.c_out];
            for k in 0..d.width {
                let pos = t + k;
                if pos < d.pad || pos - d.pad >= d.len {
                    continue;
                }
                let xi = &x[(b * d.len + pos - d.pad) * d.c_in..(b * d.len + pos - d.pad + 1) * d.c_in];
                let wk = &w[k * d.c_in * d.c_out..(k + 1) * d.c_in * d.c_out];
                gemm_nn(xi, wk, o, 1, d.c_in, d.c_out);
            }
        }
    }
    out
}

/// Returns `(dx, dw)` for the convolution above.
pub(crate) fn conv1d_backward<T: Float>(
    x: &[T],
    w: &[T],
    dy: &[T],
    d: &ConvDims,
) -> (Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); w.len()];
    for b in 0..d.batch {
        for t in 0..d.out_len {
            let g = &dy[(b * d.out_len + t) * d.c_out..(b * d.out_len + t + 1) * d.c_out];
            for k in 0..d.width {
                let pos = t + k;
                if pos < d.pad || pos - d.pad >= d.len {
                    continue;
                }
                let row = (b * d.len + pos - d.pad) * d.c_in;
                let wk = &w[k * d.c_in * d.c_out..(k + 1) * d.c_in * d.c_out];
                gemm_nt(g, wk, &mut dx[row..row + d.c_in], 1, d.c_out, d.c_in);
                let dwk = &mut dw[k * d.c_in * d.c_out..(k + 1) * d.c_in * d.c_out];
                gemm_tn(&x[row..row + d.c_in], g, dwk, 1, d.c_in, d.c_out);
            }
        }
    }
    (dx, dw)
}

/// Output length of the stride/window pooling used by `max_pool1d`.
pub(crate) fn pool_len(len: usize, window: usize, stride: usize) -> usize {
    if len <= window {
        1
    } else {
        (len - window).div_ceil(stride) + 1
    }
}
