//! Forward kernels and their analytic backward passes.
//!
//! Every kernel takes row-major matrices and returns a freshly allocated
//! result. Backward functions receive the upstream gradient of the output and
//! return gradients for each differentiable input.

use super::tensor::{round_out, Mask, Tensor};
use crate::error::{Error, Result};

/// Logit assigned to masked entries before exponentiation.
pub const MASK_SENTINEL: f64 = -1e30;

fn check_2d(op: &'static str, t: &Tensor) -> Result<()> {
    if t.shape().len() != 2 {
        return Err(Error::dim(op, format!("expected a matrix, got shape {:?}", t.shape())));
    }
    Ok(())
}

/// `C = A · op(B)` where `op` optionally transposes. `A` is `m×k`.
pub(crate) fn gemm(a: &Tensor, b: &Tensor, transpose_b: bool) -> Result<Tensor> {
    check_2d("matmul", a)?;
    check_2d("matmul", b)?;
    let (m, k) = (a.rows(), a.cols());
    let (kb, n, rsb, csb) = if transpose_b {
        (b.cols(), b.rows(), 1isize, b.cols() as isize)
    } else {
        (b.rows(), b.cols(), b.cols() as isize, 1isize)
    };
    if k != kb {
        return Err(Error::dim(
            "matmul",
            format!("inner dims {:?} x {:?} (transpose_b={transpose_b})", a.shape(), b.shape()),
        ));
    }
    let mut out = vec![0.0; m * n];
    if m > 0 && n > 0 && k > 0 {
        // SAFETY: strides describe the exact extents of the three buffers.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data().as_ptr(),
                k as isize,
                1,
                b.data().as_ptr(),
                rsb,
                csb,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    Tensor::matrix(m, n, out)
}

/// `Aᵀ · B` without materializing the transpose.
fn gemm_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m) = (a.rows(), a.cols());
    let n = b.cols();
    let mut out = vec![0.0; m * n];
    if m > 0 && n > 0 && k > 0 {
        // SAFETY: `a` is read column-major as an m×k view of its k×m buffer.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data().as_ptr(),
                1,
                m as isize,
                b.data().as_ptr(),
                n as isize,
                1,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    Tensor::matrix(m, n, out).expect("gemm_tn shape")
}

pub(crate) fn matmul_forward(a: &Tensor, b: &Tensor, transpose_b: bool) -> Result<Tensor> {
    Ok(round_out(gemm(a, b, transpose_b)?))
}

pub(crate) fn matmul_backward(
    a: &Tensor,
    b: &Tensor,
    transpose_b: bool,
    dy: &Tensor,
) -> (Tensor, Tensor) {
    if transpose_b {
        // y = a bᵀ: da = dy b, db = dyᵀ a
        (gemm(dy, b, false).unwrap(), gemm_tn(dy, a))
    } else {
        // y = a b: da = dy bᵀ, db = aᵀ dy
        (gemm(dy, b, true).unwrap(), gemm_tn(a, dy))
    }
}

/// `y = x Wᵀ + b` row-wise.
pub fn linear_kernel(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    check_2d("linear", x)?;
    check_2d("linear", w)?;
    if x.cols() != w.cols() {
        return Err(Error::dim(
            "linear",
            format!("input width {} vs weight {:?}", x.cols(), w.shape()),
        ));
    }
    let mut y = gemm(x, w, true)?;
    if let Some(b) = b {
        if b.len() != w.rows() {
            return Err(Error::dim("linear", format!("bias {} vs out {}", b.len(), w.rows())));
        }
        let out = w.rows();
        for r in 0..y.rows() {
            for (v, bb) in y.row_mut(r).iter_mut().zip(b.data()) {
                *v += bb;
            }
        }
        debug_assert_eq!(y.cols(), out);
    }
    Ok(round_out(y))
}

pub(crate) fn linear_backward(
    x: &Tensor,
    w: &Tensor,
    with_bias: bool,
    dy: &Tensor,
) -> (Tensor, Tensor, Option<Tensor>) {
    let dx = gemm(dy, w, false).unwrap();
    let dw = gemm_tn(dy, x);
    let db = with_bias.then(|| {
        let mut db = vec![0.0; dy.cols()];
        for r in 0..dy.rows() {
            for (acc, v) in db.iter_mut().zip(dy.row(r)) {
                *acc += v;
            }
        }
        Tensor::vector(db)
    });
    (dx, dw, db)
}

/// Row-wise softmax over kept entries. Masked entries are exactly zero and a
/// fully masked row is all zeros.
pub fn masked_softmax_kernel(logits: &Tensor, mask: &Mask) -> Result<Tensor> {
    check_2d("masked_softmax", logits)?;
    if mask.rows() != logits.rows() || mask.cols() != logits.cols() {
        return Err(Error::dim(
            "masked_softmax",
            format!("mask {}x{} vs logits {:?}", mask.rows(), mask.cols(), logits.shape()),
        ));
    }
    let cols = logits.cols();
    let mut out = vec![0.0; logits.len()];
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let keep = mask.row(r);
        let max = row
            .iter()
            .zip(keep)
            .map(|(&v, &k)| if k { v } else { MASK_SENTINEL })
            .fold(f64::NEG_INFINITY, f64::max);
        if !keep.iter().any(|k| *k) {
            continue;
        }
        let o = &mut out[r * cols..(r + 1) * cols];
        let mut sum = 0.0;
        for j in 0..cols {
            let l = if keep[j] { row[j] } else { MASK_SENTINEL };
            let e = (l - max).exp();
            o[j] = e;
            sum += e;
        }
        for j in 0..cols {
            o[j] = if keep[j] { o[j] / sum } else { 0.0 };
        }
    }
    Ok(round_out(Tensor::matrix(logits.rows(), cols, out)?))
}

pub(crate) fn masked_softmax_backward(y: &Tensor, mask: &Mask, dy: &Tensor) -> Tensor {
    let cols = y.cols();
    let mut dx = vec![0.0; y.len()];
    for r in 0..y.rows() {
        let yr = y.row(r);
        let dyr = dy.row(r);
        let dot: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
        for j in 0..cols {
            if mask.get(r, j) {
                dx[r * cols + j] = yr[j] * (dyr[j] - dot);
            }
        }
    }
    Tensor::matrix(y.rows(), cols, dx).unwrap()
}

/// Per-row normalization statistics kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct LayerNormCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, LayerNormCache)> {
    check_2d("layer_norm", x)?;
    let d = x.cols();
    if d == 0 || gamma.len() != d || beta.len() != d {
        return Err(Error::dim(
            "layer_norm",
            format!("width {d}, gamma {}, beta {}", gamma.len(), beta.len()),
        ));
    }
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        for j in 0..d {
            let h = (row[j] - mean) * is;
            xhat[r * d + j] = h;
            y[r * d + j] = h * gamma.data()[j] + beta.data()[j];
        }
    }
    let xhat = Tensor::matrix(x.rows(), d, xhat)?;
    Ok((round_out(Tensor::matrix(x.rows(), d, y)?), LayerNormCache { xhat, inv_std }))
}

pub fn layer_norm_kernel(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    layer_norm_forward(x, gamma, beta, eps).map(|(y, _)| y)
}

pub(crate) fn layer_norm_backward(
    cache: &LayerNormCache,
    gamma: &Tensor,
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (n, d) = (dy.rows(), dy.cols());
    let mut dx = vec![0.0; n * d];
    let mut dg = vec![0.0; d];
    let mut db = vec![0.0; d];
    let g = gamma.data();
    for r in 0..n {
        let h = cache.xhat.row(r);
        let dyr = dy.row(r);
        let mut sum_dh = 0.0;
        let mut sum_dh_h = 0.0;
        for j in 0..d {
            dg[j] += dyr[j] * h[j];
            db[j] += dyr[j];
            let dh = dyr[j] * g[j];
            sum_dh += dh;
            sum_dh_h += dh * h[j];
        }
        let is = cache.inv_std[r];
        for j in 0..d {
            let dh = dyr[j] * g[j];
            dx[r * d + j] = is * (dh - sum_dh / d as f64 - h[j] * sum_dh_h / d as f64);
        }
    }
    (
        Tensor::matrix(n, d, dx).unwrap(),
        Tensor::vector(dg),
        Tensor::vector(db),
    )
}

pub(crate) fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else if v < -30.0 {
        v.exp()
    } else {
        v.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub(crate) fn gather_rows_forward(x: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let c = x.cols();
    let mut out = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        if i >= x.rows() {
            return Err(Error::dim("gather_rows", format!("index {i} >= {} rows", x.rows())));
        }
        out.extend_from_slice(x.row(i));
    }
    Tensor::matrix(idx.len(), c, out)
}

pub(crate) fn scatter_rows(dy: &Tensor, idx: &[usize], rows: usize) -> Tensor {
    let c = dy.cols();
    let mut dx = Tensor::zeros(&[rows, c]);
    for (r, &i) in idx.iter().enumerate() {
        for (a, b) in dx.row_mut(i).iter_mut().zip(dy.row(r)) {
            *a += b;
        }
    }
    dx
}

/// Column-wise max over contiguous row segments `offsets[g]..offsets[g+1]`.
/// Returns the pooled matrix and, per output element, the winning input row.
pub(crate) fn segment_max_forward(x: &Tensor, offsets: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let c = x.cols();
    let groups = offsets.len().saturating_sub(1);
    if offsets.last().copied().unwrap_or(0) != x.rows() {
        return Err(Error::dim("segment_max", "offsets do not cover all rows"));
    }
    let mut out = vec![0.0; groups * c];
    let mut arg = vec![0usize; groups * c];
    for g in 0..groups {
        let (s, e) = (offsets[g], offsets[g + 1]);
        if e <= s {
            return Err(Error::dim("segment_max", format!("empty segment {g}")));
        }
        for j in 0..c {
            let mut best = s;
            let mut bv = x.at(s, j);
            for r in s + 1..e {
                let v = x.at(r, j);
                if v > bv {
                    bv = v;
                    best = r;
                }
            }
            out[g * c + j] = bv;
            arg[g * c + j] = best;
        }
    }
    Ok((Tensor::matrix(groups, c, out)?, arg))
}

pub(crate) fn segment_max_backward(dy: &Tensor, arg: &[usize], rows: usize) -> Tensor {
    let c = dy.cols();
    let mut dx = Tensor::zeros(&[rows, c]);
    for (k, &src) in arg.iter().enumerate() {
        let j = k % c;
        dx.data_mut()[src * c + j] += dy.data()[k];
    }
    dx
}

pub(crate) fn concat_cols_forward(parts: &[&Tensor]) -> Result<Tensor> {
    let rows = parts.first().map_or(0, |p| p.rows());
    if parts.iter().any(|p| p.rows() != rows) {
        return Err(Error::dim("concat_cols", "row counts differ"));
    }
    let width: usize = parts.iter().map(|p| p.cols()).sum();
    let mut out = Vec::with_capacity(rows * width);
    for r in 0..rows {
        for p in parts {
            out.extend_from_slice(p.row(r));
        }
    }
    Tensor::matrix(rows, width, out)
}

pub(crate) fn concat_rows_forward(parts: &[&Tensor]) -> Result<Tensor> {
    let cols = parts.first().map_or(0, |p| p.cols());
    if parts.iter().any(|p| p.cols() != cols) {
        return Err(Error::dim("concat_rows", "column counts differ"));
    }
    let rows: usize = parts.iter().map(|p| p.rows()).sum();
    let mut out = Vec::with_capacity(rows * cols);
    for p in parts {
        out.extend_from_slice(p.data());
    }
    Tensor::matrix(rows, cols, out)
}

pub(crate) fn slice_cols_forward(x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    if start > end || end > x.cols() {
        return Err(Error::dim("slice_cols", format!("{start}..{end} of {}", x.cols())));
    }
    let mut out = Vec::with_capacity(x.rows() * (end - start));
    for r in 0..x.rows() {
        out.extend_from_slice(&x.row(r)[start..end]);
    }
    Tensor::matrix(x.rows(), end - start, out)
}

/// Cross entropy summed over rows with per-row weights. Returns the loss and
/// the row softmax probabilities.
pub(crate) fn cross_entropy_forward(
    logits: &Tensor,
    targets: &[usize],
    weights: &[f64],
) -> Result<(f64, Tensor)> {
    if targets.len() != logits.rows() || weights.len() != logits.rows() {
        return Err(Error::dim("cross_entropy", "targets/weights must match rows"));
    }
    let c = logits.cols();
    let mut probs = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for r in 0..logits.rows() {
        let row = logits.row(r);
        if targets[r] >= c {
            return Err(Error::dim("cross_entropy", format!("target {} >= {c}", targets[r])));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        for j in 0..c {
            probs[r * c + j] = (row[j] - lse).exp();
        }
        loss += weights[r] * (lse - row[targets[r]]);
    }
    Ok((loss, Tensor::matrix(logits.rows(), c, probs)?))
}

pub(crate) fn cross_entropy_backward(
    probs: &Tensor,
    targets: &[usize],
    weights: &[f64],
    dloss: f64,
) -> Tensor {
    let c = probs.cols();
    let mut dx = probs.data().to_vec();
    for r in 0..probs.rows() {
        dx[r * c + targets[r]] -= 1.0;
        for v in &mut dx[r * c..(r + 1) * c] {
            *v *= weights[r] * dloss;
        }
    }
    Tensor::matrix(probs.rows(), c, dx).unwrap()
}
