//! Forward and backward kernels for the fixed layer set of the classifier.
//!
//! Activations are flat row-major buffers of shape `[batch, channels, len]`
//! (or `[batch, features]` after pooling). Work is split over the batch in
//! fixed-size chunks and partial weight gradients are summed in chunk order,
//! so results are bit-identical for any thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Examples per parallel work unit.
const CHUNK: usize = 8;

/// `c = a * b + beta * c` for strided row/column-major views.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len(), "gemm: lhs out of bounds");
        assert!(last(k, n, rsb, csb) < b.len(), "gemm: rhs out of bounds");
    }
    assert!(last(m, n, rsc, csc) < c.len(), "gemm: output out of bounds");
    // SAFETY: every element addressed by the strides was bounds-checked above,
    // and `c` is a unique borrow that cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Geometry of a stride-1, length-preserving 1-D convolution.
///
/// Zero padding totals `kernel - 1`; for even kernels the extra sample goes on
/// the right.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvDims {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub len: usize,
}

impl ConvDims {
    pub fn pad_left(&self) -> usize {
        (self.kernel - 1) / 2
    }

    fn cols(&self) -> usize {
        self.cin * self.kernel
    }

    /// Valid output range `[lo, hi)` for kernel tap `t`, and its input shift.
    fn tap_range(&self, t: usize) -> (usize, usize, isize) {
        let shift = t as isize - self.pad_left() as isize;
        let lo = (-shift).max(0) as usize;
        let hi = (self.len as isize - shift).clamp(0, self.len as isize) as usize;
        (lo, hi.max(lo), shift)
    }
}

fn im2col(x: &[f64], d: ConvDims, col: &mut [f64]) {
    let len = d.len;
    for i in 0..d.cin {
        let src = &x[i * len..(i + 1) * len];
        for t in 0..d.kernel {
            let row = &mut col[(i * d.kernel + t) * len..][..len];
            let (lo, hi, shift) = d.tap_range(t);
            row[..lo].fill(0.0);
            row[hi..].fill(0.0);
            let from = (lo as isize + shift) as usize;
            row[lo..hi].copy_from_slice(&src[from..from + (hi - lo)]);
        }
    }
}

fn col2im_add(dcol: &[f64], d: ConvDims, dx: &mut [f64]) {
    let len = d.len;
    for i in 0..d.cin {
        let dst = &mut dx[i * len..(i + 1) * len];
        for t in 0..d.kernel {
            let row = &dcol[(i * d.kernel + t) * len..][..len];
            let (lo, hi, shift) = d.tap_range(t);
            let from = (lo as isize + shift) as usize;
            for (o, v) in dst[from..from + (hi - lo)].iter_mut().zip(&row[lo..hi]) {
                *o += v;
            }
        }
    }
}

/// `y[b, o, p] = sum_{i,t} w[o, i, t] * x[b, i, p + t - pad_left]`.
pub fn conv_forward(x: &[f64], batch: usize, d: ConvDims, w: &[f64]) -> Vec<f64> {
    let (xin, yout) = (d.cin * d.len, d.cout * d.len);
    assert_eq!(x.len(), batch * xin);
    assert_eq!(w.len(), d.cout * d.cols());
    let mut y = vec![0.0; batch * yout];
    y.par_chunks_mut(yout)
        .zip(x.par_chunks(xin))
        .for_each_init(
            || vec![0.0; d.cols() * d.len],
            |col, (yb, xb)| {
                im2col(xb, d, col);
                gemm(d.cout, d.cols(), d.len, w, (d.cols(), 1), col, (d.len, 1), 0.0, yb, (d.len, 1));
            },
        );
    y
}

/// Returns `(dx, dw)`; `dx` is empty when `need_dx` is false.
pub fn conv_backward(
    x: &[f64],
    batch: usize,
    d: ConvDims,
    w: &[f64],
    dy: &[f64],
    need_dx: bool,
) -> (Vec<f64>, Vec<f64>) {
    let (xin, yout, cols) = (d.cin * d.len, d.cout * d.len, d.cols());
    assert_eq!(dy.len(), batch * yout);
    let mut dx = vec![0.0; if need_dx { batch * xin } else { 0 }];
    let chunk_grad = |first: usize, dx_chunk: Option<&mut [f64]>| {
        let count = CHUNK.min(batch - first);
        let mut dw = vec![0.0; d.cout * cols];
        let mut col = vec![0.0; cols * d.len];
        let mut dcol = vec![0.0; cols * d.len];
        let mut dx_chunk = dx_chunk;
        for j in 0..count {
            let b = first + j;
            let xb = &x[b * xin..(b + 1) * xin];
            let dyb = &dy[b * yout..(b + 1) * yout];
            im2col(xb, d, &mut col);
            // dw += dy_b * col^T
            gemm(d.cout, d.len, cols, dyb, (d.len, 1), &col, (1, d.len), 1.0, &mut dw, (cols, 1));
            if let Some(dxc) = dx_chunk.as_deref_mut() {
                // dcol = w^T * dy_b
                gemm(cols, d.cout, d.len, w, (1, cols), dyb, (d.len, 1), 0.0, &mut dcol, (d.len, 1));
                col2im_add(&dcol, d, &mut dxc[j * xin..(j + 1) * xin]);
            }
        }
        dw
    };
    let parts: Vec<Vec<f64>> = if need_dx {
        dx.par_chunks_mut(CHUNK * xin)
            .enumerate()
            .map(|(c, dxc)| chunk_grad(c * CHUNK, Some(dxc)))
            .collect()
    } else {
        (0..batch.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| chunk_grad(c * CHUNK, None))
            .collect()
    };
    (dx, sum_in_order(parts))
}

fn sum_in_order(parts: Vec<Vec<f64>>) -> Vec<f64> {
    let mut it = parts.into_iter();
    let mut acc = it.next().unwrap_or_default();
    for p in it {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc
}

/// Saved state of a training-mode batch-norm forward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

/// Per-channel batch statistics: mean and unbiased variance.
#[derive(Debug, Clone, PartialEq)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    pub var_unbiased: Vec<f64>,
}

/// Batch norm over `(batch, len)` for each channel, using batch statistics.
pub fn bn_forward_train(
    x: &[f64],
    batch: usize,
    ch: usize,
    len: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Vec<f64>, BnCache, BnBatchStats) {
    let m = (batch * len) as f64;
    let mut mean = vec![0.0; ch];
    let mut var = vec![0.0; ch];
    for (c, mu) in mean.iter_mut().enumerate() {
        let s: f64 = (0..batch).map(|b| x[(b * ch + c) * len..][..len].iter().sum::<f64>()).sum();
        *mu = s / m;
    }
    for (c, v) in var.iter_mut().enumerate() {
        let mu = mean[c];
        let s: f64 = (0..batch)
            .map(|b| x[(b * ch + c) * len..][..len].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>())
            .sum();
        *v = s / m;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..ch {
            let off = (b * ch + c) * len;
            for p in off..off + len {
                xhat[p] = (x[p] - mean[c]) * inv_std[c];
                y[p] = gamma[c] * xhat[p] + beta[c];
            }
        }
    }
    let correction = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
    let stats = BnBatchStats {
        mean,
        var_unbiased: var.iter().map(|v| v * correction).collect(),
    };
    (y, BnCache { xhat, inv_std }, stats)
}

#[allow(clippy::too_many_arguments)]
pub fn bn_forward_eval(
    x: &[f64],
    batch: usize,
    ch: usize,
    len: usize,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Vec<f64> {
    let scale: Vec<f64> = (0..ch).map(|c| gamma[c] / (running_var[c] + eps).sqrt()).collect();
    let mut y = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..ch {
            let off = (b * ch + c) * len;
            for p in off..off + len {
                y[p] = (x[p] - running_mean[c]) * scale[c] + beta[c];
            }
        }
    }
    y
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn bn_backward(
    dy: &[f64],
    cache: &BnCache,
    batch: usize,
    ch: usize,
    len: usize,
    gamma: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = (batch * len) as f64;
    let mut dgamma = vec![0.0; ch];
    let mut dbeta = vec![0.0; ch];
    for b in 0..batch {
        for c in 0..ch {
            let off = (b * ch + c) * len;
            for p in off..off + len {
                dgamma[c] += dy[p] * cache.xhat[p];
                dbeta[c] += dy[p];
            }
        }
    }
    // With dxhat = gamma * dy:
    // dx = inv_std / m * (m * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat)).
    let mut dx = vec![0.0; dy.len()];
    for b in 0..batch {
        for c in 0..ch {
            let off = (b * ch + c) * len;
            let k = gamma[c] * cache.inv_std[c] / m;
            for p in off..off + len {
                dx[p] = k * (m * dy[p] - dbeta[c] - cache.xhat[p] * dgamma[c]);
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn relu_in_place(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `dy` wherever the ReLU output `y` was not positive.
pub fn relu_backward_in_place(y: &[f64], dy: &mut [f64]) {
    for (d, &v) in dy.iter_mut().zip(y) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
}

/// Global average pooling over the temporal axis: `[B, C, L] -> [B, C]`.
pub fn gap_forward(x: &[f64], batch: usize, ch: usize, len: usize) -> Vec<f64> {
    (0..batch * ch)
        .map(|r| x[r * len..(r + 1) * len].iter().sum::<f64>() / len as f64)
        .collect()
}

pub fn gap_backward(dg: &[f64], batch: usize, ch: usize, len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; batch * ch * len];
    for (r, &g) in dg.iter().enumerate() {
        dx[r * len..(r + 1) * len].fill(g / len as f64);
    }
    dx
}

/// `y = x w^T + b` with `x: [B, in]`, `w: [out, in]`.
pub fn linear_forward(x: &[f64], batch: usize, w: &[f64], b: &[f64], fin: usize, fout: usize) -> Vec<f64> {
    let mut y = vec![0.0; batch * fout];
    for row in y.chunks_mut(fout) {
        row.copy_from_slice(b);
    }
    gemm(batch, fin, fout, x, (fin, 1), w, (1, fin), 1.0, &mut y, (fout, 1));
    y
}

/// Returns `(dx, dw, db)`.
pub fn linear_backward(
    x: &[f64],
    batch: usize,
    w: &[f64],
    dy: &[f64],
    fin: usize,
    fout: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; batch * fin];
    gemm(batch, fout, fin, dy, (fout, 1), w, (fin, 1), 0.0, &mut dx, (fin, 1));
    let mut dw = vec![0.0; fout * fin];
    gemm(fout, batch, fin, dy, (1, fout), x, (fin, 1), 0.0, &mut dw, (fin, 1));
    let mut db = vec![0.0; fout];
    for row in dy.chunks(fout) {
        for (a, v) in db.iter_mut().zip(row) {
            *a += v;
        }
    }
    (dx, dw, db)
}

/// Inverted-dropout multipliers: 0 with probability `p`, else `1 / (1 - p)`.
pub fn dropout_mask(len: usize, p: f64, seed: u64) -> Vec<f64> {
    if p <= 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

/// Row-wise softmax of `[B, classes]` logits.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for (row, o) in logits.chunks(classes).zip(out.chunks_mut(classes)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (v, e) in row.iter().zip(o.iter_mut()) {
            *e = (v - max).exp();
            sum += *e;
        }
        for e in o.iter_mut() {
            *e /= sum;
        }
    }
    out
}

/// Mean negative log-likelihood and its gradient with respect to the logits.
pub fn cross_entropy(logits: &[f64], classes: usize, labels: &[usize]) -> (f64, Vec<f64>) {
    let batch = labels.len();
    let probs = softmax_rows(logits, classes);
    let mut loss = 0.0;
    let mut grad = probs;
    for (b, &y) in labels.iter().enumerate() {
        let row = &logits[b * classes..(b + 1) * classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        grad[b * classes + y] -= 1.0;
    }
    for g in grad.iter_mut() {
        *g /= batch as f64;
    }
    (loss / batch as f64, grad)
}
