//! Raw forward/backward kernels over flat row-major buffers.
//!
//! Layouts: signals are `[batch, channels, length]`; conv weights are
//! `[c_out, c_in, k]`; transposed-conv weights are `[c_in, c_out, k]`.

/// `C = alpha * A B + beta * C` for strided `A` (m×k) and `B` (k×n), row-major `C`.
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
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(m * n <= c.len());
    // SAFETY: the asserts above keep every strided access inside the slices.
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
            n as isize,
            1,
        );
    }
}

/// Output length of a strided valid convolution.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize) -> usize {
    (len - kernel) / stride + 1
}

pub fn conv_transpose_out_len(len: usize, kernel: usize, stride: usize) -> usize {
    (len - 1) * stride + kernel
}

/// cols[(c*k_len + k) * out_len + t] = x[c, t*stride + k]
fn im2col(x: &[f64], channels: usize, len: usize, k_len: usize, stride: usize, out_len: usize, cols: &mut [f64]) {
    for c in 0..channels {
        let row = &x[c * len..(c + 1) * len];
        for k in 0..k_len {
            let dst = &mut cols[(c * k_len + k) * out_len..(c * k_len + k + 1) * out_len];
            if stride == 1 {
                dst.copy_from_slice(&row[k..k + out_len]);
            } else {
                for (t, d) in dst.iter_mut().enumerate() {
                    *d = row[t * stride + k];
                }
            }
        }
    }
}

/// Scatter-add inverse of [`im2col`].
fn col2im(cols: &[f64], channels: usize, len: usize, k_len: usize, stride: usize, out_len: usize, x: &mut [f64]) {
    for c in 0..channels {
        let row = &mut x[c * len..(c + 1) * len];
        for k in 0..k_len {
            let src = &cols[(c * k_len + k) * out_len..(c * k_len + k + 1) * out_len];
            for (t, s) in src.iter().enumerate() {
                row[t * stride + k] += s;
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub len_in: usize,
}

impl ConvDims {
    pub fn conv_len_out(&self) -> usize {
        conv_out_len(self.len_in, self.kernel, self.stride)
    }

    pub fn transpose_len_out(&self) -> usize {
        conv_transpose_out_len(self.len_in, self.kernel, self.stride)
    }
}

pub fn conv1d_forward(d: &ConvDims, x: &[f64], w: &[f64], bias: &[f64]) -> Vec<f64> {
    let lo = d.conv_len_out();
    let ck = d.c_in * d.kernel;
    let mut y = vec![0.0; d.batch * d.c_out * lo];
    let mut cols = vec![0.0; ck * lo];
    for b in 0..d.batch {
        let xb = &x[b * d.c_in * d.len_in..(b + 1) * d.c_in * d.len_in];
        im2col(xb, d.c_in, d.len_in, d.kernel, d.stride, lo, &mut cols);
        let yb = &mut y[b * d.c_out * lo..(b + 1) * d.c_out * lo];
        for (o, row) in yb.chunks_mut(lo).enumerate() {
            row.fill(bias[o]);
        }
        gemm(d.c_out, ck, lo, w, (ck, 1), &cols, (lo, 1), 1.0, yb);
    }
    y
}

/// Returns `(dx, dw, dbias)`.
pub fn conv1d_backward(d: &ConvDims, x: &[f64], w: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let lo = d.conv_len_out();
    let ck = d.c_in * d.kernel;
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; d.c_out];
    let mut cols = vec![0.0; ck * lo];
    let mut dcols = vec![0.0; ck * lo];
    for b in 0..d.batch {
        let xb = &x[b * d.c_in * d.len_in..(b + 1) * d.c_in * d.len_in];
        let dyb = &dy[b * d.c_out * lo..(b + 1) * d.c_out * lo];
        for (o, row) in dyb.chunks(lo).enumerate() {
            db[o] += row.iter().sum::<f64>();
        }
        im2col(xb, d.c_in, d.len_in, d.kernel, d.stride, lo, &mut cols);
        // dW += dY · colsᵀ
        gemm(d.c_out, lo, ck, dyb, (lo, 1), &cols, (1, lo), 1.0, &mut dw);
        // dcols = Wᵀ · dY
        gemm(ck, d.c_out, lo, w, (1, ck), dyb, (lo, 1), 0.0, &mut dcols);
        let dxb = &mut dx[b * d.c_in * d.len_in..(b + 1) * d.c_in * d.len_in];
        col2im(&dcols, d.c_in, d.len_in, d.kernel, d.stride, lo, dxb);
    }
    (dx, dw, db)
}

pub fn conv_transpose1d_forward(d: &ConvDims, x: &[f64], w: &[f64], bias: &[f64]) -> Vec<f64> {
    let lo = d.transpose_len_out();
    let ok = d.c_out * d.kernel;
    let mut y = vec![0.0; d.batch * d.c_out * lo];
    let mut cols = vec![0.0; ok * d.len_in];
    for b in 0..d.batch {
        let xb = &x[b * d.c_in * d.len_in..(b + 1) * d.c_in * d.len_in];
        // cols = Wmatᵀ · X, Wmat is c_in × (c_out·k)
        gemm(ok, d.c_in, d.len_in, w, (1, ok), xb, (d.len_in, 1), 0.0, &mut cols);
        let yb = &mut y[b * d.c_out * lo..(b + 1) * d.c_out * lo];
        for (o, row) in yb.chunks_mut(lo).enumerate() {
            row.fill(bias[o]);
        }
        col2im(&cols, d.c_out, lo, d.kernel, d.stride, d.len_in, yb);
    }
    y
}

pub fn conv_transpose1d_backward(d: &ConvDims, x: &[f64], w: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let lo = d.transpose_len_out();
    let ok = d.c_out * d.kernel;
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; d.c_out];
    let mut dcols = vec![0.0; ok * d.len_in];
    for b in 0..d.batch {
        let xb = &x[b * d.c_in * d.len_in..(b + 1) * d.c_in * d.len_in];
        let dyb = &dy[b * d.c_out * lo..(b + 1) * d.c_out * lo];
        for (o, row) in dyb.chunks(lo).enumerate() {
            db[o] += row.iter().sum::<f64>();
        }
        im2col(dyb, d.c_out, lo, d.kernel, d.stride, d.len_in, &mut dcols);
        let dxb = &mut dx[b * d.c_in * d.len_in..(b + 1) * d.c_in * d.len_in];
        gemm(d.c_in, ok, d.len_in, w, (ok, 1), &dcols, (d.len_in, 1), 0.0, dxb);
        gemm(d.c_in, d.len_in, ok, xb, (d.len_in, 1), &dcols, (1, d.len_in), 1.0, &mut dw);
    }
    (dx, dw, db)
}

/// Non-overlapping max pooling; ties resolve to the first index, the tail
/// shorter than `window` is dropped. Returns values and flat argmax indices.
pub fn maxpool_forward(rows: usize, len: usize, window: usize, x: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let lo = len / window;
    let mut y = Vec::with_capacity(rows * lo);
    let mut idx = Vec::with_capacity(rows * lo);
    for r in 0..rows {
        let row = &x[r * len..(r + 1) * len];
        for t in 0..lo {
            let mut best = t * window;
            for j in t * window + 1..(t + 1) * window {
                if row[j] > row[best] {
                    best = j;
                }
            }
            y.push(row[best]);
            idx.push(r * len + best);
        }
    }
    (y, idx)
}

/// Per-channel statistics over batch and time for `[batch, channels, len]`.
pub fn channel_mean_var(batch: usize, channels: usize, len: usize, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = (batch * len) as f64;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * len;
            mean[c] += x[off..off + len].iter().sum::<f64>();
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * len;
            var[c] += x[off..off + len].iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
        }
    }
    for v in &mut var {
        *v /= n;
    }
    (mean, var)
}
