//! Forward and backward kernels for the closed operator set.
//!
//! All kernels take `N,C,H,W` (or `N,F`) tensors and return freshly allocated
//! outputs. Convolution lowers each sample to columns and calls a GEMM.

use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;

/// `c = alpha * a(m,k) * b(k,n) + beta * c`, each operand row-major unless
/// the matching `trans_*` flag asks for the transposed view.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slices are sized by the callers to m*k, k*n and m*n elements and
    // the strides above address exactly those ranges.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn conv_out_dim(size: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(x_shape: &[usize], k: usize, stride: usize, pad: usize) -> Self {
        let (c, h, w) = (x_shape[1], x_shape[2], x_shape[3]);
        let ho = conv_out_dim(h, k, stride, pad).expect("validated at build time");
        let wo = conv_out_dim(w, k, stride, pad).expect("validated at build time");
        ConvGeom { c, h, w, k, stride, pad, ho, wo }
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let n_out = self.col_cols();
        for ci in 0..self.c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * n_out..(row + 1) * n_out];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            dst[oy * self.wo + ox] = if iy >= 0
                                && (iy as usize) < self.h
                                && ix >= 0
                                && (ix as usize) < self.w
                            {
                                x[(ci * self.h + iy as usize) * self.w + ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let n_out = self.col_cols();
        for ci in 0..self.c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let src = &cols[row * n_out..(row + 1) * n_out];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.h {
                            continue;
                        }
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix as usize >= self.w {
                                continue;
                            }
                            dx[(ci * self.h + iy as usize) * self.w + ix as usize] +=
                                src[oy * self.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `x: [N,C,H,W]`, `w: [O,C,k,k]` -> `[N,O,Ho,Wo]`. Zero padding, no bias.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
    let o = w.shape()[0];
    let g = ConvGeom::new(x.shape(), w.shape()[2], stride, pad);
    let n = x.batch();
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let mut out = Tensor::zeros(&[n, o, g.ho, g.wo]);
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; rows * ncols]
    };
    let out_len = o * ncols;
    for i in 0..n {
        let xs = x.sample(i);
        let src: &[f64] = if g.is_pointwise() {
            xs
        } else {
            g.im2col(xs, &mut cols);
            &cols
        };
        let dst = &mut out.data_mut()[i * out_len..(i + 1) * out_len];
        gemm(o, rows, ncols, w.data(), false, src, false, dst, 0.0);
    }
    out
}

/// Returns `(dx, dw)` for [`conv2d_forward`].
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    stride: usize,
    pad: usize,
) -> (Tensor, Tensor) {
    let o = w.shape()[0];
    let g = ConvGeom::new(x.shape(), w.shape()[2], stride, pad);
    let n = x.batch();
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut cols = vec![0.0; rows * ncols];
    let mut dcols = vec![0.0; rows * ncols];
    let in_len = x.sample_len();
    for i in 0..n {
        let dys = dy.sample(i);
        let xs = x.sample(i);
        let src: &[f64] = if g.is_pointwise() {
            xs
        } else {
            g.im2col(xs, &mut cols);
            &cols
        };
        // dW += dY(o, ncols) * cols(rows, ncols)^T
        gemm(o, ncols, rows, dys, false, src, true, dw.data_mut(), 1.0);
        // dcols = W^T(rows, o) * dY(o, ncols)
        let dxs = &mut dx.data_mut()[i * in_len..(i + 1) * in_len];
        if g.is_pointwise() {
            gemm(rows, o, ncols, w.data(), true, dys, false, dxs, 0.0);
        } else {
            gemm(rows, o, ncols, w.data(), true, dys, false, &mut dcols, 0.0);
            g.col2im(&dcols, dxs);
        }
    }
    (dx, dw)
}

/// `x: [N,F]`, `w: [O,F]`, optional `b: [O]` -> `[N,O]`.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let (n, f) = (x.batch(), x.sample_len());
    let o = w.shape()[0];
    let mut out = Tensor::zeros(&[n, o]);
    if let Some(b) = b {
        for row in out.data_mut().chunks_mut(o) {
            row.copy_from_slice(b.data());
        }
    }
    gemm(n, f, o, x.data(), false, w.data(), true, out.data_mut(), if b.is_some() { 1.0 } else { 0.0 });
    out
}

/// Returns `(dx, dw, db)`.
pub fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (n, f) = (x.batch(), x.sample_len());
    let o = w.shape()[0];
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[o]);
    gemm(n, o, f, dy.data(), false, w.data(), false, dx.data_mut(), 0.0);
    gemm(o, n, f, dy.data(), true, x.data(), false, dw.data_mut(), 0.0);
    for row in dy.data().chunks(o) {
        for (d, g) in db.data_mut().iter_mut().zip(row) {
            *d += g;
        }
    }
    (dx, dw, db)
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&o, &g)| if o > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(y.shape().to_vec(), data).expect("same shape")
}

fn channel_layout(shape: &[usize]) -> (usize, usize, usize) {
    let n = shape[0];
    let c = shape[1];
    let hw: usize = shape[2..].iter().product();
    (n, c, hw)
}

/// Cached quantities from a batch-statistics normalization pass.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub var: Vec<f64>,
}

/// Per-channel normalization over `N` and spatial extents using the batch's
/// own mean and (biased) variance.
pub fn batchnorm_forward(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> (Tensor, BnCache) {
    let (n, c, hw) = channel_layout(x.shape());
    let m = (n * hw) as f64;
    let xd = x.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * hw;
            mean[ch] += xd[base..base + hw].iter().sum::<f64>();
        }
    }
    for v in &mut mean {
        *v /= m;
    }
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * hw;
            var[ch] += xd[base..base + hw]
                .iter()
                .map(|v| (v - mean[ch]) * (v - mean[ch]))
                .sum::<f64>();
        }
    }
    for v in &mut var {
        *v /= m;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; xd.len()];
    let mut out = Tensor::zeros(x.shape());
    let od = out.data_mut();
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * hw;
            let (g, b) = (gamma.data()[ch], beta.data()[ch]);
            for j in base..base + hw {
                let h = (xd[j] - mean[ch]) * inv_std[ch];
                xhat[j] = h;
                od[j] = g * h + b;
            }
        }
    }
    (out, BnCache { xhat, inv_std, var })
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward(
    cache: &BnCache,
    gamma: &Tensor,
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (n, c, hw) = channel_layout(dy.shape());
    let m = (n * hw) as f64;
    let dyd = dy.data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * hw;
            for j in base..base + hw {
                dgamma[ch] += dyd[j] * cache.xhat[j];
                dbeta[ch] += dyd[j];
            }
        }
    }
    let mut dx = Tensor::zeros(dy.shape());
    let dxd = dx.data_mut();
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * hw;
            let g = gamma.data()[ch];
            // sum(dxhat) = g * dbeta, sum(dxhat * xhat) = g * dgamma
            let s1 = g * dbeta[ch];
            let s2 = g * dgamma[ch];
            let k = cache.inv_std[ch] / m;
            for j in base..base + hw {
                dxd[j] = k * (m * g * dyd[j] - s1 - cache.xhat[j] * s2);
            }
        }
    }
    (
        dx,
        Tensor::new(vec![c], dgamma).expect("len c"),
        Tensor::new(vec![c], dbeta).expect("len c"),
    )
}

/// 3x3 average pooling, stride 1, padding 1. Padded cells are excluded from
/// the divisor.
pub fn avgpool3_forward(x: &Tensor) -> Tensor {
    let s = x.shape();
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    let mut out = Tensor::zeros(s);
    let xd = x.data();
    let od = out.data_mut();
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..h {
            let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
            for xx in 0..w {
                let (x0, x1) = (xx.saturating_sub(1), (xx + 1).min(w - 1));
                let mut acc = 0.0;
                for yy in y0..=y1 {
                    for xi in x0..=x1 {
                        acc += xd[base + yy * w + xi];
                    }
                }
                od[base + y * w + xx] = acc / ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64;
            }
        }
    }
    out
}

pub fn avgpool3_backward(dy: &Tensor) -> Tensor {
    let s = dy.shape();
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    let mut dx = Tensor::zeros(s);
    let gd = dy.data();
    let dd = dx.data_mut();
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..h {
            let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
            for xx in 0..w {
                let (x0, x1) = (xx.saturating_sub(1), (xx + 1).min(w - 1));
                let g = gd[base + y * w + xx] / ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64;
                for yy in y0..=y1 {
                    for xi in x0..=x1 {
                        dd[base + yy * w + xi] += g;
                    }
                }
            }
        }
    }
    dx
}

/// `[N,C,H,W]` -> `[N,C]`.
pub fn gap_forward(x: &Tensor) -> Tensor {
    let (n, c, hw) = channel_layout(x.shape());
    let data = x
        .data()
        .chunks(hw)
        .map(|plane| plane.iter().sum::<f64>() / hw as f64)
        .collect();
    Tensor::new(vec![n, c], data).expect("n*c values")
}

pub fn gap_backward(x_shape: &[usize], dy: &Tensor) -> Tensor {
    let (_, _, hw) = channel_layout(x_shape);
    let mut dx = Tensor::zeros(x_shape);
    for (plane, g) in dx.data_mut().chunks_mut(hw).zip(dy.data()) {
        plane.fill(g / hw as f64);
    }
    dx
}

/// Concatenate along the channel axis (axis 1).
pub fn concat_forward(xs: &[&Tensor]) -> Tensor {
    let n = xs[0].batch();
    let rest: usize = xs[0].shape()[2..].iter().product();
    let total_c: usize = xs.iter().map(|t| t.shape()[1]).sum();
    let mut shape = xs[0].shape().to_vec();
    shape[1] = total_c;
    let mut data = Vec::with_capacity(n * total_c * rest);
    for i in 0..n {
        for t in xs {
            data.extend_from_slice(t.sample(i));
        }
    }
    Tensor::new(shape, data).expect("sizes add up")
}

pub fn concat_backward(shapes: &[Vec<usize>], dy: &Tensor) -> Vec<Tensor> {
    let n = dy.batch();
    let mut outs: Vec<Tensor> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
    let mut offset = 0;
    for i in 0..n {
        for t in outs.iter_mut() {
            let len = t.sample_len();
            let dst = &mut t.data_mut()[i * len..(i + 1) * len];
            dst.copy_from_slice(&dy.data()[offset..offset + len]);
            offset += len;
        }
    }
    outs
}

/// Mean softmax cross-entropy over the batch. Returns the loss and the
/// softmax probabilities.
pub fn softmax_ce_forward(logits: &Tensor, labels: &[usize]) -> (f64, Vec<f64>) {
    let k = logits.sample_len();
    let n = logits.batch();
    let mut probs = vec![0.0; n * k];
    let mut loss = 0.0;
    for i in 0..n {
        let row = logits.sample(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        for j in 0..k {
            probs[i * k + j] = (row[j] - max).exp() / z;
        }
        loss += -(row[labels[i]] - max - z.ln());
    }
    (loss / n as f64, probs)
}

pub fn softmax_ce_backward(probs: &[f64], labels: &[usize], shape: &[usize], dloss: f64) -> Tensor {
    let n = shape[0];
    let k = probs.len() / n;
    let mut g = probs.to_vec();
    for (i, &l) in labels.iter().enumerate() {
        g[i * k + l] -= 1.0;
    }
    for v in &mut g {
        *v *= dloss / n as f64;
    }
    Tensor::new(shape.to_vec(), g).expect("same shape")
}
