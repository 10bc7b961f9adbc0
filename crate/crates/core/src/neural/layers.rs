//! Layer kernels on flat `f64` buffers.
//!
//! Activations are batch-major: sample `b`, channel `c`, spatial offset `s`
//! live at `(b * channels + c) * spatial + s`. Dense activations use
//! `spatial = 1`.

use crate::error::{Error, Result};

/// The 3×3 "same" convolution unrolled into a `(cin·9) × (h·w)` matrix.
pub fn im2col(input: &[f64], cin: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for ci in 0..cin {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    // dst[x] = src[x + kx - 1]
                    match kx {
                        0 => {
                            dst[0] = 0.0;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates column gradients back onto the input.
pub fn col2im(cols: &[f64], cin: usize, h: usize, w: usize, grad_in: &mut [f64]) {
    let hw = h * w;
    for ci in 0..cin {
        let plane = &mut grad_in[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
}

#[inline(always)]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators keep the loop vectorizable with a fixed reduction order
    let n = a.len();
    let b = &b[..n];
    let mut acc = [0.0; 4];
    for (x, y) in a.chunks_exact(4).zip(b.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in n - n % 4..n {
        s += a[i] * b[i];
    }
    s
}

/// Dot products of `a` with four vectors, each with the reduction order of [`dot`].
#[inline(always)]
fn dot4(a: &[f64], b: [&[f64]; 4]) -> [f64; 4] {
    let n = a.len();
    let [b0, b1, b2, b3] = b.map(|v| &v[..n]);
    let mut acc = [[0.0; 4]; 4];
    let quads = a
        .chunks_exact(4)
        .zip(b0.chunks_exact(4))
        .zip(b1.chunks_exact(4))
        .zip(b2.chunks_exact(4))
        .zip(b3.chunks_exact(4));
    for ((((x, y0), y1), y2), y3) in quads {
        for l in 0..4 {
            acc[0][l] += x[l] * y0[l];
            acc[1][l] += x[l] * y1[l];
            acc[2][l] += x[l] * y2[l];
            acc[3][l] += x[l] * y3[l];
        }
    }
    let tail = n - n % 4;
    let mut out = [0.0; 4];
    for (j, bj) in [b0, b1, b2, b3].iter().enumerate() {
        let mut s = (acc[j][0] + acc[j][1]) + (acc[j][2] + acc[j][3]);
        for i in tail..n {
            s += a[i] * bj[i];
        }
        out[j] = s;
    }
    out
}

/// Shape of a 3×3 same-padded convolution. Weights are `[cout][cin][3][3]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvShape {
    pub fn n_weights(&self) -> usize {
        self.cout * self.cin * 9
    }

    fn cols_len(&self) -> usize {
        self.cin * 9 * self.h * self.w
    }
}

/// Output channels processed together, so each unrolled row is read once
/// per group rather than once per channel.
const CO_BLOCK: usize = 4;

/// Runs `$body` compiled with AVX2 enabled when the CPU has it. Rust never
/// fuses multiply-adds on its own, so both paths give identical results.
macro_rules! with_avx2 {
    ($name:ident, $body:expr) => {{
        #[cfg(target_arch = "x86_64")]
        {
            #[target_feature(enable = "avx2")]
            unsafe fn $name<R>(f: impl FnOnce() -> R) -> R {
                f()
            }
            if std::is_x86_feature_detected!("avx2") {
                // SAFETY: the feature was detected at runtime.
                return unsafe { $name(|| $body) };
            }
        }
        $body
    }};
}

pub fn conv_forward(s: ConvShape, input: &[f64], weight: &[f64], bias: &[f64], batch: usize) -> Vec<f64> {
    with_avx2!(fwd_avx2, conv_forward_impl(s, input, weight, bias, batch))
}

#[inline(always)]
fn conv_forward_impl(s: ConvShape, input: &[f64], weight: &[f64], bias: &[f64], batch: usize) -> Vec<f64> {
    let hw = s.h * s.w;
    let k = s.cin * 9;
    let mut out = vec![0.0; batch * s.cout * hw];
    let mut cols = vec![0.0; s.cols_len()];
    for b in 0..batch {
        im2col(&input[b * s.cin * hw..(b + 1) * s.cin * hw], s.cin, s.h, s.w, &mut cols);
        let planes = &mut out[b * s.cout * hw..(b + 1) * s.cout * hw];
        for (g, group) in planes.chunks_mut(CO_BLOCK * hw).enumerate() {
            let co0 = g * CO_BLOCK;
            for (j, o) in group.chunks_mut(hw).enumerate() {
                o.fill(bias[co0 + j]);
            }
            if group.len() == CO_BLOCK * hw {
                let (o0, rest) = group.split_at_mut(hw);
                let (o1, rest) = rest.split_at_mut(hw);
                let (o2, o3) = rest.split_at_mut(hw);
                for kk in 0..k {
                    let w = |j: usize| weight[(co0 + j) * k + kk];
                    let (w0, w1, w2, w3) = (w(0), w(1), w(2), w(3));
                    let c = &cols[kk * hw..(kk + 1) * hw];
                    let lanes = o0.iter_mut().zip(o1.iter_mut()).zip(o2.iter_mut()).zip(o3.iter_mut());
                    for ((((a, b), c2), d), &x) in lanes.zip(c) {
                        *a += w0 * x;
                        *b += w1 * x;
                        *c2 += w2 * x;
                        *d += w3 * x;
                    }
                }
            } else {
                for (j, o) in group.chunks_mut(hw).enumerate() {
                    for (kk, &wv) in weight[(co0 + j) * k..(co0 + j + 1) * k].iter().enumerate() {
                        axpy(o, wv, &cols[kk * hw..(kk + 1) * hw]);
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when
/// `need_input` is set.
pub fn conv_backward(
    s: ConvShape,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    batch: usize,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    need_input: bool,
) -> Option<Vec<f64>> {
    with_avx2!(
        bwd_avx2,
        conv_backward_impl(s, input, weight, grad_out, batch, grad_w, grad_b, need_input)
    )
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn conv_backward_impl(
    s: ConvShape,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    batch: usize,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    need_input: bool,
) -> Option<Vec<f64>> {
    let hw = s.h * s.w;
    let k = s.cin * 9;
    let mut cols = vec![0.0; s.cols_len()];
    let mut dcols = vec![0.0; s.cols_len()];
    let mut grad_in = need_input.then(|| vec![0.0; batch * s.cin * hw]);
    for b in 0..batch {
        im2col(&input[b * s.cin * hw..(b + 1) * s.cin * hw], s.cin, s.h, s.w, &mut cols);
        let grads = &grad_out[b * s.cout * hw..(b + 1) * s.cout * hw];
        for (co, g) in grads.chunks(hw).enumerate() {
            grad_b[co] += g.iter().sum::<f64>();
        }
        // each unrolled row is visited once and meets every output group
        let groups: Vec<&[f64]> = grads.chunks(CO_BLOCK * hw).collect();
        for kk in 0..k {
            let c = &cols[kk * hw..(kk + 1) * hw];
            for (gi, group) in groups.iter().enumerate() {
                let co0 = gi * CO_BLOCK;
                if group.len() == CO_BLOCK * hw {
                    let (g0, rest) = group.split_at(hw);
                    let (g1, rest) = rest.split_at(hw);
                    let (g2, g3) = rest.split_at(hw);
                    let d = dot4(c, [g0, g1, g2, g3]);
                    for j in 0..CO_BLOCK {
                        grad_w[(co0 + j) * k + kk] += d[j];
                    }
                } else {
                    for (j, g) in group.chunks(hw).enumerate() {
                        grad_w[(co0 + j) * k + kk] += dot(g, c);
                    }
                }
            }
        }
        if let Some(gin) = grad_in.as_mut() {
            dcols.fill(0.0);
            for kk in 0..k {
                let d = &mut dcols[kk * hw..(kk + 1) * hw];
                for (gi, group) in groups.iter().enumerate() {
                    let co0 = gi * CO_BLOCK;
                    let w = |j: usize| weight[(co0 + j) * k + kk];
                    if group.len() == CO_BLOCK * hw {
                        let (g0, rest) = group.split_at(hw);
                        let (g1, rest) = rest.split_at(hw);
                        let (g2, g3) = rest.split_at(hw);
                        let (w0, w1, w2, w3) = (w(0), w(1), w(2), w(3));
                        let lanes = g0.iter().zip(g1).zip(g2).zip(g3);
                        for (di, (((a, b), c), e)) in d.iter_mut().zip(lanes) {
                            *di += w0 * a + w1 * b + w2 * c + w3 * e;
                        }
                    } else {
                        for (j, g) in group.chunks(hw).enumerate() {
                            axpy(d, w(j), g);
                        }
                    }
                }
            }
            col2im(&dcols, s.cin, s.h, s.w, &mut gin[b * s.cin * hw..(b + 1) * s.cin * hw]);
        }
    }
    grad_in
}

pub fn relu(x: &mut [f64]) {
    for v in x {
        *v = v.max(0.0);
    }
}

/// Zeroes `grad` wherever the ReLU output was not positive.
pub fn relu_backward(output: &[f64], grad: &mut [f64]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Cache of a train-mode batch normalization.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Biased batch variance.
    pub var: Vec<f64>,
}

/// Normalizes each channel over batch and spatial positions.
pub fn bn_forward_train(
    x: &[f64],
    batch: usize,
    channels: usize,
    spatial: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Vec<f64>, BnCache) {
    let n = (batch * spatial) as f64;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for b in 0..batch {
        for c in 0..channels {
            mean[c] += x[(b * channels + c) * spatial..][..spatial].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    for b in 0..batch {
        for c in 0..channels {
            let m = mean[c];
            var[c] += x[(b * channels + c) * spatial..][..spatial]
                .iter()
                .map(|v| (v - m) * (v - m))
                .sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * spatial;
            for s in 0..spatial {
                let h = (x[base + s] - mean[c]) * inv_std[c];
                xhat[base + s] = h;
                y[base + s] = gamma[c] * h + beta[c];
            }
        }
    }
    (
        y,
        BnCache {
            xhat,
            inv_std,
            mean,
            var,
        },
    )
}

pub fn bn_forward_eval(
    x: &[f64],
    batch: usize,
    channels: usize,
    spatial: usize,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let scale = gamma[c] / (running_var[c] + eps).sqrt();
            let base = (b * channels + c) * spatial;
            for s in 0..spatial {
                y[base + s] = (x[base + s] - running_mean[c]) * scale + beta[c];
            }
        }
    }
    y
}

/// Returns the input gradient; accumulates γ and β gradients.
pub fn bn_backward(
    cache: &BnCache,
    grad_out: &[f64],
    batch: usize,
    channels: usize,
    spatial: usize,
    gamma: &[f64],
    grad_gamma: &mut [f64],
    grad_beta: &mut [f64],
) -> Vec<f64> {
    let n = (batch * spatial) as f64;
    let mut sum_g = vec![0.0; channels];
    let mut sum_gx = vec![0.0; channels];
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * spatial;
            for s in 0..spatial {
                let g = grad_out[base + s];
                sum_g[c] += g;
                sum_gx[c] += g * cache.xhat[base + s];
            }
        }
    }
    for c in 0..channels {
        grad_gamma[c] += sum_gx[c];
        grad_beta[c] += sum_g[c];
    }
    let mut dx = vec![0.0; grad_out.len()];
    for b in 0..batch {
        for c in 0..channels {
            let k = gamma[c] * cache.inv_std[c] / n;
            let base = (b * channels + c) * spatial;
            for s in 0..spatial {
                dx[base + s] = k * (n * grad_out[base + s] - sum_g[c] - cache.xhat[base + s] * sum_gx[c]);
            }
        }
    }
    dx
}

/// Output side of a 2×2 stride-2 pool; odd sizes keep the partial window.
pub fn pooled_len(n: usize) -> usize {
    n.div_ceil(2)
}

/// Max pool; returns the output and, per output element, the flat input
/// index of the selected maximum (first one on ties).
pub fn maxpool_forward(x: &[f64], planes: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (pooled_len(h), pooled_len(w));
    let mut out = vec![0.0; planes * oh * ow];
    let mut arg = vec![0usize; planes * oh * ow];
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut bi = 0;
                for y in 2 * oy..(2 * oy + 2).min(h) {
                    for x2 in 2 * ox..(2 * ox + 2).min(w) {
                        let i = base + y * w + x2;
                        if x[i] > best {
                            best = x[i];
                            bi = i;
                        }
                    }
                }
                let o = (p * oh + oy) * ow + ox;
                out[o] = best;
                arg[o] = bi;
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward(grad_out: &[f64], argmax: &[usize], input_len: usize) -> Vec<f64> {
    let mut g = vec![0.0; input_len];
    for (&go, &i) in grad_out.iter().zip(argmax) {
        g[i] += go;
    }
    g
}

/// y = x·Wᵀ + b with `W` stored `[out][in]`.
pub fn dense_forward(x: &[f64], batch: usize, nin: usize, nout: usize, weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; batch * nout];
    for b in 0..batch {
        let xi = &x[b * nin..(b + 1) * nin];
        for o in 0..nout {
            y[b * nout + o] = bias[o] + dot(&weight[o * nin..(o + 1) * nin], xi);
        }
    }
    y
}

pub fn dense_backward(
    x: &[f64],
    grad_out: &[f64],
    batch: usize,
    nin: usize,
    nout: usize,
    weight: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; batch * nin];
    for b in 0..batch {
        let xi = &x[b * nin..(b + 1) * nin];
        let dxi = &mut dx[b * nin..(b + 1) * nin];
        for o in 0..nout {
            let g = grad_out[b * nout + o];
            grad_b[o] += g;
            axpy(&mut grad_w[o * nin..(o + 1) * nin], g, xi);
            axpy(dxi, g, &weight[o * nin..(o + 1) * nin]);
        }
    }
    dx
}

/// Row-wise softmax, max-shifted.
pub fn softmax(logits: &[f64], batch: usize, n: usize) -> Vec<f64> {
    let mut p = vec![0.0; logits.len()];
    for b in 0..batch {
        let row = &logits[b * n..(b + 1) * n];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (i, &v) in row.iter().enumerate() {
            let e = (v - m).exp();
            p[b * n + i] = e;
            z += e;
        }
        p[b * n..(b + 1) * n].iter_mut().for_each(|v| *v /= z);
    }
    p
}

pub fn check_finite(x: &[f64], layer: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            layer: layer.to_string(),
        })
    }
}
