//! Reference (non-streaming) layer primitives.
//!
//! Every convolution output element is accumulated in a fixed order,
//! `(in_channel, ky, kx)` ascending, starting from zero, with the bias added
//! last. Results are therefore bit-reproducible for any element type.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{Element, Real, Shape, Tensor};
use crate::{Error, Result};

/// Convolution weights `(out, in, kh, kw)` with optional per-output bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel<T> {
    pub weights: Tensor<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Copy> ConvKernel<T> {
    pub fn new(weights: Tensor<T>, bias: Option<Vec<T>>) -> Result<Self> {
        if let Some(b) = &bias {
            if b.len() != weights.shape().n {
                return Err(Error::ShapeMismatch {
                    what: "conv bias length",
                    expected: weights.shape().n,
                    found: b.len(),
                });
            }
        }
        Ok(ConvKernel { weights, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape().n
    }
    pub fn in_channels(&self) -> usize {
        self.weights.shape().c
    }
    pub fn kh(&self) -> usize {
        self.weights.shape().h
    }
    pub fn kw(&self) -> usize {
        self.weights.shape().w
    }
}

/// Output spatial size of a convolution along one axis.
pub fn conv_out_dim(input: usize, k: usize, pad: usize, stride: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

pub fn conv2d_ref<T: Element>(input: &Tensor<T>, kernel: &ConvKernel<T>, pad: usize, stride: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if s.c != kernel.in_channels() {
        return Err(Error::ShapeMismatch {
            what: "conv input channels",
            expected: kernel.in_channels(),
            found: s.c,
        });
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("conv stride must be >= 1"));
    }
    let (kh, kw) = (kernel.kh(), kernel.kw());
    let oh = conv_out_dim(s.h, kh, pad, stride).ok_or(Error::ShapeMismatch {
        what: "conv input height (smaller than kernel)",
        expected: kh,
        found: s.h + 2 * pad,
    })?;
    let ow = conv_out_dim(s.w, kw, pad, stride).ok_or(Error::ShapeMismatch {
        what: "conv input width (smaller than kernel)",
        expected: kw,
        found: s.w + 2 * pad,
    })?;
    let co_n = kernel.out_channels();
    let out_shape = Shape::new(s.n, co_n, oh, ow);
    let mut out = Tensor::zeros(out_shape);
    let wts = kernel.weights.data();

    for n in 0..s.n {
        for co in 0..co_n {
            let w_co = &wts[co * s.c * kh * kw..(co + 1) * s.c * kh * kw];
            let out_plane = out.plane_mut(n, co);
            for oy in 0..oh {
                let out_row = &mut out_plane[oy * ow..(oy + 1) * ow];
                for ci in 0..s.c {
                    let in_plane = input.plane(n, ci);
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        let in_row = &in_plane[iy as usize * s.w..(iy as usize + 1) * s.w];
                        for kx in 0..kw {
                            let wv = w_co[(ci * kh + ky) * kw + kx];
                            accumulate_row(out_row, in_row, wv, kx, pad, stride);
                        }
                    }
                }
            }
            if let Some(b) = &kernel.bias {
                for v in out_plane.iter_mut() {
                    *v += b[co];
                }
            }
        }
    }
    Ok(out)
}

/// `out[ox] += w * in[ox*stride + kx - pad]` over the in-range output columns.
#[inline]
fn accumulate_row<T: Element>(out_row: &mut [T], in_row: &[T], w: T, kx: usize, pad: usize, stride: usize) {
    let ow = out_row.len();
    let iw = in_row.len() as isize;
    // first ox with ix >= 0, last ox with ix < iw
    let off = kx as isize - pad as isize;
    let st = stride as isize;
    let x0 = if off >= 0 { 0 } else { ((-off) + st - 1) / st };
    let x1 = if iw - off <= 0 { 0 } else { ((iw - off - 1) / st + 1).min(ow as isize) };
    if x1 <= x0 {
        return;
    }
    let (x0, x1) = (x0 as usize, x1 as usize);
    if stride == 1 {
        let ix0 = (x0 as isize + off) as usize;
        for (o, &i) in out_row[x0..x1].iter_mut().zip(&in_row[ix0..ix0 + (x1 - x0)]) {
            *o += w * i;
        }
    } else {
        for ox in x0..x1 {
            let ix = (ox as isize * st + off) as usize;
            out_row[ox] += w * in_row[ix];
        }
    }
}

pub fn maxpool2x2<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    maxpool2x2_indexed(input).map(|(t, _)| t)
}

/// Max pooling that also records, per output element, the flat input offset of
/// the first maximum in window scan order.
pub fn maxpool2x2_indexed<T: Element>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = input.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::OddSpatial { h: s.h, w: s.w });
    }
    let os = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut out = Vec::with_capacity(os.len());
    let mut idx = Vec::with_capacity(os.len());
    let data = input.data();
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let mut best = s.offset(n, c, 2 * oy, 2 * ox);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let o = s.offset(n, c, 2 * oy + dy, 2 * ox + dx);
                        if data[o] > data[best] {
                            best = o;
                        }
                    }
                    out.push(data[best]);
                    idx.push(best);
                }
            }
        }
    }
    Ok((Tensor::from_vec(os, out)?, idx))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum UpsampleMode {
    #[default]
    Nearest,
    /// Half-pixel-centre bilinear interpolation with edge clamping.
    Bilinear,
}

pub fn upsample_nearest<T: Copy>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::InvalidArgument("upsample factor must be >= 1"));
    }
    let s = input.shape();
    let os = Shape::new(s.n, s.c, s.h * factor, s.w * factor);
    let mut out = Vec::with_capacity(os.len());
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = input.plane(n, c);
            for y in 0..os.h {
                let row = &plane[(y / factor) * s.w..(y / factor + 1) * s.w];
                for x in 0..os.w {
                    out.push(row[x / factor]);
                }
            }
        }
    }
    Tensor::from_vec(os, out)
}

/// Source taps `(i0, i1, frac)` for one output coordinate of a bilinear resize.
pub(crate) fn bilinear_taps(out_pos: usize, factor: usize, in_len: usize) -> (usize, usize, f64) {
    let src = ((out_pos as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
    let i0 = (src as usize).min(in_len - 1);
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, src - i0 as f64)
}

pub fn upsample_bilinear<T: Real>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::InvalidArgument("upsample factor must be >= 1"));
    }
    let s = input.shape();
    let os = Shape::new(s.n, s.c, s.h * factor, s.w * factor);
    let ys: Vec<_> = (0..os.h).map(|y| bilinear_taps(y, factor, s.h)).collect();
    let xs: Vec<_> = (0..os.w).map(|x| bilinear_taps(x, factor, s.w)).collect();
    let mut out = Vec::with_capacity(os.len());
    for n in 0..s.n {
        for c in 0..s.c {
            let p = input.plane(n, c);
            for &(y0, y1, fy) in &ys {
                let fy = T::from_f64(fy);
                for &(x0, x1, fx) in &xs {
                    let fx = T::from_f64(fx);
                    let top = p[y0 * s.w + x0] * (T::one() - fx) + p[y0 * s.w + x1] * fx;
                    let bot = p[y1 * s.w + x0] * (T::one() - fx) + p[y1 * s.w + x1] * fx;
                    out.push(top * (T::one() - fy) + bot * fy);
                }
            }
        }
    }
    Tensor::from_vec(os, out)
}

pub fn upsample<T: Real>(input: &Tensor<T>, factor: usize, mode: UpsampleMode) -> Result<Tensor<T>> {
    match mode {
        UpsampleMode::Nearest => upsample_nearest(input, factor),
        UpsampleMode::Bilinear => upsample_bilinear(input, factor),
    }
}

/// Inference-mode batch normalization with per-channel statistics.
pub fn batchnorm_ref<T: Real>(input: &Tensor<T>, gamma: &[T], beta: &[T], running_mean: &[T], running_var: &[T], eps: T) -> Result<Tensor<T>> {
    let s = input.shape();
    for (what, v) in [
        ("batchnorm gamma", gamma),
        ("batchnorm beta", beta),
        ("batchnorm running mean", running_mean),
        ("batchnorm running var", running_var),
    ] {
        if v.len() != s.c {
            return Err(Error::ShapeMismatch {
                what,
                expected: s.c,
                found: v.len(),
            });
        }
    }
    let mut out = input.clone();
    for n in 0..s.n {
        for c in 0..s.c {
            let inv = T::one() / (running_var[c] + eps).sqrt();
            let (g, b, m) = (gamma[c], beta[c], running_mean[c]);
            for v in out.plane_mut(n, c) {
                *v = g * (*v - m) * inv + b;
            }
        }
    }
    Ok(out)
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Per-pixel index of the largest channel; ties resolve to the lowest index.
pub fn argmax_channels<T: Element>(input: &Tensor<T>) -> Result<Tensor<u8>> {
    let s = input.shape();
    if s.c == 0 {
        return Err(Error::InvalidArgument("argmax needs at least one channel"));
    }
    if s.c > 255 {
        return Err(Error::InvalidArgument("argmax supports at most 255 classes"));
    }
    let mut labels = vec![0u8; s.n * s.plane()];
    for n in 0..s.n {
        let out = &mut labels[n * s.plane()..(n + 1) * s.plane()];
        let mut best: Vec<T> = input.plane(n, 0).to_vec();
        for c in 1..s.c {
            for ((b, l), &v) in best.iter_mut().zip(out.iter_mut()).zip(input.plane(n, c)) {
                if v > *b {
                    *b = v;
                    *l = c as u8;
                }
            }
        }
    }
    Tensor::from_vec(Shape::new(s.n, 1, s.h, s.w), labels)
}
