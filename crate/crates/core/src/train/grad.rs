//! Reverse-mode differentiation over the fixed TinyIceNet layer set.

use alloc::vec;
use alloc::vec::Vec;

use crate::model::{LayerKind, LayerParams, ModelGraph};
use crate::ops::{self, bilinear_taps, ConvKernel, UpsampleMode};
use crate::tensor::{Real, Shape, Tensor};
use crate::train::loss::{cross_entropy_masked_grad, LossTerms};
use crate::{Error, Result};

/// Batch-norm statistics used during a training forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BnMode {
    /// Normalize with the current batch statistics.
    #[default]
    Batch,
    /// Normalize with the stored running statistics (frozen batch norm).
    Running,
}

#[derive(Debug, Clone)]
enum Entry<T> {
    Conv {
        input: Tensor<T>,
    },
    BatchNorm {
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        mean: Vec<f64>,
        var: Vec<f64>,
        batch: bool,
    },
    Relu {
        output: Tensor<T>,
        min_abs_input: f64,
    },
    MaxPool {
        indices: Vec<usize>,
        in_shape: Shape,
        min_gap: f64,
    },
    Upsample {
        in_shape: Shape,
        factor: usize,
        mode: UpsampleMode,
    },
    Passthrough,
}

/// Activations retained by [`forward_train`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    entries: Vec<Entry<T>>,
    bn_mode: BnMode,
}

impl<T: Real> Tape<T> {
    /// Smallest distance of any ReLU input, or of any max-pool runner-up, to
    /// a non-differentiable point.
    pub fn kink_margin(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| match e {
                Entry::Relu { min_abs_input, .. } => *min_abs_input,
                Entry::MaxPool { min_gap, .. } => *min_gap,
                _ => f64::INFINITY,
            })
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn forward_train<T: Real>(model: &ModelGraph<T>, input: &Tensor<T>, bn_mode: BnMode) -> Result<(Tensor<T>, Tape<T>)> {
    model.check_input(input.shape())?;
    let mut entries = Vec::with_capacity(model.layers().len());
    let mut x = input.clone();
    for (i, spec) in model.layers().iter().enumerate() {
        let (y, entry) = match (spec.kind, &model.params()[i]) {
            (LayerKind::Conv3x3 | LayerKind::Conv1x1, LayerParams::Conv(k)) => (ops::conv2d_ref(&x, k, spec.pad(), 1)?, Entry::Conv { input: x }),
            (LayerKind::BatchNorm, LayerParams::BatchNorm(bn)) => {
                let s = x.shape();
                let count = (s.n * s.plane()) as f64;
                let (mean, var): (Vec<f64>, Vec<f64>) = match bn_mode {
                    BnMode::Batch => (0..s.c)
                        .map(|c| {
                            let mut sum = 0.0;
                            for n in 0..s.n {
                                sum += x.plane(n, c).iter().map(|v| v.as_f64()).sum::<f64>();
                            }
                            let m = sum / count;
                            let mut sq = 0.0;
                            for n in 0..s.n {
                                sq += x.plane(n, c).iter().map(|v| (v.as_f64() - m) * (v.as_f64() - m)).sum::<f64>();
                            }
                            (m, sq / count)
                        })
                        .unzip(),
                    BnMode::Running => (
                        bn.running_mean.iter().map(|v| v.as_f64()).collect(),
                        bn.running_var.iter().map(|v| v.as_f64()).collect(),
                    ),
                };
                let eps = bn.eps.as_f64();
                let inv_std: Vec<T> = var.iter().map(|&v| T::from_f64(1.0 / num_traits::Float::sqrt(v + eps))).collect();
                let mut xhat = x;
                let mut y = Tensor::zeros(s);
                for n in 0..s.n {
                    for c in 0..s.c {
                        let m = T::from_f64(mean[c]);
                        let (g, b, is) = (bn.gamma[c], bn.beta[c], inv_std[c]);
                        let xp = xhat.plane_mut(n, c);
                        for v in xp.iter_mut() {
                            *v = (*v - m) * is;
                        }
                        for (o, &h) in y.plane_mut(n, c).iter_mut().zip(xhat.plane(n, c)) {
                            *o = g * h + b;
                        }
                    }
                }
                (
                    y,
                    Entry::BatchNorm {
                        xhat,
                        inv_std,
                        mean,
                        var,
                        batch: bn_mode == BnMode::Batch,
                    },
                )
            }
            (LayerKind::ReLU, _) => {
                let min_abs_input = x.data().iter().fold(f64::INFINITY, |m, v| m.min(v.as_f64().abs()));
                let y = ops::relu(&x);
                (y.clone(), Entry::Relu { output: y, min_abs_input })
            }
            (LayerKind::MaxPool2x2, _) => {
                let in_shape = x.shape();
                let (y, indices) = ops::maxpool2x2_indexed(&x)?;
                let min_gap = pool_min_gap(&x, &y);
                (y, Entry::MaxPool { indices, in_shape, min_gap })
            }
            (LayerKind::Upsample { factor, mode }, _) => (
                ops::upsample(&x, factor, mode)?,
                Entry::Upsample {
                    in_shape: x.shape(),
                    factor,
                    mode,
                },
            ),
            (LayerKind::Argmax, _) => (x, Entry::Passthrough),
            _ => {
                return Err(Error::InvalidGraph {
                    layer: i,
                    reason: "missing parameters".into(),
                })
            }
        };
        entries.push(entry);
        x = y;
    }
    Ok((x, Tape { entries, bn_mode }))
}

/// Smallest difference between a window's maximum and its runner-up. Ties at
/// exactly zero (ReLU-clamped inputs) are skipped: every tied element carries
/// zero gradient, so the choice of winner does not matter.
fn pool_min_gap<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> f64 {
    let s = x.shape();
    let mut gap = f64::INFINITY;
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..s.h / 2 {
                for ox in 0..s.w / 2 {
                    let m = y.get(n, c, oy, ox).as_f64();
                    let mut seen_max = false;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let v = x.get(n, c, 2 * oy + dy, 2 * ox + dx).as_f64();
                        if v == m && !seen_max {
                            seen_max = true;
                        } else if !(m == 0.0 && v == 0.0) {
                            gap = gap.min(m - v);
                        }
                    }
                }
            }
        }
    }
    gap
}

/// One gradient buffer per trainable slice, aligned with
/// [`ModelGraph::param_slices`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(model: &ModelGraph<T>) -> Self {
        Gradients {
            tensors: model.param_slices().iter().map(|s| vec![T::zero(); s.len()]).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors.iter().flatten().fold(0.0, |m, v| m.max(v.as_f64().abs()))
    }
}

fn conv_backward<T: Real>(x: &Tensor<T>, k: &ConvKernel<T>, pad: usize, g: &Tensor<T>, need_dx: bool) -> (Vec<T>, Option<Vec<T>>, Option<Tensor<T>>) {
    let xs = x.shape();
    let gs = g.shape();
    let (kh, kw) = (k.kh(), k.kw());
    let wts = k.weights.data();
    let mut dw = vec![T::zero(); wts.len()];
    let mut dx = need_dx.then(|| Tensor::zeros(xs));
    for n in 0..xs.n {
        for co in 0..gs.c {
            let gp = g.plane(n, co);
            for ci in 0..xs.c {
                let xp = x.plane(n, ci);
                for ky in 0..kh {
                    for kx in 0..kw {
                        let widx = ((co * xs.c + ci) * kh + ky) * kw + kx;
                        let off_x = kx as isize - pad as isize;
                        let ox0 = (-off_x).max(0) as usize;
                        let ox1 = ((xs.w as isize - off_x).min(gs.w as isize)).max(0) as usize;
                        if ox1 <= ox0 {
                            continue;
                        }
                        let mut acc = T::zero();
                        for oy in 0..gs.h {
                            let iy = oy as isize + ky as isize - pad as isize;
                            if iy < 0 || iy >= xs.h as isize {
                                continue;
                            }
                            let iy = iy as usize;
                            let g_row = &gp[oy * gs.w + ox0..oy * gs.w + ox1];
                            let ix0 = (ox0 as isize + off_x) as usize;
                            let x_row = &xp[iy * xs.w + ix0..iy * xs.w + ix0 + (ox1 - ox0)];
                            let mut part = T::zero();
                            for (&a, &b) in g_row.iter().zip(x_row) {
                                part += a * b;
                            }
                            acc += part;
                            if let Some(dx) = dx.as_mut() {
                                let wv = wts[widx];
                                let dxp = dx.plane_mut(n, ci);
                                for (d, &gv) in dxp[iy * xs.w + ix0..iy * xs.w + ix0 + (ox1 - ox0)].iter_mut().zip(g_row) {
                                    *d += wv * gv;
                                }
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    let db = k.bias.as_ref().map(|b| {
        (0..b.len())
            .map(|co| {
                let mut s = 0.0f64;
                for n in 0..gs.n {
                    s += g.plane(n, co).iter().map(|v| v.as_f64()).sum::<f64>();
                }
                T::from_f64(s)
            })
            .collect()
    });
    (dw, db, dx)
}

/// Propagates `grad_output` (gradient of the loss w.r.t. the forward output)
/// back through the tape.
pub fn backward<T: Real>(model: &ModelGraph<T>, tape: &Tape<T>, grad_output: &Tensor<T>) -> Result<Gradients<T>> {
    let mut per_layer: Vec<Vec<Vec<T>>> = vec![Vec::new(); model.layers().len()];
    let mut g = grad_output.clone();
    for i in (0..model.layers().len()).rev() {
        let spec = &model.layers()[i];
        let first_needed = i > 0;
        match (&tape.entries[i], &model.params()[i]) {
            (Entry::Conv { input }, LayerParams::Conv(k)) => {
                let (dw, db, dx) = conv_backward(input, k, spec.pad(), &g, first_needed);
                let mut grads = vec![dw];
                if let Some(db) = db {
                    grads.push(db);
                }
                per_layer[i] = grads;
                if let Some(dx) = dx {
                    g = dx;
                }
            }
            (Entry::BatchNorm { xhat, inv_std, batch, .. }, LayerParams::BatchNorm(bn)) => {
                let s = g.shape();
                let count = (s.n * s.plane()) as f64;
                let mut dgamma = vec![T::zero(); s.c];
                let mut dbeta = vec![T::zero(); s.c];
                for c in 0..s.c {
                    let (mut sg, mut sgx) = (0.0f64, 0.0f64);
                    for n in 0..s.n {
                        for (&gv, &h) in g.plane(n, c).iter().zip(xhat.plane(n, c)) {
                            sg += gv.as_f64();
                            sgx += (gv * h).as_f64();
                        }
                    }
                    dbeta[c] = T::from_f64(sg);
                    dgamma[c] = T::from_f64(sgx);
                    let scale = bn.gamma[c] * inv_std[c];
                    for n in 0..s.n {
                        let hp = xhat.plane(n, c);
                        let gp = g.plane_mut(n, c);
                        if *batch {
                            let (mg, mgx) = (T::from_f64(sg / count), T::from_f64(sgx / count));
                            for (gv, &h) in gp.iter_mut().zip(hp) {
                                *gv = scale * (*gv - mg - h * mgx);
                            }
                        } else {
                            for gv in gp.iter_mut() {
                                *gv = scale * *gv;
                            }
                        }
                    }
                }
                per_layer[i] = vec![dgamma, dbeta];
            }
            (Entry::Relu { output, .. }, _) => {
                for (gv, &o) in g.data_mut().iter_mut().zip(output.data()) {
                    if o <= T::zero() {
                        *gv = T::zero();
                    }
                }
            }
            (Entry::MaxPool { indices, in_shape, .. }, _) => {
                let mut dx = Tensor::zeros(*in_shape);
                for (&idx, &gv) in indices.iter().zip(g.data()) {
                    dx.data_mut()[idx] += gv;
                }
                g = dx;
            }
            (Entry::Upsample { in_shape, factor, mode }, _) => {
                g = upsample_backward(&g, *in_shape, *factor, *mode);
            }
            (Entry::Passthrough, _) => {}
            _ => {
                return Err(Error::InvalidGraph {
                    layer: i,
                    reason: "tape does not match model".into(),
                })
            }
        }
    }
    Ok(Gradients {
        tensors: per_layer.into_iter().flatten().collect(),
    })
}

fn upsample_backward<T: Real>(g: &Tensor<T>, in_shape: Shape, factor: usize, mode: UpsampleMode) -> Tensor<T> {
    let mut dx = Tensor::zeros(in_shape);
    let gs = g.shape();
    match mode {
        UpsampleMode::Nearest => {
            for n in 0..gs.n {
                for c in 0..gs.c {
                    let gp = g.plane(n, c);
                    let dp = dx.plane_mut(n, c);
                    for y in 0..gs.h {
                        for x in 0..gs.w {
                            dp[(y / factor) * in_shape.w + x / factor] += gp[y * gs.w + x];
                        }
                    }
                }
            }
        }
        UpsampleMode::Bilinear => {
            let ys: Vec<_> = (0..gs.h).map(|y| bilinear_taps(y, factor, in_shape.h)).collect();
            let xs: Vec<_> = (0..gs.w).map(|x| bilinear_taps(x, factor, in_shape.w)).collect();
            let one = T::one();
            for n in 0..gs.n {
                for c in 0..gs.c {
                    let gp = g.plane(n, c);
                    let dp = dx.plane_mut(n, c);
                    for (y, &(y0, y1, fy)) in ys.iter().enumerate() {
                        let fy = T::from_f64(fy);
                        for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
                            let fx = T::from_f64(fx);
                            let gv = gp[y * gs.w + x];
                            let w = in_shape.w;
                            dp[y0 * w + x0] += gv * (one - fy) * (one - fx);
                            dp[y0 * w + x1] += gv * (one - fy) * fx;
                            dp[y1 * w + x0] += gv * fy * (one - fx);
                            dp[y1 * w + x1] += gv * fy * fx;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Forward in training mode, masked cross-entropy, and full backward pass.
pub fn loss_and_grad<T: Real>(
    model: &ModelGraph<T>,
    input: &Tensor<T>,
    labels: &Tensor<u8>,
    ignore_label: u8,
    bn_mode: BnMode,
) -> Result<(LossTerms, Gradients<T>, Tape<T>)> {
    let (logits, tape) = forward_train(model, input, bn_mode)?;
    let (terms, grad_logits) = cross_entropy_masked_grad(&logits, labels, ignore_label)?;
    let grads = backward(model, &tape, &grad_logits)?;
    Ok((terms, grads, tape))
}

/// Exponential-moving-average update of batch-norm running statistics from
/// the batch statistics recorded on `tape` (unbiased variance).
pub fn update_running_stats<T: Real>(model: &mut ModelGraph<T>, tape: &Tape<T>, momentum: f64) {
    if tape.bn_mode != BnMode::Batch {
        return;
    }
    for (p, e) in model.params_mut().iter_mut().zip(&tape.entries) {
        if let (LayerParams::BatchNorm(bn), Entry::BatchNorm { mean, var, xhat, .. }) = (p, e) {
            let batch_count = xhat.shape().n * xhat.shape().plane();
            let unbias = if batch_count > 1 {
                batch_count as f64 / (batch_count - 1) as f64
            } else {
                1.0
            };
            for c in 0..mean.len() {
                let rm = bn.running_mean[c].as_f64();
                let rv = bn.running_var[c].as_f64();
                bn.running_mean[c] = T::from_f64((1.0 - momentum) * rm + momentum * mean[c]);
                bn.running_var[c] = T::from_f64((1.0 - momentum) * rv + momentum * var[c] * unbias);
            }
        }
    }
}
