//! Declarative TinyIceNet graph: construction, real-valued forward pass,
//! parameter/MAC accounting and batch-norm folding.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::ops::{self, ConvKernel, UpsampleMode};
use crate::tensor::{Real, Shape, Tensor};
use crate::{rng, Error, Result};

/// Default batch-norm epsilon.
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv3x3,
    Conv1x1,
    BatchNorm,
    ReLU,
    MaxPool2x2,
    Upsample { factor: usize, mode: UpsampleMode },
    Argmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub has_bias: bool,
}

impl LayerSpec {
    pub fn is_conv(&self) -> bool {
        matches!(self.kind, LayerKind::Conv3x3 | LayerKind::Conv1x1)
    }

    /// Kernel side for convolutions, `None` otherwise.
    pub fn kernel_size(&self) -> Option<usize> {
        match self.kind {
            LayerKind::Conv3x3 => Some(3),
            LayerKind::Conv1x1 => Some(1),
            _ => None,
        }
    }

    /// Zero padding: 1 for 3×3 (same-size output), 0 for 1×1.
    pub fn pad(&self) -> usize {
        match self.kind {
            LayerKind::Conv3x3 => 1,
            _ => 0,
        }
    }

    /// Output spatial dims for input `(h, w)`.
    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        match self.kind {
            LayerKind::MaxPool2x2 => (h / 2, w / 2),
            LayerKind::Upsample { factor, .. } => (h * factor, w * factor),
            _ => (h, w),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
}

impl<T: Real> BatchNormParams<T> {
    pub fn identity(channels: usize) -> Self {
        BatchNormParams {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: T::from_f64(BN_EPS),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams<T> {
    None,
    Conv(ConvKernel<T>),
    BatchNorm(BatchNormParams<T>),
}

/// Ordered layer list plus parameters. Immutable once built except through
/// the training module.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph<T> {
    layers: Vec<LayerSpec>,
    params: Vec<LayerParams<T>>,
    /// `(channels, height, width)` the graph was built for.
    input_shape: (usize, usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacReport {
    /// Multiply-accumulates of all convolution layers.
    pub conv_macs: u64,
    /// Element counts of batch-norm, ReLU and upsample outputs.
    pub elementwise_ops: u64,
    /// `(layer index, macs)` for every convolution.
    pub per_layer: Vec<(usize, u64)>,
}

impl MacReport {
    pub fn total(&self) -> u64 {
        self.conv_macs + self.elementwise_ops
    }
}

impl<T: Real> ModelGraph<T> {
    /// Assembles a graph from parts, validating the channel chain and every
    /// parameter shape.
    pub fn from_parts(layers: Vec<LayerSpec>, params: Vec<LayerParams<T>>, input_shape: (usize, usize, usize)) -> Result<Self> {
        let g = ModelGraph { layers, params, input_shape };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        let bad = |layer: usize, reason: alloc::string::String| Err(Error::InvalidGraph { layer, reason });
        if self.layers.len() != self.params.len() {
            return bad(
                self.layers.len().min(self.params.len()),
                format!("{} layers but {} parameter entries", self.layers.len(), self.params.len()),
            );
        }
        let mut channels = self.input_shape.0;
        for (i, (l, p)) in self.layers.iter().zip(&self.params).enumerate() {
            if l.in_channels != channels {
                return bad(i, format!("expects {} input channels, predecessor produces {}", l.in_channels, channels));
            }
            if matches!(l.kind, LayerKind::Argmax) && i + 1 != self.layers.len() {
                return bad(i, "argmax must be the final layer".into());
            }
            if !l.is_conv() && l.in_channels != l.out_channels {
                return bad(i, "non-convolution layers preserve channel count".into());
            }
            match (l.kind, p) {
                (LayerKind::Conv3x3 | LayerKind::Conv1x1, LayerParams::Conv(k)) => {
                    let ks = l.kernel_size().unwrap_or(1);
                    let expect = Shape::new(l.out_channels, l.in_channels, ks, ks);
                    if k.weights.shape() != expect {
                        return bad(i, format!("weight shape {:?}, expected {:?}", k.weights.shape(), expect));
                    }
                    if k.bias.is_some() != l.has_bias {
                        return bad(i, format!("bias presence {} disagrees with has_bias {}", k.bias.is_some(), l.has_bias));
                    }
                }
                (LayerKind::BatchNorm, LayerParams::BatchNorm(bn)) => {
                    let n = l.out_channels;
                    if [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var].iter().any(|v| v.len() != n) {
                        return bad(i, format!("batch-norm vectors must have length {n}"));
                    }
                }
                (LayerKind::Conv3x3 | LayerKind::Conv1x1 | LayerKind::BatchNorm, _) => {
                    return bad(i, "missing parameters".into());
                }
                (_, LayerParams::None) => {}
                (_, _) => return bad(i, "parameterless layer carries parameters".into()),
            }
            channels = l.out_channels;
        }
        Ok(())
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[LayerParams<T>] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.params
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.layers.iter().rev().find(|l| l.is_conv()).map_or(self.input_shape.0, |l| l.out_channels)
    }

    /// Product of all pooling strides; input dims must be divisible by it.
    pub fn downsample_factor(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l.kind, LayerKind::MaxPool2x2)).fold(1, |f, _| f * 2)
    }

    pub fn cast<U: Real>(&self) -> ModelGraph<U> {
        let cv = |v: &Vec<T>| v.iter().map(|x| U::from_f64(x.as_f64())).collect::<Vec<U>>();
        let params = self
            .params
            .iter()
            .map(|p| match p {
                LayerParams::None => LayerParams::None,
                LayerParams::Conv(k) => LayerParams::Conv(ConvKernel {
                    weights: k.weights.cast(),
                    bias: k.bias.as_ref().map(cv),
                }),
                LayerParams::BatchNorm(bn) => LayerParams::BatchNorm(BatchNormParams {
                    gamma: cv(&bn.gamma),
                    beta: cv(&bn.beta),
                    running_mean: cv(&bn.running_mean),
                    running_var: cv(&bn.running_var),
                    eps: U::from_f64(bn.eps.as_f64()),
                }),
            })
            .collect();
        ModelGraph {
            layers: self.layers.clone(),
            params,
            input_shape: self.input_shape,
        }
    }

    /// Replaces the declared input shape (e.g. to run at a different scene size).
    pub fn with_input_size(mut self, h: usize, w: usize) -> Self {
        self.input_shape = (self.input_shape.0, h, w);
        self
    }

    pub(crate) fn check_input(&self, s: Shape) -> Result<()> {
        if s.c != self.input_shape.0 {
            return Err(Error::ShapeMismatch {
                what: "model input channels",
                expected: self.input_shape.0,
                found: s.c,
            });
        }
        let f = self.downsample_factor();
        if !s.h.is_multiple_of(f) || !s.w.is_multiple_of(f) || s.h == 0 || s.w == 0 {
            return Err(Error::NotDivisible { h: s.h, w: s.w, by: f });
        }
        Ok(())
    }

    /// Inference-mode forward of a single layer.
    pub fn apply_layer(&self, index: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
        let spec = &self.layers[index];
        match (spec.kind, &self.params[index]) {
            (LayerKind::Conv3x3 | LayerKind::Conv1x1, LayerParams::Conv(k)) => ops::conv2d_ref(x, k, spec.pad(), 1),
            (LayerKind::BatchNorm, LayerParams::BatchNorm(bn)) => ops::batchnorm_ref(x, &bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var, bn.eps),
            (LayerKind::ReLU, _) => Ok(ops::relu(x)),
            (LayerKind::MaxPool2x2, _) => ops::maxpool2x2(x),
            (LayerKind::Upsample { factor, mode }, _) => ops::upsample(x, factor, mode),
            (LayerKind::Argmax, _) => Ok(x.clone()),
            _ => Err(Error::InvalidGraph {
                layer: index,
                reason: "missing parameters".into(),
            }),
        }
    }

    /// Applies `layers[..stop_at]` (all real-valued layers when `None`) and
    /// returns the activation. The terminal argmax is never applied here; see
    /// [`ModelGraph::predict`].
    pub fn forward(&self, input: &Tensor<T>, stop_at: Option<usize>) -> Result<Tensor<T>> {
        self.check_input(input.shape())?;
        let end = stop_at.unwrap_or(self.layers.len()).min(self.layers.len());
        let mut x = input.clone();
        for i in 0..end {
            if matches!(self.layers[i].kind, LayerKind::Argmax) {
                break;
            }
            x = self.apply_layer(i, &x)?;
        }
        Ok(x)
    }

    /// Full forward pass to a `(n, 1, h, w)` class-index map.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<u8>> {
        ops::argmax_channels(&self.forward(input, None)?)
    }

    /// Weight, bias and batch-norm affine element counts. Running statistics
    /// are buffers, not parameters.
    pub fn count_params(&self) -> usize {
        self.params
            .iter()
            .map(|p| match p {
                LayerParams::None => 0,
                LayerParams::Conv(k) => k.weights.shape().len() + k.bias.as_ref().map_or(0, |b| b.len()),
                LayerParams::BatchNorm(bn) => bn.gamma.len() + bn.beta.len(),
            })
            .sum()
    }

    /// Input `(c, h, w)` of every layer for an input of spatial size `(h, w)`.
    pub fn layer_input_dims(&self, h: usize, w: usize) -> Vec<(usize, usize, usize)> {
        let mut dims = Vec::with_capacity(self.layers.len());
        let (mut hh, mut ww) = (h, w);
        for l in &self.layers {
            dims.push((l.in_channels, hh, ww));
            (hh, ww) = l.out_dims(hh, ww);
        }
        dims
    }

    pub fn count_macs(&self, input_shape: (usize, usize, usize)) -> Result<MacReport> {
        let (c, h, w) = input_shape;
        self.check_input(Shape::new(1, c, h, w))?;
        let mut report = MacReport {
            conv_macs: 0,
            elementwise_ops: 0,
            per_layer: Vec::new(),
        };
        for (i, (l, (_, hh, ww))) in self.layers.iter().zip(self.layer_input_dims(h, w)).enumerate() {
            let (oh, ow) = l.out_dims(hh, ww);
            let out_elems = (oh * ow * l.out_channels) as u64;
            match l.kind {
                LayerKind::Conv3x3 | LayerKind::Conv1x1 => {
                    let k = l.kernel_size().unwrap_or(1) as u64;
                    let macs = out_elems * l.in_channels as u64 * k * k;
                    report.conv_macs += macs;
                    report.per_layer.push((i, macs));
                }
                LayerKind::BatchNorm | LayerKind::ReLU | LayerKind::Upsample { .. } => report.elementwise_ops += out_elems,
                _ => {}
            }
        }
        Ok(report)
    }

    /// Merges every convolution followed by batch normalization into one biased
    /// convolution using the running statistics.
    pub fn fold_batchnorm(&self) -> Result<ModelGraph<T>> {
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut params = Vec::with_capacity(self.layers.len());
        let mut i = 0;
        while i < self.layers.len() {
            let spec = self.layers[i];
            let next_bn = self.layers.get(i + 1).is_some_and(|l| matches!(l.kind, LayerKind::BatchNorm));
            match (&self.params[i], next_bn) {
                (LayerParams::Conv(k), true) if spec.is_conv() => {
                    let LayerParams::BatchNorm(bn) = &self.params[i + 1] else {
                        return Err(Error::InvalidGraph {
                            layer: i + 1,
                            reason: "batch-norm layer without parameters".into(),
                        });
                    };
                    let per = k.weights.shape().c * k.weights.shape().h * k.weights.shape().w;
                    let mut w = k.weights.clone();
                    let mut bias = Vec::with_capacity(spec.out_channels);
                    for co in 0..spec.out_channels {
                        let denom = bn.running_var[co].as_f64() + bn.eps.as_f64();
                        if !(denom > 0.0) {
                            return Err(Error::NonPositiveVariance { layer: i + 1 });
                        }
                        let factor = bn.gamma[co].as_f64() / num_traits::Float::sqrt(denom);
                        for v in &mut w.data_mut()[co * per..(co + 1) * per] {
                            *v = T::from_f64(v.as_f64() * factor);
                        }
                        let b0 = k.bias.as_ref().map_or(0.0, |b| b[co].as_f64());
                        bias.push(T::from_f64(bn.beta[co].as_f64() + (b0 - bn.running_mean[co].as_f64()) * factor));
                    }
                    layers.push(LayerSpec { has_bias: true, ..spec });
                    params.push(LayerParams::Conv(ConvKernel { weights: w, bias: Some(bias) }));
                    i += 2;
                }
                (p, _) => {
                    layers.push(spec);
                    params.push(p.clone());
                    i += 1;
                }
            }
        }
        ModelGraph::from_parts(layers, params, self.input_shape)
    }

    /// Trainable parameter slices in declaration order: conv weights then
    /// bias; batch-norm gamma then beta.
    pub fn param_slices(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for p in &self.params {
            match p {
                LayerParams::None => {}
                LayerParams::Conv(k) => {
                    out.push(k.weights.data());
                    if let Some(b) = &k.bias {
                        out.push(b.as_slice());
                    }
                }
                LayerParams::BatchNorm(bn) => {
                    out.push(bn.gamma.as_slice());
                    out.push(bn.beta.as_slice());
                }
            }
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for p in &mut self.params {
            match p {
                LayerParams::None => {}
                LayerParams::Conv(k) => {
                    out.push(k.weights.data_mut());
                    if let Some(b) = &mut k.bias {
                        out.push(b.as_mut_slice());
                    }
                }
                LayerParams::BatchNorm(bn) => {
                    out.push(bn.gamma.as_mut_slice());
                    out.push(bn.beta.as_mut_slice());
                }
            }
        }
        out
    }
}

/// Builds a graph layer by layer, tracking the channel chain.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    input_shape: (usize, usize, usize),
    channels: usize,
    layers: Vec<LayerSpec>,
}

impl GraphBuilder {
    pub fn new(in_channels: usize, h: usize, w: usize) -> Self {
        GraphBuilder {
            input_shape: (in_channels, h, w),
            channels: in_channels,
            layers: Vec::new(),
        }
    }

    fn push(mut self, kind: LayerKind, out_channels: usize, has_bias: bool) -> Self {
        self.layers.push(LayerSpec {
            kind,
            in_channels: self.channels,
            out_channels,
            has_bias,
        });
        self.channels = out_channels;
        self
    }

    pub fn conv3x3(self, out: usize) -> Self {
        self.push(LayerKind::Conv3x3, out, false)
    }

    pub fn conv1x1(self, out: usize) -> Self {
        self.push(LayerKind::Conv1x1, out, true)
    }

    pub fn batchnorm(self) -> Self {
        let c = self.channels;
        self.push(LayerKind::BatchNorm, c, false)
    }

    pub fn relu(self) -> Self {
        let c = self.channels;
        self.push(LayerKind::ReLU, c, false)
    }

    pub fn maxpool(self) -> Self {
        let c = self.channels;
        self.push(LayerKind::MaxPool2x2, c, false)
    }

    pub fn upsample(self, factor: usize, mode: UpsampleMode) -> Self {
        let c = self.channels;
        self.push(LayerKind::Upsample { factor, mode }, c, false)
    }

    pub fn argmax(self) -> Self {
        let c = self.channels;
        self.push(LayerKind::Argmax, c, false)
    }

    /// Two 3×3 convolutions, each followed by batch norm and ReLU.
    pub fn dconv(self, out: usize) -> Self {
        self.conv3x3(out).batchnorm().relu().conv3x3(out).batchnorm().relu()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Kaiming-uniform (fan-in) convolution weights, PyTorch-style bias
    /// init, identity batch norm.
    pub fn build<T: Real>(self, seed: u64) -> Result<ModelGraph<T>> {
        let params = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| -> Result<LayerParams<T>> {
                Ok(match l.kind {
                    LayerKind::Conv3x3 | LayerKind::Conv1x1 => {
                        let k = l.kernel_size().unwrap_or(1);
                        let fan_in = (l.in_channels * k * k) as f64;
                        let bound = num_traits::Float::sqrt(6.0 / fan_in);
                        let mut r = rng::stream(seed, &[0x1417, i as u64]);
                        let w = Tensor::from_fn(Shape::new(l.out_channels, l.in_channels, k, k), |_, _, _, _| {
                            T::from_f64(r.gen_range(-bound..bound))
                        });
                        let bias = l.has_bias.then(|| {
                            let bb = 1.0 / num_traits::Float::sqrt(fan_in);
                            (0..l.out_channels).map(|_| T::from_f64(r.gen_range(-bb..bb))).collect()
                        });
                        LayerParams::Conv(ConvKernel::new(w, bias)?)
                    }
                    LayerKind::BatchNorm => LayerParams::BatchNorm(BatchNormParams::identity(l.out_channels)),
                    _ => LayerParams::None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ModelGraph::from_parts(self.layers, params, self.input_shape)
    }
}

/// Layer sequence of TinyIceNet: four double-conv blocks with 16, 32, 64 and
/// 64 filters, max pooling after the first three, ×8 nearest upsampling, a
/// 1×1 head and argmax.
pub fn tinyicenet_builder(num_classes: usize, h: usize, w: usize) -> GraphBuilder {
    GraphBuilder::new(2, h, w)
        .dconv(16)
        .maxpool()
        .dconv(32)
        .maxpool()
        .dconv(64)
        .maxpool()
        .dconv(64)
        .upsample(8, UpsampleMode::Nearest)
        .conv1x1(num_classes)
        .argmax()
}

/// The default 2×512×512 TinyIceNet with `num_classes` outputs.
pub fn build_tinyicenet<T: Real>(num_classes: usize, seed: u64) -> Result<ModelGraph<T>> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument("num_classes must be >= 2"));
    }
    tinyicenet_builder(num_classes, 512, 512).build(seed)
}
