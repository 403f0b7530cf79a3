//! Symmetric per-tensor weight quantization: PTQ calibration, fake
//! quantization with straight-through gradients, QAT and bitwidth sweeps.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::eval::{evaluate_model, Averaging, Segmenter};
use crate::model::{LayerKind, LayerParams, ModelGraph};
use crate::ops::ConvKernel;
use crate::scene::Scene;
use crate::tensor::{pow2, FixedFormat, Real, Tensor};
use crate::train::trainer::{train_from, train_loop, BestCheckpoint, TrainConfig, TrainOutcome};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ScaleMode {
    /// `s = max|w| / (2^(b-1) - 1)`.
    #[default]
    FloatScale,
    /// Smallest power of two `s >= max|w| / (2^(b-1) - 1)`.
    PowerOfTwo,
}

/// Symmetric quantizer: integers in `[-(2^(b-1)-1), 2^(b-1)-1]`, zero point 0,
/// round to nearest with ties away from zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    pub bits: u32,
    pub scale: f64,
    pub mode: ScaleMode,
}

fn check_bits(bits: u32) -> Result<()> {
    if (2..=32).contains(&bits) {
        Ok(())
    } else {
        Err(Error::InvalidBits(bits))
    }
}

/// `ceil(log2(r))` computed exactly against powers of two.
fn ceil_log2(r: f64) -> i32 {
    let mut k = r.log2().ceil() as i32;
    while pow2(k) < r {
        k += 1;
    }
    while pow2(k - 1) >= r {
        k -= 1;
    }
    k
}

impl QuantParams {
    pub fn new(bits: u32, scale: f64, mode: ScaleMode) -> Result<Self> {
        check_bits(bits)?;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument("quantization scale must be positive and finite"));
        }
        let qp = QuantParams { bits, scale, mode };
        if mode == ScaleMode::PowerOfTwo && qp.scale_exponent().is_none() {
            return Err(Error::InvalidArgument("power-of-two mode needs a scale of 2^k"));
        }
        Ok(qp)
    }

    /// Scale for a tensor whose largest magnitude is `max_abs`. All-zero
    /// tensors get scale 1.
    pub fn calibrate(max_abs: f64, bits: u32, mode: ScaleMode) -> Result<Self> {
        check_bits(bits)?;
        if !max_abs.is_finite() {
            return Err(Error::NonFinite { index: 0 });
        }
        let qmax = ((1i64 << (bits - 1)) - 1) as f64;
        let scale = if max_abs == 0.0 {
            1.0
        } else {
            match mode {
                ScaleMode::FloatScale => max_abs / qmax,
                ScaleMode::PowerOfTwo => pow2(ceil_log2(max_abs / qmax)),
            }
        };
        Ok(QuantParams { bits, scale, mode })
    }

    pub fn qmax(&self) -> i64 {
        (1i64 << (self.bits - 1)) - 1
    }

    pub fn quantize(&self, x: f64) -> i64 {
        let q = (x / self.scale).round();
        let m = self.qmax() as f64;
        q.clamp(-m, m) as i64
    }

    pub fn dequantize(&self, q: i64) -> f64 {
        q as f64 * self.scale
    }

    /// `k` such that `scale == 2^k`, if the scale is an exact power of two.
    pub fn scale_exponent(&self) -> Option<i32> {
        let k = ceil_log2(self.scale);
        (pow2(k) == self.scale).then_some(k)
    }

    /// Inside the clamp range the straight-through gradient passes unchanged.
    pub fn in_range(&self, x: f64) -> bool {
        (x / self.scale).abs() <= self.qmax() as f64
    }
}

pub fn quantize_slice<T: Real>(w: &[T], bits: u32, mode: ScaleMode) -> Result<(Vec<i64>, QuantParams)> {
    check_bits(bits)?;
    let mut max_abs = 0.0f64;
    for (index, v) in w.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { index });
        }
        max_abs = max_abs.max(v.as_f64().abs());
    }
    let qp = QuantParams::calibrate(max_abs, bits, mode)?;
    Ok((w.iter().map(|v| qp.quantize(v.as_f64())).collect(), qp))
}

pub fn quantize_tensor<T: Real>(w: &Tensor<T>, bits: u32, mode: ScaleMode) -> Result<(Vec<i64>, QuantParams)> {
    quantize_slice(w.data(), bits, mode)
}

pub fn dequantize_slice<T: Real>(q: &[i64], qp: &QuantParams) -> Vec<T> {
    q.iter().map(|&v| T::from_f64(qp.dequantize(v))).collect()
}

/// `dequantize(quantize(w))` under fixed parameters.
pub fn fake_quant_forward<T: Real>(w: &Tensor<T>, qp: &QuantParams) -> Tensor<T> {
    w.map(|v| T::from_f64(qp.dequantize(qp.quantize(v.as_f64()))))
}

/// Straight-through estimator: zeroes `grad` where `w` lies outside the clamp range.
pub fn ste_backward<T: Real>(w: &[T], qp: &QuantParams, grad: &mut [T]) {
    for (g, v) in grad.iter_mut().zip(w) {
        if !qp.in_range(v.as_f64()) {
            *g = T::zero();
        }
    }
}

/// Weight bitwidth and scale policy shared by PTQ, QAT and sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuantSpec {
    pub bits: u32,
    pub mode: ScaleMode,
}

impl QuantSpec {
    pub fn new(bits: u32, mode: ScaleMode) -> Result<Self> {
        check_bits(bits)?;
        Ok(QuantSpec { bits, mode })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub params: QuantParams,
    pub weights: Vec<i64>,
}

/// BN-folded model whose convolution weights are held as integers. The
/// embedded graph carries the dequantized weights and real-valued biases.
/// Optionally the input and every convolution output are also rounded to
/// `act_format` (with saturation), as the fixed-point engine would; by
/// default activations stay in floating point (weights-only quantization).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    graph: ModelGraph<f32>,
    layers: Vec<Option<QuantizedLayer>>,
    act_format: FixedFormat,
    quantize_activations: bool,
}

impl QuantizedModel {
    /// Installs the dequantized integer weights into `template` (a folded
    /// graph; its existing conv weights are replaced, biases kept).
    pub fn new(template: ModelGraph<f32>, layers: Vec<Option<QuantizedLayer>>, act_format: FixedFormat) -> Result<Self> {
        let mut graph = template;
        if layers.len() != graph.layers().len() {
            return Err(Error::ShapeMismatch {
                what: "quantized layer entries",
                expected: graph.layers().len(),
                found: layers.len(),
            });
        }
        for (i, (p, q)) in graph.params_mut().iter_mut().zip(&layers).enumerate() {
            match (p, q) {
                (LayerParams::Conv(k), Some(q)) => {
                    if q.weights.len() != k.weights.shape().len() {
                        return Err(Error::InvalidGraph {
                            layer: i,
                            reason: alloc::format!("{} quantized weights for a {}-element kernel", q.weights.len(), k.weights.shape().len()),
                        });
                    }
                    let deq = dequantize_slice(&q.weights, &q.params);
                    k.weights = Tensor::from_vec(k.weights.shape(), deq)?;
                }
                (LayerParams::Conv(_), None) | (LayerParams::BatchNorm(_), _) => {
                    return Err(Error::InvalidGraph {
                        layer: i,
                        reason: "quantized models are batch-norm folded with every conv quantized".into(),
                    })
                }
                (LayerParams::None, Some(_)) => {
                    return Err(Error::InvalidGraph {
                        layer: i,
                        reason: "quantization entry on a parameterless layer".into(),
                    })
                }
                (LayerParams::None, None) => {}
            }
        }
        Ok(QuantizedModel {
            graph,
            layers,
            act_format,
            quantize_activations: false,
        })
    }

    /// Rounds activations to `act_format` at every convolution output when `on`.
    pub fn with_activation_quantization(mut self, on: bool) -> Self {
        self.quantize_activations = on;
        self
    }

    pub fn quantizes_activations(&self) -> bool {
        self.quantize_activations
    }

    pub fn graph(&self) -> &ModelGraph<f32> {
        &self.graph
    }

    pub fn layers(&self) -> &[Option<QuantizedLayer>] {
        &self.layers
    }

    pub fn act_format(&self) -> FixedFormat {
        self.act_format
    }

    /// Logits (the activation before argmax).
    pub fn forward(&self, input: &Tensor<f32>) -> Result<Tensor<f32>> {
        if !self.quantize_activations {
            return self.graph.forward(input, None);
        }
        self.graph.check_input(input.shape())?;
        let act = self.act_format;
        let snap = |t: &Tensor<f32>| t.map(|v| act.dequantize(act.quantize(v as f64)) as f32);
        let mut x = snap(input);
        for (i, l) in self.graph.layers().iter().enumerate() {
            if matches!(l.kind, LayerKind::Argmax) {
                break;
            }
            x = self.graph.apply_layer(i, &x)?;
            if l.is_conv() {
                x = snap(&x);
            }
        }
        Ok(x)
    }

    /// Integer kernel and per-output bias of conv layer `index`.
    pub fn kernel(&self, index: usize) -> Option<(&QuantizedLayer, &ConvKernel<f32>)> {
        match (&self.layers[index], &self.graph.params()[index]) {
            (Some(q), LayerParams::Conv(k)) => Some((q, k)),
            _ => None,
        }
    }
}

impl Segmenter for QuantizedModel {
    fn segment(&self, input: &Tensor<f32>) -> Result<Tensor<u8>> {
        crate::ops::argmax_channels(&self.forward(input)?)
    }

    fn num_classes(&self) -> usize {
        self.graph.num_classes()
    }
}

/// Folds batch norm and quantizes every convolution's weights per tensor.
/// Biases stay real-valued; activations are left in floating point (the
/// fixed activation format applies inside the dataflow engine).
pub fn ptq_calibrate(model: &ModelGraph<f32>, spec: QuantSpec) -> Result<QuantizedModel> {
    let folded = model.fold_batchnorm()?;
    let layers = folded
        .params()
        .iter()
        .map(|p| match p {
            LayerParams::Conv(k) => quantize_tensor(&k.weights, spec.bits, spec.mode).map(|(weights, params)| Some(QuantizedLayer { params, weights })),
            _ => Ok(None),
        })
        .collect::<Result<Vec<_>>>()?;
    QuantizedModel::new(folded, layers, FixedFormat::ACTIVATION_DEFAULT)
}

/// Copy of `model` with every conv weight tensor fake-quantized using a scale
/// recomputed from the current weights. Returns the per-slice quantizer (for
/// the straight-through mask) aligned with [`ModelGraph::param_slices`].
pub fn fake_quant_model<T: Real>(model: &ModelGraph<T>, spec: QuantSpec) -> Result<(ModelGraph<T>, Vec<Option<QuantParams>>)> {
    let mut q = model.clone();
    let mut per_slice = Vec::new();
    for p in q.params_mut() {
        match p {
            LayerParams::Conv(k) => {
                let (_, qp) = quantize_tensor(&k.weights, spec.bits, spec.mode)?;
                k.weights = fake_quant_forward(&k.weights, &qp);
                per_slice.push(Some(qp));
                if k.bias.is_some() {
                    per_slice.push(None);
                }
            }
            LayerParams::BatchNorm(_) => per_slice.extend([None, None]),
            LayerParams::None => {}
        }
    }
    Ok((q, per_slice))
}

#[derive(Debug, Clone)]
pub struct QatOutcome {
    pub quantized: QuantizedModel,
    pub training: TrainOutcome,
    /// Float model the fine-tuning started from.
    pub float_model: ModelGraph<f32>,
}

/// Quantization-aware training. Starts from `init` (or trains a float model
/// with the same config first), folds batch norm, then fine-tunes the folded
/// graph with fake-quantized conv weights and straight-through gradients.
/// The starting point competes in checkpoint selection, and the best
/// checkpoint is exported with [`ptq_calibrate`] at the same bitwidth.
pub fn qat_train(
    config: &TrainConfig,
    spec: QuantSpec,
    init: Option<&ModelGraph<f32>>,
    train_set: &[Scene],
    val_set: &[Scene],
    on_improve: &mut dyn FnMut(&BestCheckpoint),
) -> Result<QatOutcome> {
    let float_model = match init {
        Some(m) => m.clone(),
        None => train_loop(config, train_set, val_set, &mut |_| {})?.best,
    };
    let folded = float_model.fold_batchnorm()?;
    let training = train_from(folded, config, train_set, val_set, Some(spec), true, on_improve)?;
    let quantized = ptq_calibrate(&training.best, spec)?;
    Ok(QatOutcome {
        quantized,
        training,
        float_model,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub bits: u32,
    pub f1: f64,
}

/// PTQ-calibrates `model` at each bitwidth and reports pooled F1, ascending by bits.
pub fn bitwidth_sweep(
    model: &ModelGraph<f32>,
    eval_set: &[Scene],
    bits_list: &[u32],
    mode: ScaleMode,
    averaging: Averaging,
    ignore_label: u8,
) -> Result<Vec<SweepRow>> {
    if bits_list.is_empty() {
        return Err(Error::Empty("bits list"));
    }
    let mut bits: Vec<u32> = bits_list.to_vec();
    bits.sort_unstable();
    bits.dedup();
    bits.iter()
        .map(|&b| {
            let q = ptq_calibrate(model, QuantSpec::new(b, mode)?)?;
            let report = evaluate_model(&q, eval_set, ignore_label, averaging)?;
            Ok(SweepRow {
                bits: b,
                f1: report.aggregate.value,
            })
        })
        .collect()
}
