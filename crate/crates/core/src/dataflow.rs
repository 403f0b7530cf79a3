//! Functional, cycle-annotated simulator of a streaming line-buffer
//! convolution engine, with cycle and resource models and a greedy
//! unroll scheduler.
//!
//! Pixels stream in raster order (all channels per beat) through
//! `(kh - 1)` line buffers into a `kh × kw` window register. Zero padding is
//! injected into the stream at the borders. The compute stage consumes the
//! window in chunks of `uf_in` input channels; each chunk's products go
//! through an adder tree into an `acc_bits` accumulator. A single
//! right-shift with round-half-up and saturation converts the accumulator
//! to the activation format.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::model::{LayerKind, LayerSpec, ModelGraph};
use crate::ops::{self, ConvKernel};
use crate::quant::{QuantParams, QuantizedModel, ScaleMode};
use crate::tensor::{FixedFormat, FixedTensor, Shape, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// One output channel per compute step.
    Standard,
    /// `uf_out` output channels per compute step from the same window.
    Sipo,
    /// 1×1 convolution: channel buffering and a dot product per output.
    Pointwise,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::Sipo => "sipo",
            Variant::Pointwise => "pointwise",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "standard" => Some(Variant::Standard),
            "sipo" => Some(Variant::Sipo),
            "pointwise" => Some(Variant::Pointwise),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DataflowConfig {
    pub variant: Variant,
    pub uf_in: usize,
    /// Output unrolling; only SIPO uses values above 1.
    pub uf_out: usize,
    pub act: FixedFormat,
    pub acc_bits: u32,
    pub weight_bits: u32,
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// Accumulator width that rules out overflow for `terms` products.
pub fn required_acc_bits(act_bits: u32, weight_bits: u32, terms: usize) -> u32 {
    act_bits + weight_bits + ceil_log2(terms)
}

impl DataflowConfig {
    pub fn new(variant: Variant, uf_in: usize, uf_out: usize, act: FixedFormat, weight_bits: u32) -> Self {
        DataflowConfig {
            variant,
            uf_in,
            uf_out,
            act,
            acc_bits: 32,
            weight_bits,
        }
    }

    /// Unrolling clamped to the layer's channel counts.
    pub fn effective_uf(&self, c_in: usize, c_out: usize) -> (usize, usize) {
        let uf_out = if self.variant == Variant::Sipo { self.uf_out.min(c_out) } else { 1 };
        (self.uf_in.min(c_in).max(1), uf_out.max(1))
    }

    pub fn validate(&self, c_in: usize, kh: usize, kw: usize) -> Result<()> {
        if self.uf_in == 0 || self.uf_out == 0 {
            return Err(Error::InvalidConfig("unrolling factors must be >= 1".into()));
        }
        if self.variant != Variant::Sipo && self.uf_out != 1 {
            return Err(Error::InvalidConfig(format!("uf_out {} only valid for SIPO", self.uf_out)));
        }
        if self.variant == Variant::Pointwise && (kh, kw) != (1, 1) {
            return Err(Error::InvalidConfig(format!("pointwise variant needs a 1x1 kernel, got {kh}x{kw}")));
        }
        let need = required_acc_bits(self.act.bits, self.weight_bits, c_in * kh * kw);
        if self.acc_bits < need || self.acc_bits > 63 {
            return Err(Error::InvalidConfig(format!(
                "acc_bits {} outside [{need}, 63] for {} activation bits, {} weight bits, {} terms",
                self.acc_bits,
                self.act.bits,
                self.weight_bits,
                c_in * kh * kw
            )));
        }
        Ok(())
    }
}

/// Integer convolution: power-of-two weights plus bias in accumulator units.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedConv {
    pub kernel: ConvKernel<i64>,
    pub weight_qp: QuantParams,
}

impl QuantizedConv {
    /// Fractional bits of the weight scale `2^-frac`.
    pub fn weight_frac_bits(&self) -> Result<i32> {
        if self.weight_qp.mode != ScaleMode::PowerOfTwo {
            return Err(Error::InvalidConfig("dataflow requires power-of-two weight scales".into()));
        }
        self.weight_qp
            .scale_exponent()
            .map(|k| -k)
            .ok_or_else(|| Error::InvalidConfig("weight scale is not a power of two".into()))
    }

    /// Builds the integer kernel from integer weights and a real bias, with
    /// the bias rounded into accumulator units for inputs in `act` and
    /// clamped to a quarter of the accumulator range.
    pub fn from_parts(weights: Tensor<i64>, bias: Option<&[f32]>, weight_qp: QuantParams, act: FixedFormat, acc_bits: u32) -> Result<Self> {
        let mut q = QuantizedConv {
            kernel: ConvKernel::new(weights, None)?,
            weight_qp,
        };
        let acc = FixedFormat {
            bits: acc_bits.saturating_sub(1).max(2),
            frac_bits: act.frac_bits + q.weight_frac_bits()?,
        };
        q.kernel.bias = bias.map(|b| b.iter().map(|&v| acc.quantize(v as f64)).collect());
        Ok(q)
    }

    fn pad(&self) -> usize {
        (self.kernel.kh() - 1) / 2
    }
}

/// Accumulator to activation: one right shift with round-half-up (or an
/// exact left shift), then saturation.
pub fn rescale(acc: i64, shift: i32, out: FixedFormat) -> i64 {
    let v = if shift > 0 { (acc + (1i64 << (shift - 1))) >> shift } else { acc << (-shift) };
    out.saturate(v)
}

fn check_acc(v: i64, bits: u32) -> Result<i64> {
    let lim = 1i64 << (bits - 1);
    if v < -lim || v >= lim {
        Err(Error::AccumulatorOverflow { value: v, bits })
    } else {
        Ok(v)
    }
}

fn check_input(config: &DataflowConfig, input: &FixedTensor, conv: &QuantizedConv) -> Result<i32> {
    if input.format() != config.act {
        return Err(Error::InvalidConfig(format!(
            "input format {:?} differs from configured {:?}",
            input.format(),
            config.act
        )));
    }
    if conv.weight_qp.bits != config.weight_bits {
        return Err(Error::InvalidConfig(format!(
            "kernel has {}-bit weights, config expects {}",
            conv.weight_qp.bits, config.weight_bits
        )));
    }
    let s = input.shape();
    if s.c != conv.kernel.in_channels() {
        return Err(Error::ShapeMismatch {
            what: "stream input channels",
            expected: conv.kernel.in_channels(),
            found: s.c,
        });
    }
    config.validate(s.c, conv.kernel.kh(), conv.kernel.kw())?;
    // accumulator fractional bits minus output fractional bits
    conv.weight_frac_bits()
}

/// Fixed-point reference: exact integer `conv2d_ref`, bias, one rescale.
pub fn fixed_conv_ref(config: &DataflowConfig, input: &FixedTensor, conv: &QuantizedConv) -> Result<FixedTensor> {
    let shift = check_input(config, input, conv)?;
    let acc = ops::conv2d_ref(input.values(), &conv.kernel, conv.pad(), 1)?;
    let mut out = Vec::with_capacity(acc.shape().len());
    for &a in acc.data() {
        out.push(rescale(check_acc(a, config.acc_bits)?, shift, config.act));
    }
    FixedTensor::new(Tensor::from_vec(acc.shape(), out)?, config.act)
}

/// Row buffers plus window register of the Read-and-Buffer stage.
#[derive(Debug, Clone)]
pub struct LineBuffer {
    kh: usize,
    kw: usize,
    channels: usize,
    width: usize,
    /// `(kh - 1)` rows × width × channels, oldest row first.
    rows: Vec<i64>,
    /// `kh × kw × channels`, laid out `[ky][kx][c]`.
    window: Vec<i64>,
    row: usize,
    col: usize,
    pushed: usize,
}

impl LineBuffer {
    pub fn new(kh: usize, kw: usize, channels: usize, width: usize) -> Self {
        LineBuffer {
            kh,
            kw,
            channels,
            width,
            rows: vec![0; (kh - 1) * width * channels],
            window: vec![0; kh * kw * channels],
            row: 0,
            col: 0,
            pushed: 0,
        }
    }

    /// Accepts the next pixel (one value per channel) of the raster stream.
    pub fn push(&mut self, pixel: &[i64]) {
        let (kh, kw, c, w) = (self.kh, self.kw, self.channels, self.width);
        if self.pushed > 0 {
            self.col += 1;
            if self.col == w {
                self.col = 0;
                self.row += 1;
            }
        }
        let col = self.col;
        // shift window columns left
        for ky in 0..kh {
            let row = &mut self.window[ky * kw * c..(ky + 1) * kw * c];
            row.copy_within(c.., 0);
        }
        // new right column: buffered rows at this column, then the incoming pixel
        for ky in 0..kh - 1 {
            let src = (ky * w + col) * c;
            let dst = (ky * kw + kw - 1) * c;
            self.window[dst..dst + c].copy_from_slice(&self.rows[src..src + c]);
        }
        let dst = ((kh - 1) * kw + kw - 1) * c;
        self.window[dst..dst + c].copy_from_slice(pixel);
        // age this column of the line buffers
        for ky in 0..kh.saturating_sub(1) {
            let dst = (ky * w + col) * c;
            if ky + 1 < kh - 1 {
                let src = ((ky + 1) * w + col) * c;
                self.rows.copy_within(src..src + c, dst);
            } else {
                self.rows[dst..dst + c].copy_from_slice(pixel);
            }
        }
        self.pushed += 1;
    }

    /// Whether the window holds a complete receptive field.
    pub fn is_primed(&self) -> bool {
        self.pushed > 0 && self.row + 1 >= self.kh && self.col + 1 >= self.kw
    }

    pub fn window(&self) -> Result<&[i64]> {
        if self.is_primed() {
            Ok(&self.window)
        } else {
            Err(Error::WindowNotPrimed)
        }
    }

    /// Output coordinate of the current window.
    pub fn position(&self) -> Option<(usize, usize)> {
        self.is_primed().then(|| (self.row + 1 - self.kh, self.col + 1 - self.kw))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamOutput {
    pub output: FixedTensor,
    /// Compute-stage cycles actually issued by the simulation.
    pub compute_cycles: u64,
}

/// Streams `input` through the configured engine.
pub fn stream_conv(config: &DataflowConfig, input: &FixedTensor, conv: &QuantizedConv) -> Result<StreamOutput> {
    let shift = check_input(config, input, conv)?;
    let s = input.shape();
    let k = &conv.kernel;
    let (kh, kw, c_in, c_out) = (k.kh(), k.kw(), k.in_channels(), k.out_channels());
    let pad = conv.pad();
    let (ph, pw) = (s.h + 2 * pad, s.w + 2 * pad);
    let (oh, ow) = (ph + 1 - kh, pw + 1 - kw);
    let (uf_in, uf_out) = config.effective_uf(c_in, c_out);
    // weights reordered to the window layout [co][ky][kx][ci]
    let mut wt = vec![0i64; c_out * kh * kw * c_in];
    for co in 0..c_out {
        for ci in 0..c_in {
            for ky in 0..kh {
                for kx in 0..kw {
                    wt[((co * kh + ky) * kw + kx) * c_in + ci] = k.weights.get(co, ci, ky, kx);
                }
            }
        }
    }
    let bias = |co: usize| k.bias.as_ref().map_or(0, |b| b[co]);
    let chunks: Vec<(usize, usize)> = (0..c_in).step_by(uf_in).map(|lo| (lo, (lo + uf_in).min(c_in))).collect();
    let acc_bits = config.acc_bits;
    let mut out = vec![0i64; s.n * c_out * oh * ow];
    let oshape = Shape::new(s.n, c_out, oh, ow);
    let mut cycles = 0u64;
    let mut pixel = vec![0i64; c_in];
    let mut accs = vec![0i64; c_out];

    // adder tree over one chunk of input channels for one output channel
    let partial = |win: &[i64], co: usize, lo: usize, hi: usize| -> Result<i64> {
        let mut sum = 0i64;
        for tap in 0..kh * kw {
            let wrow = &wt[(co * kh * kw + tap) * c_in..(co * kh * kw + tap + 1) * c_in];
            let xrow = &win[tap * c_in..(tap + 1) * c_in];
            for ci in lo..hi {
                sum += wrow[ci] * xrow[ci];
            }
        }
        check_acc(sum, acc_bits)
    };

    for n in 0..s.n {
        let mut lb = LineBuffer::new(kh, kw, c_in, pw);
        let src = input.values();
        for py in 0..ph {
            for px in 0..pw {
                let (iy, ix) = (py as isize - pad as isize, px as isize - pad as isize);
                let inside = iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w;
                for (ci, p) in pixel.iter_mut().enumerate() {
                    *p = if inside { src.get(n, ci, iy as usize, ix as usize) } else { 0 };
                }
                lb.push(&pixel);
                let Some((oy, ox)) = lb.position() else { continue };
                let win = lb.window()?;
                accs.iter_mut().for_each(|a| *a = 0);
                match config.variant {
                    Variant::Standard => {
                        for (co, acc) in accs.iter_mut().enumerate() {
                            for &(lo, hi) in &chunks {
                                *acc = check_acc(*acc + partial(win, co, lo, hi)?, acc_bits)?;
                                cycles += 1;
                            }
                        }
                    }
                    Variant::Sipo => {
                        for group in (0..c_out).step_by(uf_out) {
                            for &(lo, hi) in &chunks {
                                for co in group..(group + uf_out).min(c_out) {
                                    accs[co] = check_acc(accs[co] + partial(win, co, lo, hi)?, acc_bits)?;
                                }
                                cycles += 1;
                            }
                        }
                    }
                    Variant::Pointwise => {
                        for &(lo, hi) in &chunks {
                            for (co, acc) in accs.iter_mut().enumerate() {
                                *acc = check_acc(*acc + partial(win, co, lo, hi)?, acc_bits)?;
                            }
                            cycles += 1;
                        }
                    }
                }
                for (co, &acc) in accs.iter().enumerate() {
                    let a = check_acc(acc + bias(co), acc_bits)?;
                    out[oshape.offset(n, co, oy, ox)] = rescale(a, shift, config.act);
                }
            }
        }
    }
    Ok(StreamOutput {
        output: FixedTensor::new(Tensor::from_vec(oshape, out)?, config.act)?,
        compute_cycles: cycles,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CycleEntry {
    pub layer: usize,
    pub variant: Variant,
    pub uf_in: usize,
    pub uf_out: usize,
    pub prime_cycles: u64,
    pub steady_cycles: u64,
    pub total_cycles: u64,
}

/// Cycle model of one convolution with input `(c_in, h, w)`.
pub fn cycle_estimate(layer_index: usize, layer: &LayerSpec, dims: (usize, usize, usize), config: &DataflowConfig) -> Result<CycleEntry> {
    let k = layer
        .kernel_size()
        .ok_or_else(|| Error::InvalidConfig(format!("layer {layer_index} is not a convolution")))?;
    let (c_in, h, w) = dims;
    let c_out = layer.out_channels;
    let (uf_in, uf_out) = config.effective_uf(c_in, c_out);
    let pad = layer.pad();
    let (oh, ow) = (h + 2 * pad + 1 - k, w + 2 * pad + 1 - k);
    let in_steps = ceil_div(c_in, uf_in) as u64;
    let steady = match config.variant {
        Variant::Standard => (oh * ow * c_out) as u64 * in_steps,
        Variant::Sipo => (oh * ow * ceil_div(c_out, uf_out)) as u64 * in_steps,
        Variant::Pointwise => (h * w) as u64 * in_steps,
    };
    let prime = ((k - 1) * w + k) as u64;
    Ok(CycleEntry {
        layer: layer_index,
        variant: config.variant,
        uf_in,
        uf_out,
        prime_cycles: prime,
        steady_cycles: steady,
        total_cycles: prime + steady,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CycleReport {
    pub layers: Vec<CycleEntry>,
}

impl CycleReport {
    /// Largest per-layer total: the streaming pipeline's initiation interval.
    pub fn bottleneck_cycles(&self) -> u64 {
        self.layers.iter().map(|e| e.total_cycles).max().unwrap_or(0)
    }

    pub fn fps(&self, clock_mhz: f64) -> f64 {
        match self.bottleneck_cycles() {
            0 => 0.0,
            b => clock_mhz * 1e6 / b as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ResourceEntry {
    pub layer: usize,
    pub mac_units: u64,
    pub buffer_bits: u64,
    pub weight_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ResourceReport {
    pub layers: Vec<ResourceEntry>,
    pub total: ResourceEntry,
}

/// `(layer index, config)` for every convolution of a model.
pub type LayerConfigs = Vec<(usize, DataflowConfig)>;

fn conv_layers<T: crate::Real>(model: &ModelGraph<T>, h: usize, w: usize) -> Vec<(usize, LayerSpec, (usize, usize, usize))> {
    model
        .layers()
        .iter()
        .zip(model.layer_input_dims(h, w))
        .enumerate()
        .filter(|(_, (l, _))| l.is_conv())
        .map(|(i, (l, d))| (i, *l, d))
        .collect()
}

fn config_for(configs: &[(usize, DataflowConfig)], layer: usize) -> Result<&DataflowConfig> {
    configs
        .iter()
        .find(|(i, _)| *i == layer)
        .map(|(_, c)| c)
        .ok_or_else(|| Error::InvalidConfig(format!("no dataflow config for conv layer {layer}")))
}

pub fn cycle_report<T: crate::Real>(model: &ModelGraph<T>, h: usize, w: usize, configs: &[(usize, DataflowConfig)]) -> Result<CycleReport> {
    let layers = conv_layers(model, h, w)
        .into_iter()
        .map(|(i, l, d)| cycle_estimate(i, &l, d, config_for(configs, i)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(CycleReport { layers })
}

/// Formula-level resource model: line-buffer bits `(kh-1)·width·c_in·act_bits`,
/// MAC units `uf_in·kh·kw·uf_out` (`uf_in·c_out` for the pointwise adder tree),
/// weight storage `c_out·c_in·kh·kw·weight_bits`.
pub fn resource_estimate<T: crate::Real>(model: &ModelGraph<T>, h: usize, w: usize, configs: &[(usize, DataflowConfig)]) -> Result<ResourceReport> {
    let mut report = ResourceReport::default();
    for (i, l, (c_in, _, width)) in conv_layers(model, h, w) {
        let cfg = config_for(configs, i)?;
        let k = l.kernel_size().unwrap_or(1) as u64;
        let (uf_in, uf_out) = cfg.effective_uf(c_in, l.out_channels);
        let mac_units = match cfg.variant {
            Variant::Pointwise => (uf_in * l.out_channels) as u64,
            _ => uf_in as u64 * k * k * uf_out as u64,
        };
        let e = ResourceEntry {
            layer: i,
            mac_units,
            buffer_bits: (k - 1) * (width * c_in) as u64 * cfg.act.bits as u64,
            weight_bits: (l.out_channels * c_in) as u64 * k * k * cfg.weight_bits as u64,
        };
        report.total.mac_units += e.mac_units;
        report.total.buffer_bits += e.buffer_bits;
        report.total.weight_bits += e.weight_bits;
        report.layers.push(e);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub configs: LayerConfigs,
    pub report: CycleReport,
    /// Unroll budget consumed: Σ uf_in·uf_out.
    pub budget_used: usize,
}

/// Minimal mapping: Standard (Pointwise for 1×1) with no unrolling and an
/// accumulator wide enough for the layer.
pub fn minimal_configs<T: crate::Real>(model: &ModelGraph<T>, act: FixedFormat, weight_bits: u32) -> LayerConfigs {
    let (_, h, w) = model.input_shape();
    conv_layers(model, h, w)
        .into_iter()
        .map(|(i, l, (c_in, _, _))| {
            let k = l.kernel_size().unwrap_or(1);
            let variant = if k == 1 { Variant::Pointwise } else { Variant::Standard };
            let mut cfg = DataflowConfig::new(variant, 1, 1, act, weight_bits);
            cfg.acc_bits = cfg.acc_bits.max(required_acc_bits(act.bits, weight_bits, c_in * k * k));
            (i, cfg)
        })
        .collect()
}

/// Greedy bottleneck-first allocation of unrolling under `uf_budget`: the
/// slowest layer doubles `uf_in` until it covers all input channels, then
/// switches to SIPO and doubles `uf_out`. Stops when the bottleneck cannot be
/// improved within the remaining budget.
pub fn schedule_pipeline<T: crate::Real>(model: &ModelGraph<T>, h: usize, w: usize, uf_budget: usize, act: FixedFormat, weight_bits: u32) -> Result<Schedule> {
    let convs = conv_layers(model, h, w);
    if uf_budget < convs.len() {
        return Err(Error::InvalidConfig(format!("uf budget {uf_budget} below the {} conv layers", convs.len())));
    }
    let mut configs = minimal_configs(model, act, weight_bits);
    let cost = |c: &DataflowConfig| c.uf_in * c.uf_out;
    let mut used: usize = configs.iter().map(|(_, c)| cost(c)).sum();
    loop {
        let report = cycle_report(model, h, w, &configs)?;
        // bottleneck: max total, lowest index on ties
        let Some(slot) = report
            .layers
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.total_cycles.cmp(&b.total_cycles).then(ib.cmp(ia)))
            .map(|(slot, _)| slot)
        else {
            return Ok(Schedule {
                configs,
                report,
                budget_used: used,
            });
        };
        let (_, l, (c_in, _, _)) = convs[slot];
        let cfg = configs[slot].1;
        let mut next = cfg;
        if cfg.uf_in < c_in {
            next.uf_in = (cfg.uf_in * 2).min(c_in);
        } else if cfg.variant != Variant::Pointwise && cfg.uf_out < l.out_channels {
            next.variant = Variant::Sipo;
            next.uf_out = (cfg.uf_out * 2).min(l.out_channels);
        } else {
            return Ok(Schedule {
                configs,
                report,
                budget_used: used,
            });
        }
        let extra = cost(&next) - cost(&cfg);
        if used + extra > uf_budget {
            return Ok(Schedule {
                configs,
                report,
                budget_used: used,
            });
        }
        used += extra;
        configs[slot].1 = next;
    }
}

/// Per-layer outcome of a fixed-point model run.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedRun {
    pub logits: FixedTensor,
    pub labels: Tensor<u8>,
    /// `(layer index, compute cycles)` per convolution.
    pub cycles: Vec<(usize, u64)>,
}

/// Integer kernels of every conv layer of a quantized model, with biases in
/// accumulator units for the configured activation format.
pub fn quantized_convs(model: &QuantizedModel, configs: &[(usize, DataflowConfig)]) -> Result<Vec<(usize, QuantizedConv)>> {
    let mut out = Vec::new();
    for (i, l) in model.graph().layers().iter().enumerate() {
        if !l.is_conv() {
            continue;
        }
        let cfg = config_for(configs, i)?;
        let (q, k) = model
            .kernel(i)
            .ok_or_else(|| Error::InvalidConfig(format!("layer {i} has no quantized kernel")))?;
        let weights = Tensor::from_vec(k.weights.shape(), q.weights.clone())?;
        out.push((i, QuantizedConv::from_parts(weights, k.bias.as_deref(), q.params, cfg.act, cfg.acc_bits)?));
    }
    Ok(out)
}

/// Runs a quantized model entirely in fixed point. Convolutions go through
/// `stream_conv` (or the integer reference when `reference` is set);
/// ReLU, pooling and upsampling act on the integers directly.
pub fn run_fixed(model: &QuantizedModel, input: &Tensor<f32>, configs: &[(usize, DataflowConfig)], reference: bool) -> Result<FixedRun> {
    model.graph().check_input(input.shape())?;
    let convs = quantized_convs(model, configs)?;
    let first_act = configs.first().map(|(_, c)| c.act).unwrap_or(FixedFormat::ACTIVATION_DEFAULT);
    let mut x = FixedTensor::from_real(input, first_act);
    let mut cycles = Vec::new();
    for (i, l) in model.graph().layers().iter().enumerate() {
        x = match l.kind {
            LayerKind::Conv3x3 | LayerKind::Conv1x1 => {
                let cfg = config_for(configs, i)?;
                let conv = &convs.iter().find(|(j, _)| *j == i).expect("conv kernels cover conv layers").1;
                if reference {
                    fixed_conv_ref(cfg, &x, conv)?
                } else {
                    let r = stream_conv(cfg, &x, conv)?;
                    cycles.push((i, r.compute_cycles));
                    r.output
                }
            }
            LayerKind::ReLU => FixedTensor::new(x.values().map(|v| v.max(0)), x.format())?,
            LayerKind::MaxPool2x2 => FixedTensor::new(ops::maxpool2x2(x.values())?, x.format())?,
            LayerKind::Upsample { factor, .. } => FixedTensor::new(ops::upsample_nearest(x.values(), factor)?, x.format())?,
            LayerKind::Argmax => x,
            LayerKind::BatchNorm => {
                return Err(Error::InvalidGraph {
                    layer: i,
                    reason: "fixed-point runs need a batch-norm folded model".into(),
                })
            }
        };
    }
    let labels = ops::argmax_channels(x.values())?;
    Ok(FixedRun { logits: x, labels, cycles })
}
