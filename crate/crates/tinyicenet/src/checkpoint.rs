//! `TIN1` checkpoints: magic, u16 version, u32-length-prefixed UTF-8 header of
//! `key=value` lines, per-layer parameter blobs in graph order, CRC-32 of
//! everything before it.
//!
//! Float blobs hold binary32 conv weights (then bias) and batch-norm gamma,
//! beta, running mean, running variance and eps. Quantized blobs hold conv
//! weights as little-endian two's-complement integers of `ceil(bits/8)` bytes,
//! followed by the binary32 bias.

use std::fmt::Write as _;
use std::path::Path;

use tinyicenet_core::eval::Segmenter;
use tinyicenet_core::model::{BatchNormParams, LayerParams};
use tinyicenet_core::ops::{ConvKernel, UpsampleMode};
use tinyicenet_core::quant::{QuantParams, QuantizedLayer, QuantizedModel, ScaleMode};
use tinyicenet_core::{FixedFormat, LayerKind, LayerSpec, ModelGraph, Shape, Tensor};

use crate::bytes::{check_sealed, crc_error, expect_magic, put_f32s, seal, Reader};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TIN1";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainingMeta {
    pub epoch: usize,
    pub val_f1: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CheckpointModel {
    Float(ModelGraph<f32>),
    Quantized(QuantizedModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: CheckpointModel,
    pub meta: TrainingMeta,
}

impl Checkpoint {
    pub fn float(model: ModelGraph<f32>, meta: TrainingMeta) -> Self {
        Checkpoint {
            model: CheckpointModel::Float(model),
            meta,
        }
    }

    pub fn quantized(model: QuantizedModel, meta: TrainingMeta) -> Self {
        Checkpoint {
            model: CheckpointModel::Quantized(model),
            meta,
        }
    }

    /// The graph (dequantized for quantized checkpoints).
    pub fn graph(&self) -> &ModelGraph<f32> {
        match &self.model {
            CheckpointModel::Float(g) => g,
            CheckpointModel::Quantized(q) => q.graph(),
        }
    }

    pub fn segmenter(&self) -> &dyn Segmenter {
        match &self.model {
            CheckpointModel::Float(g) => g,
            CheckpointModel::Quantized(q) => q,
        }
    }

    /// Fails on the first layer whose spec differs from `expected`.
    pub fn expect_layers(&self, expected: &[LayerSpec]) -> Result<()> {
        let have = self.graph().layers();
        for (i, (a, b)) in have.iter().zip(expected).enumerate() {
            if a != b {
                return Err(Error::LayerMismatch {
                    layer: i,
                    reason: format!("checkpoint has {}, expected {}", describe(a), describe(b)),
                });
            }
        }
        if have.len() != expected.len() {
            return Err(Error::LayerMismatch {
                layer: have.len().min(expected.len()),
                reason: format!("checkpoint has {} layers, expected {}", have.len(), expected.len()),
            });
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let graph = self.graph();
        let mut header = String::new();
        let (c, h, w) = graph.input_shape();
        let arch: Vec<String> = graph.layers().iter().map(describe).collect();
        let _ = writeln!(header, "arch={}", arch.join(";"));
        let _ = writeln!(header, "input={c}x{h}x{w}");
        let _ = writeln!(header, "num_classes={}", graph.num_classes());
        match &self.model {
            CheckpointModel::Float(_) => {
                let _ = writeln!(header, "dtype=float32");
            }
            CheckpointModel::Quantized(q) => {
                let _ = writeln!(header, "dtype=quantized");
                let f = q.act_format();
                let _ = writeln!(header, "act_format={}.{}", f.bits, f.frac_bits);
                let _ = writeln!(header, "act_quant={}", u8::from(q.quantizes_activations()));
                for (i, l) in q.layers().iter().enumerate() {
                    if let Some(l) = l {
                        let p = l.params;
                        let _ = writeln!(header, "quant.{i}=bits:{},mode:{},scale:{:?}", p.bits, mode_name(p.mode), p.scale);
                    }
                }
            }
        }
        let _ = writeln!(header, "epoch={}", self.meta.epoch);
        let _ = writeln!(header, "val_f1={:?}", self.meta.val_f1);
        let _ = writeln!(header, "seed={}", self.meta.seed);

        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for (i, p) in graph.params().iter().enumerate() {
            match (p, &self.model) {
                (LayerParams::Conv(k), CheckpointModel::Quantized(q)) => {
                    let ql = q.layers()[i].as_ref().expect("quantized models quantize every conv");
                    let width = int_width(ql.params.bits);
                    for &v in &ql.weights {
                        out.extend_from_slice(&v.to_le_bytes()[..width]);
                    }
                    put_f32s(&mut out, k.bias.as_deref().unwrap_or(&[]));
                }
                (LayerParams::Conv(k), _) => {
                    put_f32s(&mut out, k.weights.data());
                    put_f32s(&mut out, k.bias.as_deref().unwrap_or(&[]));
                }
                (LayerParams::BatchNorm(bn), _) => {
                    for v in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
                        put_f32s(&mut out, v);
                    }
                    put_f32s(&mut out, &[bn.eps]);
                }
                (LayerParams::None, _) => {}
            }
        }
        seal(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        expect_magic(&mut r, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let preamble = |r: &mut Reader<'_>| -> Result<(Header, usize)> {
            let len = r.u32("header length")? as usize;
            let text = std::str::from_utf8(r.take(len, "header")?).map_err(|e| Error::Header(format!("header is not UTF-8: {e}")))?;
            let header = Header::parse(text)?;
            let body = 4 + 2 + 4 + len + header.payload_len()?;
            Ok((header, body))
        };
        let (header, body) = match preamble(&mut r) {
            Ok(v) => v,
            Err(e @ (Error::Header(_) | Error::LayerMismatch { .. })) => return Err(crc_error(buf).unwrap_or(e)),
            Err(e) => return Err(e),
        };
        check_sealed(buf, body)?;
        header.read_payload(&mut r)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(Error::io(path))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&std::fs::read(path).map_err(Error::io(path))?)
    }
}

fn int_width(bits: u32) -> usize {
    bits.div_ceil(8) as usize
}

fn mode_name(m: ScaleMode) -> &'static str {
    match m {
        ScaleMode::FloatScale => "float",
        ScaleMode::PowerOfTwo => "pow2",
    }
}

pub fn parse_mode(s: &str) -> Option<ScaleMode> {
    match s {
        "float" => Some(ScaleMode::FloatScale),
        "pow2" => Some(ScaleMode::PowerOfTwo),
        _ => None,
    }
}

/// Compact layer descriptor, e.g. `conv3x3(2,16)` or `upsample(64,8,nearest)`.
pub fn describe(l: &LayerSpec) -> String {
    let (i, o) = (l.in_channels, l.out_channels);
    let bias = if l.has_bias { ",bias" } else { "" };
    match l.kind {
        LayerKind::Conv3x3 => format!("conv3x3({i},{o}{bias})"),
        LayerKind::Conv1x1 => format!("conv1x1({i},{o}{bias})"),
        LayerKind::BatchNorm => format!("bn({i})"),
        LayerKind::ReLU => format!("relu({i})"),
        LayerKind::MaxPool2x2 => format!("maxpool({i})"),
        LayerKind::Upsample { factor, mode } => {
            let m = match mode {
                UpsampleMode::Nearest => "nearest",
                UpsampleMode::Bilinear => "bilinear",
            };
            format!("upsample({i},{factor},{m})")
        }
        LayerKind::Argmax => format!("argmax({i})"),
    }
}

fn parse_layer(index: usize, s: &str) -> Result<LayerSpec> {
    let bad = || Error::LayerMismatch {
        layer: index,
        reason: format!("unparseable descriptor {s:?}"),
    };
    let (name, rest) = s.split_once('(').ok_or_else(bad)?;
    let args: Vec<&str> = rest.strip_suffix(')').ok_or_else(bad)?.split(',').collect();
    let num = |k: usize| args.get(k).and_then(|a| a.parse::<usize>().ok()).ok_or_else(bad);
    let same = |kind| -> Result<LayerSpec> {
        if args.len() != 1 {
            return Err(bad());
        }
        Ok(LayerSpec {
            kind,
            in_channels: num(0)?,
            out_channels: num(0)?,
            has_bias: false,
        })
    };
    match name {
        "conv3x3" | "conv1x1" => {
            let has_bias = match args.get(2) {
                None => false,
                Some(&"bias") => true,
                Some(_) => return Err(bad()),
            };
            if args.len() > 3 {
                return Err(bad());
            }
            Ok(LayerSpec {
                kind: if name == "conv3x3" { LayerKind::Conv3x3 } else { LayerKind::Conv1x1 },
                in_channels: num(0)?,
                out_channels: num(1)?,
                has_bias,
            })
        }
        "bn" => same(LayerKind::BatchNorm),
        "relu" => same(LayerKind::ReLU),
        "maxpool" => same(LayerKind::MaxPool2x2),
        "argmax" => same(LayerKind::Argmax),
        "upsample" => {
            let mode = match args.get(2) {
                Some(&"nearest") => UpsampleMode::Nearest,
                Some(&"bilinear") => UpsampleMode::Bilinear,
                _ => return Err(bad()),
            };
            if args.len() != 3 {
                return Err(bad());
            }
            Ok(LayerSpec {
                kind: LayerKind::Upsample { factor: num(1)?, mode },
                in_channels: num(0)?,
                out_channels: num(0)?,
                has_bias: false,
            })
        }
        _ => Err(bad()),
    }
}

struct Header {
    layers: Vec<LayerSpec>,
    input: (usize, usize, usize),
    /// `None` for float32 checkpoints.
    quant: Option<QuantHeader>,
    meta: TrainingMeta,
}

struct QuantHeader {
    act: FixedFormat,
    act_quant: bool,
    per_layer: Vec<Option<QuantParams>>,
}

impl Header {
    fn parse(text: &str) -> Result<Header> {
        let mut kv = std::collections::BTreeMap::new();
        let mut quant_lines = Vec::new();
        for line in text.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Header(format!("line without '=': {line:?}")))?;
            if let Some(i) = k.strip_prefix("quant.") {
                let i: usize = i.parse().map_err(|_| Error::Header(format!("bad quant key {k:?}")))?;
                quant_lines.push((i, v));
            } else if kv.insert(k, v).is_some() {
                return Err(Error::Header(format!("duplicate key {k:?}")));
            }
        }
        let mut get = |k: &str| kv.remove(k).ok_or_else(|| Error::Header(format!("missing key {k:?}")));
        let num = |k: &str, v: &str| v.parse::<u64>().map_err(|_| Error::Header(format!("{k}={v:?} is not an integer")));

        let arch = get("arch")?;
        let layers = arch.split(';').enumerate().map(|(i, s)| parse_layer(i, s)).collect::<Result<Vec<_>>>()?;
        let input = get("input")?;
        let dims: Vec<usize> = input.split('x').filter_map(|d| d.parse().ok()).collect();
        let &[c, h, w] = dims.as_slice() else {
            return Err(Error::Header(format!("input={input:?} is not CxHxW")));
        };
        let num_classes = num("num_classes", get("num_classes")?)? as usize;
        let dtype = get("dtype")?;
        let quant = match dtype {
            "float32" => {
                if !quant_lines.is_empty() {
                    return Err(Error::Header("quantization entries in a float32 checkpoint".into()));
                }
                None
            }
            "quantized" => {
                let act = get("act_format")?;
                let (b, f) = act.split_once('.').ok_or_else(|| Error::Header(format!("act_format={act:?}")))?;
                let act = FixedFormat::new(
                    num("act_format", b)? as u32,
                    f.parse().map_err(|_| Error::Header(format!("act_format={act:?}")))?,
                )?;
                let act_quant = match get("act_quant")? {
                    "0" => false,
                    "1" => true,
                    v => return Err(Error::Header(format!("act_quant={v:?}"))),
                };
                let mut per_layer = vec![None; layers.len()];
                for (i, v) in quant_lines {
                    let slot = per_layer.get_mut(i).ok_or_else(|| Error::LayerMismatch {
                        layer: i,
                        reason: "quantization entry beyond the last layer".into(),
                    })?;
                    *slot = Some(parse_quant(i, v)?);
                }
                Some(QuantHeader { act, act_quant, per_layer })
            }
            other => return Err(Error::Header(format!("dtype={other:?}"))),
        };
        let meta = TrainingMeta {
            epoch: num("epoch", get("epoch")?)? as usize,
            val_f1: get("val_f1")?.parse().map_err(|_| Error::Header("val_f1 is not a number".into()))?,
            seed: num("seed", get("seed")?)?,
        };
        if let Some(k) = kv.keys().next() {
            return Err(Error::Header(format!("unknown key {k:?}")));
        }
        let mut channels = c;
        for (i, l) in layers.iter().enumerate() {
            if l.in_channels != channels {
                return Err(Error::LayerMismatch {
                    layer: i,
                    reason: format!("{} follows a {channels}-channel activation", describe(l)),
                });
            }
            channels = l.out_channels;
        }
        let header = Header {
            layers,
            input: (c, h, w),
            quant,
            meta,
        };
        let produced = header.layers.last().map(|l| l.out_channels);
        if produced != Some(num_classes) {
            return Err(Error::Header(format!(
                "num_classes={num_classes} but the graph ends with {produced:?} channels"
            )));
        }
        Ok(header)
    }

    fn quant_for(&self, layer: usize) -> Result<Option<QuantParams>> {
        let Some(q) = &self.quant else { return Ok(None) };
        let l = &self.layers[layer];
        match (l.is_conv(), q.per_layer[layer]) {
            (true, Some(p)) => Ok(Some(p)),
            (true, None) => Err(Error::LayerMismatch {
                layer,
                reason: "convolution without quantization entry".into(),
            }),
            (false, Some(_)) => Err(Error::LayerMismatch {
                layer,
                reason: format!("quantization entry on {}", describe(l)),
            }),
            (false, None) => Ok(None),
        }
    }

    fn payload_len(&self) -> Result<usize> {
        let mut n = 0;
        for (i, l) in self.layers.iter().enumerate() {
            let k = l.kernel_size().unwrap_or(0);
            let weights = l.out_channels * l.in_channels * k * k;
            let bias = if l.has_bias { l.out_channels } else { 0 };
            n += match (l.kind, self.quant_for(i)?) {
                (_, Some(qp)) => weights * int_width(qp.bits) + 4 * bias,
                (LayerKind::Conv3x3 | LayerKind::Conv1x1, None) => 4 * (weights + bias),
                (LayerKind::BatchNorm, _) => 4 * (4 * l.out_channels + 1),
                _ => 0,
            };
        }
        Ok(n)
    }

    fn read_payload(self, r: &mut Reader<'_>) -> Result<Checkpoint> {
        let mut params = Vec::with_capacity(self.layers.len());
        let mut qlayers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let mismatch = |e: Error| match e {
                Error::Truncated { .. } => Error::LayerMismatch {
                    layer: i,
                    reason: "payload ends inside this layer".into(),
                },
                e => e,
            };
            let qp = self.quant_for(i)?;
            let (p, q) = match l.kind {
                LayerKind::Conv3x3 | LayerKind::Conv1x1 => {
                    let k = l.kernel_size().unwrap_or(1);
                    let shape = Shape::new(l.out_channels, l.in_channels, k, k);
                    let (weights, q) = match qp {
                        Some(qp) => {
                            let width = int_width(qp.bits);
                            let raw = r.take(shape.len() * width, "quantized weights").map_err(mismatch)?;
                            let ints = raw.chunks_exact(width).map(sign_extend).collect::<Vec<i64>>();
                            if let Some(v) = ints.iter().find(|v| v.abs() > qp.qmax()) {
                                return Err(Error::LayerMismatch {
                                    layer: i,
                                    reason: format!("integer weight {v} outside the {}-bit range", qp.bits),
                                });
                            }
                            (vec![0.0; shape.len()], Some(QuantizedLayer { params: qp, weights: ints }))
                        }
                        None => (r.f32s(shape.len(), "conv weights").map_err(mismatch)?, None),
                    };
                    let bias = if l.has_bias {
                        Some(r.f32s(l.out_channels, "conv bias").map_err(mismatch)?)
                    } else {
                        None
                    };
                    (LayerParams::Conv(ConvKernel::new(Tensor::from_vec(shape, weights)?, bias)?), q)
                }
                LayerKind::BatchNorm => {
                    let c = l.out_channels;
                    let mut v = (0..4).map(|_| r.f32s(c, "batch-norm vectors")).collect::<Result<Vec<_>>>().map_err(mismatch)?;
                    let eps = r.f32s(1, "batch-norm eps").map_err(mismatch)?[0];
                    let (running_var, running_mean, beta, gamma) = (v.pop().unwrap(), v.pop().unwrap(), v.pop().unwrap(), v.pop().unwrap());
                    (
                        LayerParams::BatchNorm(BatchNormParams {
                            gamma,
                            beta,
                            running_mean,
                            running_var,
                            eps,
                        }),
                        None,
                    )
                }
                _ => (LayerParams::None, None),
            };
            params.push(p);
            qlayers.push(q);
        }
        let graph = ModelGraph::from_parts(self.layers, params, self.input).map_err(|e| match e {
            tinyicenet_core::Error::InvalidGraph { layer, reason } => Error::LayerMismatch { layer, reason },
            e => e.into(),
        })?;
        let model = match self.quant {
            None => CheckpointModel::Float(graph),
            Some(q) => CheckpointModel::Quantized(QuantizedModel::new(graph, qlayers, q.act)?.with_activation_quantization(q.act_quant)),
        };
        Ok(Checkpoint { model, meta: self.meta })
    }
}

fn parse_quant(layer: usize, v: &str) -> Result<QuantParams> {
    let bad = |why: &str| Error::LayerMismatch {
        layer,
        reason: format!("quantization entry {v:?}: {why}"),
    };
    let mut bits = None;
    let mut mode = None;
    let mut scale = None;
    for part in v.split(',') {
        match part.split_once(':') {
            Some(("bits", b)) => bits = b.parse::<u32>().ok(),
            Some(("mode", m)) => mode = parse_mode(m),
            Some(("scale", s)) => scale = s.parse::<f64>().ok(),
            _ => return Err(bad("unknown field")),
        }
    }
    let (Some(bits), Some(mode), Some(scale)) = (bits, mode, scale) else {
        return Err(bad("needs bits, mode and scale"));
    };
    QuantParams::new(bits, scale, mode).map_err(|e| bad(&e.to_string()))
}

fn sign_extend(bytes: &[u8]) -> i64 {
    let mut buf = if bytes.last().is_some_and(|b| b & 0x80 != 0) { [0xffu8; 8] } else { [0u8; 8] };
    buf[..bytes.len()].copy_from_slice(bytes);
    i64::from_le_bytes(buf)
}
