//! Streaming engine against the integer reference and an independent
//! per-pixel dot-product oracle.

use rand::Rng;
use tinyicenet_core::dataflow::{cycle_estimate, fixed_conv_ref, required_acc_bits, rescale, stream_conv, DataflowConfig, QuantizedConv, Variant};
use tinyicenet_core::model::{LayerKind, LayerSpec};
use tinyicenet_core::quant::{QuantParams, ScaleMode};
use tinyicenet_core::{rng, FixedFormat, FixedTensor, Shape, Tensor};

const UFS: [usize; 5] = [1, 2, 4, 8, 16];

struct Case {
    input: FixedTensor,
    conv: QuantizedConv,
    acc_bits: u32,
}

fn random_case<R: Rng>(r: &mut R, k: usize) -> Case {
    let act = FixedFormat::ACTIVATION_DEFAULT;
    let wbits = r.gen_range(4..=8);
    let (c_in, c_out) = (r.gen_range(1..=16), r.gen_range(1..=9));
    let (h, w) = (r.gen_range(1..=10), r.gen_range(1..=10));
    let input = FixedTensor::new(
        Tensor::from_fn(Shape::new(r.gen_range(1..=2), c_in, h, w), |_, _, _, _| r.gen_range(act.min()..=act.max())),
        act,
    )
    .unwrap();
    let qp = QuantParams::new(wbits, 2f64.powi(-r.gen_range(3..=8)), ScaleMode::PowerOfTwo).unwrap();
    let weights = Tensor::from_fn(Shape::new(c_out, c_in, k, k), |_, _, _, _| r.gen_range(-qp.qmax()..=qp.qmax()));
    let bias: Vec<f32> = (0..c_out).map(|_| r.gen_range(-4.0..4.0)).collect();
    let acc_bits = required_acc_bits(act.bits, wbits, c_in * k * k).max(32);
    let conv = QuantizedConv::from_parts(weights, r.gen_bool(0.7).then_some(&bias[..]), qp, act, acc_bits).unwrap();
    Case { input, conv, acc_bits }
}

fn configs(case: &Case, k: usize) -> Vec<DataflowConfig> {
    let wbits = case.conv.weight_qp.bits;
    let act = case.input.format();
    let mut out = Vec::new();
    for &ufi in &UFS {
        let variants: &[Variant] = if k == 1 {
            &[Variant::Standard, Variant::Pointwise]
        } else {
            &[Variant::Standard]
        };
        for &v in variants {
            out.push(DataflowConfig::new(v, ufi, 1, act, wbits));
        }
        for &ufo in &UFS {
            out.push(DataflowConfig::new(Variant::Sipo, ufi, ufo, act, wbits));
        }
    }
    for c in &mut out {
        c.acc_bits = case.acc_bits;
    }
    out
}

/// Per-pixel integer dot product with zero padding, then one rounding shift.
fn dot_oracle(case: &Case, cfg: &DataflowConfig) -> Vec<i64> {
    let x = case.input.values();
    let s = x.shape();
    let kern = &case.conv.kernel;
    let (k, co_n) = (kern.kh(), kern.out_channels());
    let pad = (k - 1) / 2;
    let shift = -case.conv.weight_qp.scale_exponent().unwrap();
    let mut out = Vec::new();
    for n in 0..s.n {
        for co in 0..co_n {
            for y in 0..s.h {
                for xx in 0..s.w {
                    let mut acc: i64 = kern.bias.as_ref().map_or(0, |b| b[co]);
                    for ci in 0..s.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (iy, ix) = ((y + ky) as isize - pad as isize, (xx + kx) as isize - pad as isize);
                                if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w {
                                    acc += kern.weights.get(co, ci, ky, kx) * x.get(n, ci, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    out.push(rescale(acc, shift, cfg.act));
                }
            }
        }
    }
    out
}

#[test]
fn all_variants_bit_exact_on_random_instances() {
    let mut r = rng::stream(0x57e4, &[]);
    for case_no in 0..100 {
        let k = if case_no % 4 == 3 { 1 } else { 3 };
        let case = random_case(&mut r, k);
        let cfgs = configs(&case, k);
        let reference = fixed_conv_ref(&cfgs[0], &case.input, &case.conv).unwrap();
        assert_eq!(
            reference.values().data(),
            &dot_oracle(&case, &cfgs[0])[..],
            "case {case_no}: reference vs dot oracle"
        );
        for cfg in &cfgs {
            let got = stream_conv(cfg, &case.input, &case.conv).unwrap();
            assert_eq!(got.output, reference, "case {case_no}: {cfg:?}");
            let s = case.input.shape();
            let layer = LayerSpec {
                kind: if k == 1 { LayerKind::Conv1x1 } else { LayerKind::Conv3x3 },
                in_channels: s.c,
                out_channels: case.conv.kernel.out_channels(),
                has_bias: false,
            };
            let model = cycle_estimate(0, &layer, (s.c, s.h, s.w), cfg).unwrap();
            assert_eq!(got.compute_cycles, model.steady_cycles * s.n as u64, "case {case_no}: cycles {cfg:?}");
        }
    }
}

#[test]
fn pointwise_64_to_7_matches_dot_product() {
    let mut r = rng::stream(0x64, &[]);
    let act = FixedFormat::ACTIVATION_DEFAULT;
    let qp = QuantParams::new(8, 2f64.powi(-6), ScaleMode::PowerOfTwo).unwrap();
    let input = FixedTensor::new(Tensor::from_fn(Shape::new(1, 64, 6, 6), |_, _, _, _| r.gen_range(-4096..=4096)), act).unwrap();
    let weights = Tensor::from_fn(Shape::new(7, 64, 1, 1), |_, _, _, _| r.gen_range(-127..=127));
    let bias: Vec<f32> = (0..7).map(|i| i as f32 * 0.25 - 0.75).collect();
    let conv = QuantizedConv::from_parts(weights, Some(&bias), qp, act, 32).unwrap();
    let case = Case { input, conv, acc_bits: 32 };
    for ufi in UFS {
        let cfg = DataflowConfig::new(Variant::Pointwise, ufi, 1, act, 8);
        let got = stream_conv(&cfg, &case.input, &case.conv).unwrap();
        assert_eq!(got.output.values().data(), &dot_oracle(&case, &cfg)[..], "uf_in {ufi}");
    }
}

#[test]
fn narrow_accumulator_is_rejected() {
    let mut r = rng::stream(9, &[]);
    let case = random_case(&mut r, 3);
    let mut cfg = DataflowConfig::new(Variant::Standard, 1, 1, case.input.format(), case.conv.weight_qp.bits);
    cfg.acc_bits = 16;
    assert!(stream_conv(&cfg, &case.input, &case.conv).is_err());
}
