#![allow(dead_code)]

use rand::Rng;
use tinyicenet_core::ops::ConvKernel;
use tinyicenet_core::{Shape, Tensor};

pub fn rand_tensor<R: Rng>(rng: &mut R, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

pub fn rand_kernel<R: Rng>(rng: &mut R, co: usize, ci: usize, k: usize, bias: bool) -> ConvKernel<f64> {
    let w = rand_tensor(rng, Shape::new(co, ci, k, k));
    let b = bias.then(|| (0..co).map(|_| rng.gen_range(-1.0..1.0)).collect());
    ConvKernel::new(w, b).unwrap()
}

/// Direct cross-correlation, summing over (ci, ky, kx) then adding the bias.
pub fn conv_oracle(x: &Tensor<f64>, k: &ConvKernel<f64>, pad: usize, stride: usize) -> Tensor<f64> {
    let s = x.shape();
    let (co_n, kh, kw) = (k.out_channels(), k.kh(), k.kw());
    let oh = (s.h + 2 * pad - kh) / stride + 1;
    let ow = (s.w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(Shape::new(s.n, co_n, oh, ow));
    for n in 0..s.n {
        for co in 0..co_n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..s.c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w {
                                    acc += k.weights.get(co, ci, ky, kx) * x.get(n, ci, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    if let Some(b) = &k.bias {
                        acc += b[co];
                    }
                    out.set(n, co, oy, ox, acc);
                }
            }
        }
    }
    out
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
