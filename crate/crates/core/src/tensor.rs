//! Dense rank-4 tensors in NCHW layout and the fixed-point activation format.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;
use core::ops::{AddAssign, Mul, MulAssign, SubAssign};

use num_traits::{Float, Zero};

use crate::{Error, Result};

/// Scalar types the convolution kernels accumulate in: `f32`, `f64` and `i64`.
pub trait Element: Copy + Zero + Mul<Output = Self> + AddAssign + PartialOrd + Debug + Send + Sync + 'static {}

impl<T> Element for T where T: Copy + Zero + Mul<Output = T> + AddAssign + PartialOrd + Debug + Send + Sync + 'static {}

/// Real-valued element (binary32 or binary64).
pub trait Real: Element + Float + Default + SubAssign + MulAssign {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub const fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

/// Row-major (w fastest) rank-4 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Copy> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                what: "tensor element count",
                expected: shape.len(),
                found: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.shape.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.shape.offset(n, c, y, x);
        self.data[i] = v;
    }

    /// The `h × w` plane of sample `n`, channel `c`.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Tensor::from_vec(shape, self.data)
    }

    /// Stacks samples with identical (c, h, w) along the batch axis.
    pub fn concat_batch(parts: &[Tensor<T>]) -> Result<Self> {
        let first = parts.first().ok_or(Error::Empty("batch"))?.shape;
        let mut data = Vec::with_capacity(first.len() * parts.len());
        let mut n = 0;
        for p in parts {
            let s = p.shape;
            if (s.c, s.h, s.w) != (first.c, first.h, first.w) {
                return Err(Error::ShapeMismatch {
                    what: "batch sample size",
                    expected: first.c * first.h * first.w,
                    found: s.c * s.h * s.w,
                });
            }
            n += s.n;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor {
            shape: Shape::new(n, first.c, first.h, first.w),
            data,
        })
    }
}

impl<T: Element> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor::filled(shape, T::zero())
    }
}

impl<T: Real> Tensor<T> {
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        self.map(|v| U::from_f64(v.as_f64()))
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }
}

/// Two's-complement fixed-point format with a power-of-two scale `2^-frac_bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedFormat {
    pub bits: u32,
    pub frac_bits: i32,
}

impl FixedFormat {
    /// 16-bit activations with 12 fractional bits.
    pub const ACTIVATION_DEFAULT: FixedFormat = FixedFormat { bits: 16, frac_bits: 12 };

    pub fn new(bits: u32, frac_bits: i32) -> Result<Self> {
        if !(2..=48).contains(&bits) {
            return Err(Error::InvalidArgument("fixed-point bits must be in [2, 48]"));
        }
        Ok(FixedFormat { bits, frac_bits })
    }

    #[inline]
    pub fn min(&self) -> i64 {
        -(1i64 << (self.bits - 1))
    }

    #[inline]
    pub fn max(&self) -> i64 {
        (1i64 << (self.bits - 1)) - 1
    }

    pub fn scale(&self) -> f64 {
        pow2(-self.frac_bits)
    }

    #[inline]
    pub fn saturate(&self, v: i64) -> i64 {
        v.clamp(self.min(), self.max())
    }

    /// Round to nearest (ties away from zero), then saturate.
    pub fn quantize(&self, x: f64) -> i64 {
        let scaled = (x * pow2(self.frac_bits)).round();
        if scaled >= self.max() as f64 {
            self.max()
        } else if scaled <= self.min() as f64 {
            self.min()
        } else {
            scaled as i64
        }
    }

    pub fn dequantize(&self, q: i64) -> f64 {
        q as f64 * self.scale()
    }

    pub fn contains(&self, q: i64) -> bool {
        (self.min()..=self.max()).contains(&q)
    }
}

/// Exact `2^k` for the exponent range the quantizers use.
pub fn pow2(k: i32) -> f64 {
    libm_ldexp(1.0, k)
}

fn libm_ldexp(x: f64, k: i32) -> f64 {
    // f64::powi is not available in core; repeated halving/doubling is exact for |k| < 1023.
    let mut v = x;
    if k >= 0 {
        for _ in 0..k {
            v *= 2.0;
        }
    } else {
        for _ in 0..(-k) {
            v *= 0.5;
        }
    }
    v
}

/// Integer tensor interpreted in a [`FixedFormat`].
#[derive(Debug, Clone, PartialEq)]
pub struct FixedTensor {
    values: Tensor<i64>,
    format: FixedFormat,
}

impl FixedTensor {
    pub fn new(values: Tensor<i64>, format: FixedFormat) -> Result<Self> {
        if let Some(index) = values.data().iter().position(|&q| !format.contains(q)) {
            return Err(Error::InvalidGraph {
                layer: index,
                reason: alloc::format!("value not representable in {} bits", format.bits),
            });
        }
        Ok(FixedTensor { values, format })
    }

    pub fn from_real<T: Real>(t: &Tensor<T>, format: FixedFormat) -> Self {
        FixedTensor {
            values: t.map(|v| format.quantize(v.as_f64())),
            format,
        }
    }

    pub fn to_real<T: Real>(&self) -> Tensor<T> {
        let f = self.format;
        self.values.map(|q| T::from_f64(f.dequantize(q)))
    }

    pub fn values(&self) -> &Tensor<i64> {
        &self.values
    }

    pub fn into_values(self) -> Tensor<i64> {
        self.values
    }

    pub fn format(&self) -> FixedFormat {
        self.format
    }

    pub fn shape(&self) -> Shape {
        self.values.shape()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        let err = Tensor::from_vec(Shape::new(1, 2, 2, 2), vec![0.0f32; 7]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { expected: 8, found: 7, .. }));
    }

    #[test]
    fn offsets_are_row_major() {
        let s = Shape::new(2, 3, 4, 5);
        assert_eq!(s.offset(0, 0, 0, 1), 1);
        assert_eq!(s.offset(0, 0, 1, 0), 5);
        assert_eq!(s.offset(0, 1, 0, 0), 20);
        assert_eq!(s.offset(1, 0, 0, 0), 60);
    }

    #[test]
    fn fixed_format_rounds_and_saturates() {
        let f = FixedFormat::new(8, 4).unwrap();
        assert_eq!(f.quantize(0.5), 8);
        assert_eq!(f.quantize(1.0 / 32.0), 1); // 0.5 ulp rounds away from zero
        assert_eq!(f.quantize(-1.0 / 32.0), -1);
        assert_eq!(f.quantize(100.0), 127);
        assert_eq!(f.quantize(-100.0), -128);
        assert_eq!(f.dequantize(8), 0.5);
    }

    #[test]
    fn pow2_is_exact() {
        assert_eq!(pow2(0), 1.0);
        assert_eq!(pow2(10), 1024.0);
        assert_eq!(pow2(-3), 0.125);
    }

    #[test]
    fn fixed_tensor_rejects_out_of_range() {
        let t = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0i64, 200]).unwrap();
        assert!(FixedTensor::new(t, FixedFormat::new(8, 0).unwrap()).is_err());
    }
}
