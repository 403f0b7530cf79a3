#[allow(unused_imports)]
use num_traits::Float;

use crate::tensor::{Real, Tensor};
use crate::{Error, Result};

/// Masked mean cross-entropy over the valid pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    /// Valid (non-ignored) pixel count.
    pub valid_pixels: usize,
    pub classes: usize,
    pub value: f64,
}

fn check(logits_shape: crate::Shape, labels: &Tensor<u8>) -> Result<()> {
    let (ls, ys) = (logits_shape, labels.shape());
    if ls.c < 2 {
        return Err(Error::InvalidArgument("cross-entropy needs at least two classes"));
    }
    if (ls.n, ls.h, ls.w) != (ys.n, ys.h, ys.w) || ys.c != 1 {
        return Err(Error::ShapeMismatch {
            what: "label map vs logits",
            expected: ls.n * ls.h * ls.w,
            found: ys.len(),
        });
    }
    Ok(())
}

/// `-log softmax(logits)[label]` and the softmax vector, via max-subtraction.
fn pixel_terms(logits: &[f64], label: usize, probs: &mut [f64]) -> f64 {
    let (mut arg, mut m) = (0, logits[0]);
    for (c, &l) in logits.iter().enumerate() {
        if l > m {
            m = l;
            arg = c;
        }
    }
    let mut rest = 0.0;
    for (c, (&l, p)) in logits.iter().zip(probs.iter_mut()).enumerate() {
        *p = (l - m).exp();
        if c != arg {
            rest += *p;
        }
    }
    let denom = 1.0 + rest;
    for p in probs.iter_mut() {
        *p /= denom;
    }
    rest.ln_1p() + (m - logits[label])
}

fn masked_pass<T: Real>(logits: &Tensor<T>, labels: &Tensor<u8>, ignore_label: u8, mut grad: Option<&mut Tensor<T>>) -> Result<LossTerms> {
    let s = logits.shape();
    check(s, labels)?;
    let plane = s.plane();
    let mut pixel = alloc::vec![0.0f64; s.c];
    let mut probs = alloc::vec![0.0f64; s.c];
    let valid = labels.data().iter().filter(|&&l| l != ignore_label).count();
    let mut total = 0.0;
    for n in 0..s.n {
        let lab = labels.plane(n, 0);
        for p in 0..plane {
            let y = lab[p];
            if y == ignore_label {
                continue;
            }
            if y as usize >= s.c {
                return Err(Error::LabelOutOfRange { label: y, classes: s.c });
            }
            for c in 0..s.c {
                pixel[c] = logits.data()[s.offset(n, c, 0, 0) + p].as_f64();
            }
            total += pixel_terms(&pixel, y as usize, &mut probs);
            if let Some(g) = grad.as_deref_mut() {
                let inv_n = 1.0 / valid as f64;
                for c in 0..s.c {
                    let onehot = if c == y as usize { 1.0 } else { 0.0 };
                    g.data_mut()[s.offset(n, c, 0, 0) + p] = T::from_f64((probs[c] - onehot) * inv_n);
                }
            }
        }
    }
    Ok(LossTerms {
        valid_pixels: valid,
        classes: s.c,
        value: if valid == 0 { 0.0 } else { total / valid as f64 },
    })
}

pub fn cross_entropy_masked<T: Real>(logits: &Tensor<T>, labels: &Tensor<u8>, ignore_label: u8) -> Result<LossTerms> {
    masked_pass(logits, labels, ignore_label, None)
}

/// Loss plus its gradient with respect to the logits (zero at ignored pixels).
pub fn cross_entropy_masked_grad<T: Real>(logits: &Tensor<T>, labels: &Tensor<u8>, ignore_label: u8) -> Result<(LossTerms, Tensor<T>)> {
    let mut g = Tensor::zeros(logits.shape());
    let terms = masked_pass(logits, labels, ignore_label, Some(&mut g))?;
    Ok((terms, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Shape;
    use alloc::vec;

    #[test]
    fn confident_correct_pixel() {
        let l = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![10.0f64, -10.0]).unwrap();
        let y = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![0u8]).unwrap();
        let t = cross_entropy_masked(&l, &y, 255).unwrap();
        let expect = (1.0f64 + (-20.0f64).exp()).ln();
        assert!((t.value - expect).abs() <= 1e-6 * expect);
        assert!((t.value - 2.061_153_6e-9).abs() < 1e-15);
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let l = Tensor::filled(Shape::new(2, 7, 3, 3), 0.3f32);
        let y = Tensor::from_fn(Shape::new(2, 1, 3, 3), |_, _, yy, xx| ((yy + xx) % 7) as u8);
        let t = cross_entropy_masked(&l, &y, 255).unwrap();
        assert!((t.value - 7f64.ln()).abs() < 1e-12);
        assert!((t.value - 1.9459).abs() < 1e-4);
    }

    #[test]
    fn fully_masked_is_zero() {
        let l = Tensor::filled(Shape::new(1, 3, 2, 2), 1.0f64);
        let y = Tensor::filled(Shape::new(1, 1, 2, 2), 255u8);
        let (t, g) = cross_entropy_masked_grad(&l, &y, 255).unwrap();
        assert_eq!((t.value, t.valid_pixels), (0.0, 0));
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_label_is_error() {
        let l = Tensor::filled(Shape::new(1, 3, 1, 1), 1.0f64);
        let y = Tensor::filled(Shape::new(1, 1, 1, 1), 4u8);
        assert_eq!(cross_entropy_masked(&l, &y, 255).unwrap_err(), Error::LabelOutOfRange { label: 4, classes: 3 });
    }
}
