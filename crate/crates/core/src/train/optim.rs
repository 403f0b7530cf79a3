use alloc::vec;
use alloc::vec::Vec;

use crate::model::ModelGraph;
use crate::tensor::Real;
use crate::train::grad::Gradients;
use crate::{Error, Result};

/// Momentum buffers, one per trainable slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState<T> {
    pub velocity: Vec<Vec<T>>,
}

impl<T: Real> SgdState<T> {
    pub fn new(model: &ModelGraph<T>) -> Self {
        SgdState {
            velocity: model.param_slices().iter().map(|s| vec![T::zero(); s.len()]).collect(),
        }
    }
}

/// SGD with momentum and L2 weight decay added to the gradient:
/// `v <- momentum*v + (g + wd*p)`, `p <- p - lr*v`.
pub fn sgd_step<T: Real>(model: &mut ModelGraph<T>, grads: &Gradients<T>, state: &mut SgdState<T>, lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
    let mut params = model.param_slices_mut();
    if params.len() != grads.tensors.len() || params.len() != state.velocity.len() {
        return Err(Error::ShapeMismatch {
            what: "parameter slices vs gradients",
            expected: params.len(),
            found: grads.tensors.len(),
        });
    }
    let (lr, mu, wd) = (T::from_f64(lr), T::from_f64(momentum), T::from_f64(weight_decay));
    for ((p, g), v) in params.iter_mut().zip(&grads.tensors).zip(&mut state.velocity) {
        if p.len() != g.len() || p.len() != v.len() {
            return Err(Error::ShapeMismatch {
                what: "parameter slice length",
                expected: p.len(),
                found: g.len(),
            });
        }
        for ((pv, &gv), vv) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            *vv = mu * *vv + (gv + wd * *pv);
            *pv -= lr * *vv;
        }
    }
    Ok(())
}

/// Cosine annealing from `lr0` at step 0 to 0 at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::InvalidArgument("cosine schedule needs total_steps > 0"));
    }
    if step > total_steps {
        return Err(Error::InvalidArgument("cosine schedule step exceeds total_steps"));
    }
    let t = step as f64 / total_steps as f64;
    Ok(0.5 * lr0 * (1.0 + num_traits::Float::cos(core::f64::consts::PI * t)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GraphBuilder;

    fn tiny() -> ModelGraph<f64> {
        GraphBuilder::new(1, 2, 2).conv1x1(2).build(1).unwrap()
    }

    #[test]
    fn vanilla_step_and_zero_grad() {
        let mut m = tiny();
        let before: Vec<f64> = m.param_slices().concat();
        let g = Gradients {
            tensors: m.param_slices().iter().map(|s| vec![0.5; s.len()]).collect(),
        };
        let mut st = SgdState::new(&m);
        sgd_step(&mut m, &g, &mut st, 0.1, 0.0, 0.0).unwrap();
        for (a, b) in m.param_slices().concat().iter().zip(&before) {
            assert_eq!(*a, b - 0.1 * 0.5);
        }
        let mut m = tiny();
        let z = Gradients::zeros_like(&m);
        let mut st = SgdState::new(&m);
        sgd_step(&mut m, &z, &mut st, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(m.param_slices().concat(), before);
    }

    #[test]
    fn momentum_unrolls() {
        let mut m = tiny();
        let before: Vec<f64> = m.param_slices().concat();
        let g = Gradients {
            tensors: m.param_slices().iter().map(|s| vec![2.0; s.len()]).collect(),
        };
        let mut st = SgdState::new(&m);
        for _ in 0..2 {
            sgd_step(&mut m, &g, &mut st, 0.01, 0.9, 0.0).unwrap();
        }
        for (a, b) in m.param_slices().concat().iter().zip(&before) {
            assert!(((b - a) - 0.01 * 2.0 * (1.0 + 1.9)).abs() < 1e-15);
        }
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 400, 0.001).unwrap(), 0.001);
        assert!(cosine_lr(400, 400, 0.001).unwrap().abs() < 1e-18);
        assert!((cosine_lr(200, 400, 0.001).unwrap() - 0.0005).abs() < 1e-15);
        assert!(cosine_lr(0, 0, 0.001).is_err());
        assert!(cosine_lr(5, 4, 0.001).is_err());
    }
}
