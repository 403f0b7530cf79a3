//! Supervised training loop with validation-based checkpoint selection.

use alloc::vec::Vec;

use rand::Rng;

use crate::eval::{evaluate_model, Averaging};
use crate::model::{tinyicenet_builder, LayerKind, ModelGraph};
use crate::quant::{fake_quant_model, ptq_calibrate, ste_backward, QuantSpec};
use crate::scene::{batch, Scene};
use crate::train::augment::augment;
use crate::train::grad::{loss_and_grad, update_running_stats, BnMode};
use crate::train::optim::{cosine_lr, sgd_step, SgdState};
use crate::{rng, Error, Result, IGNORE_LABEL};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub ignore_label: u8,
    pub seed: u64,
    pub desk_scale: bool,
    pub num_classes: usize,
    /// Running-statistics momentum for batch norm.
    pub bn_momentum: f64,
    pub augment: bool,
    pub averaging: Averaging,
}

impl TrainConfig {
    /// 200 epochs × 500 steps of 32 scenes, SGD(lr 0.001, momentum 0.9, wd 0.01).
    pub fn full(seed: u64) -> Self {
        TrainConfig {
            epochs: 200,
            steps_per_epoch: 500,
            batch_size: 32,
            lr0: 0.001,
            momentum: 0.9,
            weight_decay: 0.01,
            ignore_label: IGNORE_LABEL,
            seed,
            desk_scale: false,
            num_classes: 7,
            bn_momentum: 0.1,
            augment: true,
            averaging: Averaging::Weighted,
        }
    }

    /// CI-sized run: 8 epochs × 50 steps of 4 scenes.
    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            epochs: 8,
            steps_per_epoch: 50,
            batch_size: 4,
            desk_scale: true,
            ..TrainConfig::full(seed)
        }
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &'static str| Err(Error::InvalidArgument(m));
        if !(self.lr0 > 0.0) {
            return bad("lr0 must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight decay must be non-negative");
        }
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 {
            return bad("epochs, steps per epoch and batch size must be positive");
        }
        if self.num_classes < 2 {
            return bad("num_classes must be >= 2");
        }
        Ok(())
    }
}

/// One CSV row of the metric history (`epoch,step,loss,lr,val_f1`);
/// `val_f1` is present on the last step of each epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub val_f1: Option<f64>,
}

/// Snapshot handed to the checkpoint callback whenever validation improves.
#[derive(Debug, Clone)]
pub struct BestCheckpoint {
    pub model: ModelGraph<f32>,
    /// 0 means the starting point, before any update.
    pub epoch: usize,
    pub val_f1: f64,
    pub seed: u64,
    pub quant: Option<QuantSpec>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: ModelGraph<f32>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub final_model: ModelGraph<f32>,
    pub history: Vec<HistoryRow>,
}

fn validation_f1(model: &ModelGraph<f32>, quant: Option<QuantSpec>, val: &[Scene], config: &TrainConfig) -> Result<f64> {
    let report = match quant {
        Some(spec) => evaluate_model(&ptq_calibrate(model, spec)?, val, config.ignore_label, config.averaging)?,
        None => evaluate_model(model, val, config.ignore_label, config.averaging)?,
    };
    Ok(report.aggregate.value)
}

/// Trains a freshly initialized TinyIceNet sized to the training scenes.
pub fn train_loop(config: &TrainConfig, train_set: &[Scene], val_set: &[Scene], on_improve: &mut dyn FnMut(&BestCheckpoint)) -> Result<TrainOutcome> {
    let first = train_set.first().ok_or(Error::Empty("training set"))?;
    let model = tinyicenet_builder(config.num_classes, first.height, first.width).build(config.seed)?;
    train_from(model, config, train_set, val_set, None, false, on_improve)
}

/// Trains `model` in place of a fresh initialization. With `quant`, every
/// step runs on fake-quantized conv weights and updates the float master
/// weights through the straight-through estimator. With `evaluate_initial`,
/// the untouched starting model is validated first and competes as epoch 0.
pub fn train_from(
    mut model: ModelGraph<f32>,
    config: &TrainConfig,
    train_set: &[Scene],
    val_set: &[Scene],
    quant: Option<QuantSpec>,
    evaluate_initial: bool,
    on_improve: &mut dyn FnMut(&BestCheckpoint),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if val_set.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let has_bn = model.layers().iter().any(|l| matches!(l.kind, LayerKind::BatchNorm));
    let mut state = SgdState::new(&model);
    let total = config.total_steps();
    let mut history = Vec::with_capacity(total);
    let mut best: Option<BestCheckpoint> = None;

    if evaluate_initial {
        let f1 = validation_f1(&model, quant, val_set, config)?;
        let cp = BestCheckpoint {
            model: model.clone(),
            epoch: 0,
            val_f1: f1,
            seed: config.seed,
            quant,
        };
        on_improve(&cp);
        best = Some(cp);
    }

    for epoch in 0..config.epochs {
        for step in 0..config.steps_per_epoch {
            let global = epoch * config.steps_per_epoch + step;
            let lr = cosine_lr(global, total, config.lr0)?;
            let samples: Vec<Scene> = (0..config.batch_size)
                .map(|i| {
                    let mut r = rng::stream(config.seed, &[epoch as u64, step as u64, i as u64]);
                    let scene = &train_set[r.gen_range(0..train_set.len())];
                    if config.augment {
                        augment(scene, &mut r)
                    } else {
                        scene.clone()
                    }
                })
                .collect();
            let refs: Vec<&Scene> = samples.iter().collect();
            let (x, y) = batch(&refs)?;

            let (terms, grads, tape) = match quant {
                Some(spec) => {
                    let (fq, qps) = fake_quant_model(&model, spec)?;
                    let bn = if has_bn { BnMode::Batch } else { BnMode::Running };
                    let (t, mut g, tape) = loss_and_grad(&fq, &x, &y, config.ignore_label, bn)?;
                    for ((gs, w), qp) in g.tensors.iter_mut().zip(model.param_slices()).zip(&qps) {
                        if let Some(qp) = qp {
                            ste_backward(w, qp, gs);
                        }
                    }
                    (t, g, tape)
                }
                None => loss_and_grad(&model, &x, &y, config.ignore_label, BnMode::Batch)?,
            };
            if !terms.value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step: global });
            }
            sgd_step(&mut model, &grads, &mut state, lr, config.momentum, config.weight_decay)?;
            if has_bn {
                update_running_stats(&mut model, &tape, config.bn_momentum);
            }
            history.push(HistoryRow {
                epoch,
                step: global,
                loss: terms.value,
                lr,
                val_f1: None,
            });
        }
        let f1 = validation_f1(&model, quant, val_set, config)?;
        if let Some(last) = history.last_mut() {
            last.val_f1 = Some(f1);
        }
        if best.as_ref().is_none_or(|b| f1 > b.val_f1) {
            let cp = BestCheckpoint {
                model: model.clone(),
                epoch: epoch + 1,
                val_f1: f1,
                seed: config.seed,
                quant,
            };
            on_improve(&cp);
            best = Some(cp);
        }
    }
    let best = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best: best.model,
        best_epoch: best.epoch,
        best_val_f1: best.val_f1,
        final_model: model,
        history,
    })
}
