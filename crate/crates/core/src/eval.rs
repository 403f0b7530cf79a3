//! Masked multi-class evaluation: confusion matrices and F1 scores.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::model::ModelGraph;
use crate::scene::Scene;
use crate::tensor::{Real, Tensor};
use crate::{Error, Result};

/// `counts[gt * classes + pred]`; rows are ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
    valid_pixels: u64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
            valid_pixels: 0,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn valid_pixels(&self) -> u64 {
        self.valid_pixels
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    pub fn false_positives(&self, c: usize) -> u64 {
        (0..self.classes).map(|g| self.get(g, c)).sum::<u64>() - self.get(c, c)
    }

    pub fn false_negatives(&self, c: usize) -> u64 {
        self.support(c) - self.get(c, c)
    }

    /// Ground-truth pixel count of class `c`.
    pub fn support(&self, c: usize) -> u64 {
        self.counts[c * self.classes..(c + 1) * self.classes].iter().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::ShapeMismatch {
                what: "confusion matrix classes",
                expected: self.classes,
                found: other.classes,
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.valid_pixels += other.valid_pixels;
        Ok(())
    }

    /// Per-class F1 from precision and recall; 0 when `P + R == 0`.
    pub fn class_f1(&self, c: usize) -> f64 {
        let tp = self.true_positives(c) as f64;
        let fp = self.false_positives(c) as f64;
        let fneg = self.false_negatives(c) as f64;
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }
}

/// Counts `(gt, pred)` pairs, skipping pixels whose ground truth is `ignore_label`.
pub fn confusion(pred: &[u8], gt: &[u8], classes: usize, ignore_label: u8) -> Result<ConfusionMatrix> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch {
            what: "prediction vs ground-truth pixels",
            expected: gt.len(),
            found: pred.len(),
        });
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&p, &g) in pred.iter().zip(gt) {
        if g == ignore_label {
            continue;
        }
        for l in [g, p] {
            if l as usize >= classes {
                return Err(Error::LabelOutOfRange { label: l, classes });
            }
        }
        cm.counts[g as usize * classes + p as usize] += 1;
        cm.valid_pixels += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Averaging {
    /// Support-weighted mean of per-class F1 over classes with support.
    #[default]
    Weighted,
    /// Unweighted mean over classes that appear in truth or prediction.
    Macro,
    /// Global TP/FP/FN pooling; equals pixel accuracy for single-label maps.
    Micro,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1Score {
    pub value: f64,
    /// Set when the matrix holds no valid pixels (value is then 0).
    pub no_valid_pixels: bool,
}

pub fn f1_score(cm: &ConfusionMatrix, averaging: Averaging) -> F1Score {
    if cm.valid_pixels == 0 {
        return F1Score {
            value: 0.0,
            no_valid_pixels: true,
        };
    }
    let value = match averaging {
        Averaging::Weighted => {
            let mut num = 0.0;
            let mut den = 0.0;
            for c in 0..cm.classes {
                let support = cm.support(c) as f64;
                if support > 0.0 {
                    num += support * cm.class_f1(c);
                    den += support;
                }
            }
            num / den
        }
        Averaging::Macro => {
            let present: Vec<usize> = (0..cm.classes).filter(|&c| cm.support(c) + cm.false_positives(c) > 0).collect();
            present.iter().map(|&c| cm.class_f1(c)).sum::<f64>() / present.len() as f64
        }
        Averaging::Micro => {
            let tp: u64 = (0..cm.classes).map(|c| cm.true_positives(c)).sum();
            tp as f64 / cm.valid_pixels as f64
        }
    };
    F1Score { value, no_valid_pixels: false }
}

pub fn f1_weighted(cm: &ConfusionMatrix) -> F1Score {
    f1_score(cm, Averaging::Weighted)
}

/// Anything that maps an input batch to a class-index map.
pub trait Segmenter {
    fn segment(&self, input: &Tensor<f32>) -> Result<Tensor<u8>>;
    fn num_classes(&self) -> usize;
}

impl<T: Real> Segmenter for ModelGraph<T> {
    fn segment(&self, input: &Tensor<f32>) -> Result<Tensor<u8>> {
        self.predict(&input.cast::<T>())
    }

    fn num_classes(&self) -> usize {
        ModelGraph::num_classes(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneScore {
    pub id: String,
    pub valid_pixels: u64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_scene: Vec<SceneScore>,
    /// F1 of the pooled (summed) confusion matrix.
    pub aggregate: F1Score,
    pub pooled: ConfusionMatrix,
}

/// Per-scene and pooled evaluation, aggregated in scene order.
pub fn evaluate_model<S: Segmenter + ?Sized>(model: &S, scenes: &[Scene], ignore_label: u8, averaging: Averaging) -> Result<EvalReport> {
    let classes = model.num_classes();
    let mut pooled = ConfusionMatrix::new(classes);
    let mut per_scene = Vec::with_capacity(scenes.len());
    for s in scenes {
        let pred = model.segment(&s.input_tensor())?;
        let cm = confusion(pred.data(), &s.labels, classes, ignore_label)?;
        per_scene.push(SceneScore {
            id: s.id.clone(),
            valid_pixels: cm.valid_pixels(),
            f1: f1_score(&cm, averaging).value,
        });
        pooled.merge(&cm)?;
    }
    Ok(EvalReport {
        per_scene,
        aggregate: f1_score(&pooled, averaging),
        pooled,
    })
}
