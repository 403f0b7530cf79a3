//! Scenes: dual-polarized backscatter grids plus a stage-of-development label map.

use alloc::string::String;
use alloc::vec::Vec;

use crate::tensor::{Shape, Tensor};
use crate::{Error, Result, IGNORE_LABEL};

/// Unprocessed grids; channels may hold NaN and arbitrary ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct RawScene {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub hh: Vec<f32>,
    pub hv: Vec<f32>,
    pub labels: Vec<u8>,
}

/// A preprocessed sample: channels in [-1, 1] without NaN, labels in
/// `0..num_classes` or 255.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub hh: Vec<f32>,
    pub hv: Vec<f32>,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Per-channel linear min-max rescale of finite values to [-1, 1].
    #[default]
    MinMax,
    /// Values are already calibrated; clamp to [-1, 1].
    Clip,
}

fn check_dims(what: &'static str, len: usize, h: usize, w: usize) -> Result<()> {
    if len != h * w {
        return Err(Error::ShapeMismatch {
            what,
            expected: h * w,
            found: len,
        });
    }
    Ok(())
}

fn normalize_channel(values: &[f32], norm: Normalization) -> Vec<f32> {
    match norm {
        Normalization::Clip => values.iter().map(|&v| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) }).collect(),
        Normalization::MinMax => {
            let (lo, hi) = values
                .iter()
                .filter(|v| v.is_finite())
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            values
                .iter()
                .map(|&v| {
                    if !v.is_finite() {
                        // NaN becomes 0 after the rescale; infinities saturate.
                        return if v.is_nan() { 0.0 } else { v.signum() };
                    }
                    if lo == -1.0 && hi == 1.0 {
                        v
                    } else if hi > lo {
                        (2.0 * (v as f64 - lo as f64) / (hi as f64 - lo as f64) - 1.0) as f32
                    } else {
                        0.0
                    }
                })
                .collect()
        }
    }
}

/// Normalizes both channels, replaces NaN by 0 and coerces label codes outside
/// `0..num_classes` to the ignore label.
pub fn preprocess(raw: &RawScene, num_classes: usize, norm: Normalization) -> Result<Scene> {
    let (h, w) = (raw.height, raw.width);
    check_dims("HH grid", raw.hh.len(), h, w)?;
    check_dims("HV grid", raw.hv.len(), h, w)?;
    check_dims("label grid", raw.labels.len(), h, w)?;
    Ok(Scene {
        id: raw.id.clone(),
        height: h,
        width: w,
        hh: normalize_channel(&raw.hh, norm),
        hv: normalize_channel(&raw.hv, norm),
        labels: raw.labels.iter().map(|&l| if (l as usize) < num_classes { l } else { IGNORE_LABEL }).collect(),
    })
}

impl Scene {
    pub fn new(id: impl Into<String>, height: usize, width: usize, hh: Vec<f32>, hv: Vec<f32>, labels: Vec<u8>) -> Result<Self> {
        check_dims("HH grid", hh.len(), height, width)?;
        check_dims("HV grid", hv.len(), height, width)?;
        check_dims("label grid", labels.len(), height, width)?;
        Ok(Scene {
            id: id.into(),
            height,
            width,
            hh,
            hv,
            labels,
        })
    }

    /// `(1, 2, h, w)` input tensor with HH in channel 0.
    pub fn input_tensor(&self) -> Tensor<f32> {
        let mut data = Vec::with_capacity(2 * self.hh.len());
        data.extend_from_slice(&self.hh);
        data.extend_from_slice(&self.hv);
        Tensor::from_vec(Shape::new(1, 2, self.height, self.width), data).expect("scene grids share dims")
    }

    pub fn label_tensor(&self) -> Tensor<u8> {
        Tensor::from_vec(Shape::new(1, 1, self.height, self.width), self.labels.clone()).expect("scene grids share dims")
    }

    pub fn valid_pixels(&self) -> usize {
        self.labels.iter().filter(|&&l| l != IGNORE_LABEL).count()
    }

    /// Center-crops or pads (zeros, ignore labels) to `size × size`.
    pub fn center_fit(&self, size: usize) -> Scene {
        let (h, w) = (self.height, self.width);
        let oy = h as isize / 2 - size as isize / 2;
        let ox = w as isize / 2 - size as isize / 2;
        let mut out = Scene {
            id: self.id.clone(),
            height: size,
            width: size,
            hh: Vec::with_capacity(size * size),
            hv: Vec::with_capacity(size * size),
            labels: Vec::with_capacity(size * size),
        };
        for y in 0..size as isize {
            for x in 0..size as isize {
                let (sy, sx) = (y + oy, x + ox);
                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                    let i = sy as usize * w + sx as usize;
                    out.hh.push(self.hh[i]);
                    out.hv.push(self.hv[i]);
                    out.labels.push(self.labels[i]);
                } else {
                    out.hh.push(0.0);
                    out.hv.push(0.0);
                    out.labels.push(IGNORE_LABEL);
                }
            }
        }
        out
    }

    pub fn to_raw(&self) -> RawScene {
        RawScene {
            id: self.id.clone(),
            height: self.height,
            width: self.width,
            hh: self.hh.clone(),
            hv: self.hv.clone(),
            labels: self.labels.clone(),
        }
    }
}

/// Stacks scenes of identical size into an input batch and its label map.
pub fn batch(scenes: &[&Scene]) -> Result<(Tensor<f32>, Tensor<u8>)> {
    let inputs: Vec<_> = scenes.iter().map(|s| s.input_tensor()).collect();
    let labels: Vec<_> = scenes.iter().map(|s| s.label_tensor()).collect();
    Ok((Tensor::concat_batch(&inputs)?, Tensor::concat_batch(&labels)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn raw(hh: Vec<f32>, hv: Vec<f32>, labels: Vec<u8>) -> RawScene {
        RawScene {
            id: "t".into(),
            height: 1,
            width: hh.len(),
            hh,
            hv,
            labels,
        }
    }

    #[test]
    fn unit_range_channel_is_unchanged() {
        let r = raw(vec![-1.0, 0.3, 1.0, -0.2], vec![0.5, -1.0, 1.0, 1e-9], vec![0; 4]);
        let s = preprocess(&r, 7, Normalization::MinMax).unwrap();
        assert_eq!(s.hh, r.hh);
        assert_eq!(s.hv, r.hv);
    }

    #[test]
    fn rescales_and_replaces_nan() {
        let r = raw(vec![10.0, f32::NAN, 20.0, 15.0], vec![3.0; 4], vec![0; 4]);
        let s = preprocess(&r, 7, Normalization::MinMax).unwrap();
        assert_eq!(s.hh, vec![-1.0, 0.0, 1.0, 0.0]);
        assert_eq!(s.hv, vec![0.0; 4]); // degenerate constant channel
        let again = preprocess(&s.to_raw(), 7, Normalization::MinMax).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn label_coercion_table() {
        let r = raw(vec![0.0; 5], vec![0.0; 5], vec![0, 6, 7, 9, 255]);
        let s = preprocess(&r, 7, Normalization::Clip).unwrap();
        assert_eq!(s.labels, vec![0, 6, 255, 255, 255]);
        let s = preprocess(&r, 8, Normalization::Clip).unwrap();
        assert_eq!(s.labels, vec![0, 6, 7, 255, 255]);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut r = raw(vec![0.0; 4], vec![0.0; 4], vec![0; 4]);
        r.hv.pop();
        assert!(matches!(
            preprocess(&r, 7, Normalization::MinMax),
            Err(Error::ShapeMismatch { what: "HV grid", .. })
        ));
    }

    #[test]
    fn center_fit_crops_and_pads() {
        let s = Scene::new("a", 2, 2, vec![1.0, 2.0, 3.0, 4.0], vec![0.0; 4], vec![0, 1, 2, 3]).unwrap();
        let p = s.center_fit(4);
        assert_eq!(p.labels, vec![255, 255, 255, 255, 255, 0, 1, 255, 255, 2, 3, 255, 255, 255, 255, 255]);
        assert_eq!(p.center_fit(2), s);
    }
}
