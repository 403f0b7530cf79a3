//! Synthetic SAR-like scenes: nearest-site ice floes with per-class backscatter
//! and multiplicative speckle.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::scene::RawScene;
use crate::{Error, Result, IGNORE_LABEL};

/// Number of looks of the gamma-distributed speckle.
const SPECKLE_LOOKS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGenParams {
    pub height: usize,
    pub width: usize,
    /// Class codes drawn from `0..num_classes`.
    pub num_classes: usize,
    /// Inclusive range of floe (site) counts per scene.
    pub floe_count_range: (usize, usize),
    pub hh_means: Vec<f32>,
    pub hv_means: Vec<f32>,
    /// 0 disables speckle; 1 applies full unit-mean gamma speckle.
    pub speckle_strength: f32,
    pub border_mask_width: usize,
    pub nan_probability: f64,
}

impl SceneGenParams {
    /// Six stage-of-development classes whose (HH, HV) means sit on the
    /// vertices of a regular hexagon, so each class is linearly separable per
    /// pixel when noiseless.
    pub fn noiseless(size: usize) -> Self {
        let classes = 6;
        let (hh_means, hv_means) = (0..classes)
            .map(|k| {
                let a = core::f32::consts::PI * 2.0 * k as f32 / classes as f32;
                (0.7 * a.cos(), 0.7 * a.sin())
            })
            .unzip();
        SceneGenParams {
            height: size,
            width: size,
            num_classes: classes,
            floe_count_range: (2, 4),
            hh_means,
            hv_means,
            speckle_strength: 0.0,
            border_mask_width: 2,
            nan_probability: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::InvalidConfig(m));
        if self.num_classes == 0 || self.num_classes > 255 {
            return bad(format!("num_classes {} outside 1..=255", self.num_classes));
        }
        if self.hh_means.len() < self.num_classes || self.hv_means.len() < self.num_classes {
            return bad(format!("need {} class means per channel", self.num_classes));
        }
        if self.hh_means.iter().chain(&self.hv_means).any(|m| !(-1.0..=1.0).contains(m)) {
            return bad("class means must lie in [-1, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.nan_probability) || !(0.0..=1.0).contains(&self.speckle_strength) {
            return bad("probabilities and speckle strength must lie in [0, 1]".into());
        }
        let (lo, hi) = self.floe_count_range;
        if lo == 0 || hi < lo {
            return bad(format!("floe count range ({lo}, {hi}) must be nonempty and start at 1 or more"));
        }
        if self.height == 0 || self.width == 0 {
            return bad("scene dims must be positive".into());
        }
        Ok(())
    }
}

/// Unit-mean gamma variate with `SPECKLE_LOOKS` looks.
fn speckle<R: Rng + ?Sized>(rng: &mut R) -> f32 {
    let mut s = 0.0f64;
    for _ in 0..SPECKLE_LOOKS {
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        s -= u.ln();
    }
    (s / SPECKLE_LOOKS as f64) as f32
}

pub fn synth_scene<R: Rng + ?Sized>(params: &SceneGenParams, rng: &mut R, id: &str) -> Result<RawScene> {
    params.validate()?;
    let (h, w) = (params.height, params.width);
    let (lo, hi) = params.floe_count_range;
    let sites: Vec<(f64, f64, u8)> = (0..rng.gen_range(lo..=hi))
        .map(|_| {
            (
                rng.gen_range(0.0..h as f64),
                rng.gen_range(0.0..w as f64),
                rng.gen_range(0..params.num_classes) as u8,
            )
        })
        .collect();
    let mut labels = vec![0u8; h * w];
    let mut hh = vec![0.0f32; h * w];
    let mut hv = vec![0.0f32; h * w];
    let b = params.border_mask_width;
    for y in 0..h {
        for x in 0..w {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let mut best = (f64::INFINITY, 0u8);
            for &(sy, sx, c) in &sites {
                let d = (py - sy) * (py - sy) + (px - sx) * (px - sx);
                if d < best.0 {
                    best = (d, c);
                }
            }
            let class = best.1 as usize;
            let i = y * w + x;
            let mut sample = |mean: f32| {
                let v = if params.speckle_strength > 0.0 {
                    mean * (1.0 + params.speckle_strength * (speckle(rng) - 1.0))
                } else {
                    mean
                };
                let v = v.clamp(-1.0, 1.0);
                if params.nan_probability > 0.0 && rng.gen_bool(params.nan_probability) {
                    f32::NAN
                } else {
                    v
                }
            };
            hh[i] = sample(params.hh_means[class]);
            hv[i] = sample(params.hv_means[class]);
            let in_border = y < b || x < b || y + b >= h || x + b >= w;
            labels[i] = if in_border { IGNORE_LABEL } else { best.1 };
        }
    }
    Ok(RawScene {
        id: id.into(),
        height: h,
        width: w,
        hh,
        hv,
        labels,
    })
}
