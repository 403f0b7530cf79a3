//! Geometric augmentation: flips, quarter-turn rotations and scaling.
//!
//! Channels are resampled bilinearly; labels always use nearest-neighbour so
//! class codes (including the ignore label) are never interpolated.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentPlan {
    pub hflip: bool,
    pub vflip: bool,
    /// Counter-clockwise quarter turns, 0..=3.
    pub quarter_turns: u8,
    /// Zoom factor in [0.8, 1.25].
    pub scale: Option<f64>,
}

pub const SCALE_RANGE: (f64, f64) = (0.8, 1.25);

impl AugmentPlan {
    /// Draws each transform independently with probability 0.5.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let hflip = rng.gen_bool(0.5);
        let vflip = rng.gen_bool(0.5);
        let quarter_turns = if rng.gen_bool(0.5) { rng.gen_range(1..=3u8) } else { 0 };
        let scale = rng.gen_bool(0.5).then(|| rng.gen_range(SCALE_RANGE.0..=SCALE_RANGE.1));
        AugmentPlan {
            hflip,
            vflip,
            quarter_turns,
            scale,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == AugmentPlan::default()
    }

    pub fn apply(&self, scene: &Scene) -> Scene {
        let mut s = scene.clone();
        if self.hflip {
            s = remap(&s, s.height, s.width, |y, x| (y, s.width - 1 - x));
        }
        if self.vflip {
            s = remap(&s, s.height, s.width, |y, x| (s.height - 1 - y, x));
        }
        // non-square scenes only admit the half turn
        let turns = if s.height == s.width { self.quarter_turns } else { self.quarter_turns & 2 };
        for _ in 0..turns {
            s = rotate_ccw(&s);
        }
        if let Some(f) = self.scale {
            s = rescale(&s, f);
        }
        s
    }
}

pub fn augment<R: Rng + ?Sized>(scene: &Scene, rng: &mut R) -> Scene {
    AugmentPlan::draw(rng).apply(scene)
}

/// Builds an `h × w` scene with `out[y][x] = src[map(y, x)]`.
fn remap(src: &Scene, h: usize, w: usize, map: impl Fn(usize, usize) -> (usize, usize)) -> Scene {
    let n = h * w;
    let (mut hh, mut hv, mut labels) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = map(y, x);
            let i = sy * src.width + sx;
            hh.push(src.hh[i]);
            hv.push(src.hv[i]);
            labels.push(src.labels[i]);
        }
    }
    Scene {
        id: src.id.clone(),
        height: h,
        width: w,
        hh,
        hv,
        labels,
    }
}

/// 90° counter-clockwise: the top-right corner moves to the top-left.
pub fn rotate_ccw(s: &Scene) -> Scene {
    let (h, w) = (s.height, s.width);
    remap(s, w, h, |y, x| (x, w - 1 - y))
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Zooms by `factor`, then center-crops or reflect-pads back to the input size.
fn rescale(s: &Scene, factor: f64) -> Scene {
    let (h, w) = (s.height, s.width);
    let sh = ((h as f64 * factor).round() as usize).max(1);
    let sw = ((w as f64 * factor).round() as usize).max(1);
    let fy = sh as f64 / h as f64;
    let fx = sw as f64 / w as f64;
    // zoomed grid, sampled lazily at the cropped/padded positions
    let oy = (sh as isize - h as isize) / 2;
    let ox = (sw as isize - w as isize) / 2;
    let n = h * w;
    let (mut hh, mut hv, mut labels) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for y in 0..h {
        let zy = reflect(y as isize + oy, sh);
        let src_y = ((zy as f64 + 0.5) / fy - 0.5).max(0.0);
        let y0 = (src_y as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let ty = (src_y - y0 as f64) as f32;
        let ny = (((zy as f64 + 0.5) / fy) as usize).min(h - 1);
        for x in 0..w {
            let zx = reflect(x as isize + ox, sw);
            let src_x = ((zx as f64 + 0.5) / fx - 0.5).max(0.0);
            let x0 = (src_x as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            let tx = (src_x - x0 as f64) as f32;
            let nx = (((zx as f64 + 0.5) / fx) as usize).min(w - 1);
            let lerp = |g: &[f32]| {
                let top = g[y0 * w + x0] * (1.0 - tx) + g[y0 * w + x1] * tx;
                let bot = g[y1 * w + x0] * (1.0 - tx) + g[y1 * w + x1] * tx;
                top * (1.0 - ty) + bot * ty
            };
            hh.push(lerp(&s.hh));
            hv.push(lerp(&s.hv));
            labels.push(s.labels[ny * w + nx]);
        }
    }
    Scene {
        id: s.id.clone(),
        height: h,
        width: w,
        hh,
        hv,
        labels,
    }
}
