//! Three-level feature/uncertainty pyramid and the weighting hook.
//!
//! Levels are indexed coarse to fine: 0 at 1/4 scale, 1 at 1/2, 2 at full
//! resolution. Coarser levels are built by a sigma = 1 px Gaussian blur
//! followed by 2x2 block decimation, which keeps the half-pixel
//! pixel-center convention of [`crate::camera::Intrinsics::level`] exact.

use crate::error::{Error, Result};
use crate::image::{FeatureMap, UncertaintyMap};

/// Pyramid level count.
pub const LEVELS: usize = 3;

/// Blur kernel radius (3 sigma at sigma = 1).
const BLUR_RADIUS: usize = 3;

/// Gain on the local variance estimate feeding the uncertainty hook.
const NOISE_WEIGHT_SCALE: f64 = 100.0;

/// Feature and confidence maps at 1/4, 1/2 and full scale.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    levels: Vec<(FeatureMap, UncertaintyMap)>,
}

impl FeaturePyramid {
    pub fn feature(&self, level: usize) -> &FeatureMap {
        &self.levels[level].0
    }

    pub fn uncertainty(&self, level: usize) -> &UncertaintyMap {
        &self.levels[level].1
    }

    pub fn channels(&self) -> usize {
        self.levels[0].0.channels
    }
}

fn gaussian_kernel() -> [f64; 2 * BLUR_RADIUS + 1] {
    let mut k = [0.0; 2 * BLUR_RADIUS + 1];
    let mut sum = 0.0;
    for (i, slot) in k.iter_mut().enumerate() {
        let d = i as f64 - BLUR_RADIUS as f64;
        *slot = (-0.5 * d * d).exp();
        sum += *slot;
    }
    for slot in &mut k {
        *slot /= sum;
    }
    k
}

/// Separable Gaussian blur with clamped borders.
pub(crate) fn blur(map: &FeatureMap) -> FeatureMap {
    let kernel = gaussian_kernel();
    let (w, h, c) = (map.width, map.height, map.channels);
    let mut horiz = FeatureMap::zeros(w, h, c);
    for y in 0..h {
        for x in 0..w {
            for (i, kv) in kernel.iter().enumerate() {
                let sx = (x as isize + i as isize - BLUR_RADIUS as isize).clamp(0, w as isize - 1) as usize;
                let src = map.pixel(sx, y);
                let dst = horiz.pixel_mut(x, y);
                for ch in 0..c {
                    dst[ch] += kv * src[ch];
                }
            }
        }
    }
    let mut vert = FeatureMap::zeros(w, h, c);
    for y in 0..h {
        for x in 0..w {
            for (i, kv) in kernel.iter().enumerate() {
                let sy = (y as isize + i as isize - BLUR_RADIUS as isize).clamp(0, h as isize - 1) as usize;
                let src = horiz.pixel(x, sy);
                let dst = vert.pixel_mut(x, y);
                for ch in 0..c {
                    dst[ch] += kv * src[ch];
                }
            }
        }
    }
    vert
}

/// 2x2 block mean; halves both dimensions.
fn decimate(map: &FeatureMap) -> FeatureMap {
    let (w, h, c) = (map.width / 2, map.height / 2, map.channels);
    let mut out = FeatureMap::zeros(w, h, c);
    for y in 0..h {
        for x in 0..w {
            let p00 = map.pixel(2 * x, 2 * y);
            let p10 = map.pixel(2 * x + 1, 2 * y);
            let p01 = map.pixel(2 * x, 2 * y + 1);
            let p11 = map.pixel(2 * x + 1, 2 * y + 1);
            let dst = out.pixel_mut(x, y);
            for ch in 0..c {
                dst[ch] = 0.25 * (p00[ch] + p10[ch] + p01[ch] + p11[ch]);
            }
        }
    }
    out
}

/// Photometric-noise confidence for one level: per-pixel squared residual
/// against the 3x3 box mean, pooled by the median over the image, mapped
/// to `1 / (1 + scale * var)` and applied uniformly.
///
/// The pooling matters: a per-pixel weight would track the signal's own
/// gradients and reward poses that park anchors in low-texture regions.
fn noise_uncertainty(map: &FeatureMap) -> UncertaintyMap {
    let (w, h, c) = (map.width, map.height, map.channels);
    let mut local_var = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut mean = vec![0.0; c];
            let mut count = 0.0;
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    let sx = (x as i32 + dx).clamp(0, w as i32 - 1) as usize;
                    let sy = (y as i32 + dy).clamp(0, h as i32 - 1) as usize;
                    let p = map.pixel(sx, sy);
                    for ch in 0..c {
                        mean[ch] += p[ch];
                    }
                    count += 1.0;
                }
            }
            for m in &mut mean {
                *m /= count;
            }
            let p = map.pixel(x, y);
            let var: f64 = (0..c).map(|ch| (p[ch] - mean[ch]).powi(2)).sum::<f64>() / c as f64;
            local_var.push(var);
        }
    }
    local_var.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = local_var[local_var.len() / 2];
    let weight = 1.0 / (1.0 + NOISE_WEIGHT_SCALE * median);
    UncertaintyMap::from_values(w, h, vec![weight; w * h])
}

/// Builds the three-level pyramid from a full-resolution appearance map.
///
/// With `estimate_uncertainty` false every confidence is 1; with it true
/// (degraded query renders) the local noise-variance heuristic runs per
/// level.
pub fn build_pyramid(appearance: &FeatureMap, estimate_uncertainty: bool) -> Result<FeaturePyramid> {
    if appearance.width % 4 != 0 || appearance.height % 4 != 0 {
        return Err(Error::BadDimensions(format!(
            "{}x{} not divisible by 4",
            appearance.width, appearance.height
        )));
    }
    let fine = appearance.clone();
    let mid = decimate(&blur(&fine));
    let coarse = decimate(&blur(&mid));
    let weight = |m: &FeatureMap| {
        if estimate_uncertainty {
            noise_uncertainty(m)
        } else {
            UncertaintyMap::uniform(m.width, m.height)
        }
    };
    let levels = vec![
        (weight(&coarse), coarse),
        (weight(&mid), mid),
        (weight(&fine), fine),
    ]
    .into_iter()
    .map(|(u, f)| (f, u))
    .collect();
    Ok(FeaturePyramid { levels })
}

/// Joint confidence of a query/reference pair (product rule).
pub fn joint_weight(wq: f64, wr: f64) -> f64 {
    debug_assert!(wq > 0.0 && wq <= 1.0 && wr > 0.0 && wr <= 1.0);
    wq * wr
}
