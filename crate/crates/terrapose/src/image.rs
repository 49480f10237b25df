//! Multi-channel image grids, bilinear sampling with analytic gradients,
//! and a debug float-image dump format.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DVector, Dyn, OMatrix, U2};

use crate::error::{Error, Result};

/// Gradient matrix type: channels x 2 (d/du, d/dv).
pub type GradientMatrix = OMatrix<f64, Dyn, U2>;

/// Dense C-channel image, channel-interleaved, row-major. Integer pixel
/// coordinates name pixel centers.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    data: Vec<f64>,
}

/// Per-pixel confidence in (0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    pub width: usize,
    pub height: usize,
    values: Vec<f64>,
}

/// Per-pixel depth along the optical axis, with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

/// Index of the interpolation cell containing `x`, ties resolved toward
/// the lower-index cell, clamped so the cell is in range.
fn cell_index(x: f64, size: usize) -> usize {
    let i = (x.ceil() as isize) - 1;
    i.clamp(0, size as isize - 2) as usize
}

impl FeatureMap {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    pub fn from_fn(width: usize, height: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    m.data[(y * width + x) * channels + c] = f(x, y, c);
                }
            }
        }
        m
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let base = (y * self.width + x) * self.channels;
        &self.data[base..base + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let base = (y * self.width + x) * self.channels;
        &mut self.data[base..base + self.channels]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn in_bounds(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= self.width as f64 - 1.0 && v <= self.height as f64 - 1.0
    }

    /// Bilinear value and the analytic gradient of the bilinear surface
    /// (piecewise constant per cell) at `(u, v)`.
    pub fn sample(&self, u: f64, v: f64) -> Result<(DVector<f64>, GradientMatrix)> {
        if !self.in_bounds(u, v) {
            return Err(Error::OutOfBounds { u, v, width: self.width, height: self.height });
        }
        let mut value = DVector::zeros(self.channels);
        let mut grad_buf = vec![0.0; 2 * self.channels];
        self.sample_into(u, v, value.as_mut_slice(), Some(&mut grad_buf));
        let mut grad = GradientMatrix::zeros(self.channels);
        for c in 0..self.channels {
            grad[(c, 0)] = grad_buf[2 * c];
            grad[(c, 1)] = grad_buf[2 * c + 1];
        }
        Ok((value, grad))
    }

    /// Bilinear value only, skipping the gradient.
    pub fn sample_value(&self, u: f64, v: f64) -> Result<DVector<f64>> {
        if !self.in_bounds(u, v) {
            return Err(Error::OutOfBounds { u, v, width: self.width, height: self.height });
        }
        let mut value = DVector::zeros(self.channels);
        self.sample_into(u, v, value.as_mut_slice(), None);
        Ok(value)
    }

    /// Allocation-free bilinear sampling into caller buffers: `value` holds
    /// C channels, `grad` (when present) holds `[du, dv]` pairs per channel.
    /// The caller must have bounds-checked `(u, v)`.
    #[inline]
    pub fn sample_into(&self, u: f64, v: f64, value: &mut [f64], grad: Option<&mut [f64]>) {
        debug_assert!(self.in_bounds(u, v));
        let i = cell_index(u, self.width);
        let j = cell_index(v, self.height);
        let du = u - i as f64;
        let dv = v - j as f64;
        let p00 = self.pixel(i, j);
        let p10 = self.pixel(i + 1, j);
        let p01 = self.pixel(i, j + 1);
        let p11 = self.pixel(i + 1, j + 1);
        for c in 0..self.channels {
            let top = p00[c] * (1.0 - du) + p10[c] * du;
            let bottom = p01[c] * (1.0 - du) + p11[c] * du;
            value[c] = top * (1.0 - dv) + bottom * dv;
        }
        if let Some(grad) = grad {
            for c in 0..self.channels {
                grad[2 * c] = (p10[c] - p00[c]) * (1.0 - dv) + (p11[c] - p01[c]) * dv;
                grad[2 * c + 1] = (p01[c] - p00[c]) * (1.0 - du) + (p11[c] - p10[c]) * du;
            }
        }
    }
}

impl UncertaintyMap {
    pub fn uniform(width: usize, height: usize) -> Self {
        Self { width, height, values: vec![1.0; width * height] }
    }

    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        debug_assert!(values.iter().all(|w| *w > 0.0 && *w <= 1.0));
        Self { width, height, values }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Bilinear confidence; stays in (0, 1] because the corners do.
    pub fn sample(&self, u: f64, v: f64) -> Result<f64> {
        if u < 0.0 || v < 0.0 || u > self.width as f64 - 1.0 || v > self.height as f64 - 1.0 {
            return Err(Error::OutOfBounds { u, v, width: self.width, height: self.height });
        }
        let i = cell_index(u, self.width);
        let j = cell_index(v, self.height);
        let du = u - i as f64;
        let dv = v - j as f64;
        let top = self.at(i, j) * (1.0 - du) + self.at(i + 1, j) * du;
        let bottom = self.at(i, j + 1) * (1.0 - du) + self.at(i + 1, j + 1) * du;
        Ok(top * (1.0 - dv) + bottom * dv)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl DepthMap {
    pub fn new_invalid(width: usize, height: usize) -> Self {
        Self { width, height, values: vec![0.0; width * height], valid: vec![false; width * height] }
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, depth: f64) {
        debug_assert!(depth > 0.0);
        self.values[y * self.width + x] = depth;
        self.valid[y * self.width + x] = true;
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> Option<f64> {
        if self.valid[y * self.width + x] {
            Some(self.values[y * self.width + x])
        } else {
            None
        }
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Indices `(x, y)` of all valid pixels, row-major order.
    pub fn valid_pixels(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.valid_count());
        for y in 0..self.height {
            for x in 0..self.width {
                if self.is_valid(x, y) {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

const FLOAT_IMAGE_MAGIC: &str = "fimg1";

/// Writes a single-channel float image: three text header lines
/// (magic, `width height`, channel name), then row-major little-endian
/// f32 samples.
pub fn write_float_image(path: &Path, width: usize, height: usize, name: &str, data: &[f64]) -> Result<()> {
    debug_assert_eq!(data.len(), width * height);
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{FLOAT_IMAGE_MAGIC}")?;
    writeln!(w, "{width} {height}")?;
    writeln!(w, "{name}")?;
    for v in data {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Reads a float image written by [`write_float_image`].
pub fn read_float_image(path: &Path) -> Result<(usize, usize, String, Vec<f64>)> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim() != FLOAT_IMAGE_MAGIC {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            msg: format!("bad magic {:?}", line.trim()),
        });
    }
    line.clear();
    r.read_line(&mut line)?;
    let dims: Vec<usize> = line.split_whitespace().filter_map(|t| t.parse().ok()).collect();
    if dims.len() != 2 {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 2,
            msg: "expected `width height`".into(),
        });
    }
    line.clear();
    r.read_line(&mut line)?;
    let name = line.trim().to_string();
    let count = dims[0] * dims[1];
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok((dims[0], dims[1], name, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn integer_sample_returns_stored_value() {
        let m = FeatureMap::from_fn(8, 8, 2, |x, y, c| (x + 10 * y + 100 * c) as f64);
        let (v, _) = m.sample(3.0, 5.0).unwrap();
        assert_eq!(v[0], 53.0);
        assert_eq!(v[1], 153.0);
    }

    #[test]
    fn linear_ramp_exact_value_and_gradient() {
        let m = FeatureMap::from_fn(16, 16, 1, |x, _, _| x as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..200 {
            let u = rng.gen::<f64>() * 15.0;
            let v = rng.gen::<f64>() * 15.0;
            let (val, grad) = m.sample(u, v).unwrap();
            assert_relative_eq!(val[0], u, epsilon = 1e-12);
            assert_relative_eq!(grad[(0, 0)], 1.0, epsilon = 1e-12);
            assert_relative_eq!(grad[(0, 1)], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn affine_images_sampled_exactly() {
        // invariant: bilinear is exact on f(u, v) = a u + b v + c
        let (a, b, c) = (0.7, -1.3, 4.2);
        let m = FeatureMap::from_fn(12, 12, 1, |x, y, _| a * x as f64 + b * y as f64 + c);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..500 {
            let u = rng.gen::<f64>() * 11.0;
            let v = rng.gen::<f64>() * 11.0;
            let (val, _) = m.sample(u, v).unwrap();
            assert_relative_eq!(val[0], a * u + b * v + c, epsilon = 1e-9);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_off_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let m = FeatureMap::from_fn(32, 32, 3, |x, y, c| {
            ((x * 7 + y * 13 + c * 29) % 31) as f64 / 31.0
        });
        let h = 1e-6;
        let mut checked = 0;
        while checked < 300 {
            let u = 0.5 + rng.gen::<f64>() * 30.0;
            let v = 0.5 + rng.gen::<f64>() * 30.0;
            // stay off cell boundaries per the sampling contract
            if u.fract().min(1.0 - u.fract()) < 0.1 || v.fract().min(1.0 - v.fract()) < 0.1 {
                continue;
            }
            let (_, grad) = m.sample(u, v).unwrap();
            let up = m.sample_value(u + h, v).unwrap();
            let um = m.sample_value(u - h, v).unwrap();
            let vp = m.sample_value(u, v + h).unwrap();
            let vm = m.sample_value(u, v - h).unwrap();
            for c in 0..3 {
                assert!(((up[c] - um[c]) / (2.0 * h) - grad[(c, 0)]).abs() < 1e-6);
                assert!(((vp[c] - vm[c]) / (2.0 * h) - grad[(c, 1)]).abs() < 1e-6);
            }
            checked += 1;
        }
    }

    #[test]
    fn out_of_bounds_rejected() {
        let m = FeatureMap::zeros(8, 8, 1);
        assert!(matches!(m.sample(-0.01, 3.0), Err(Error::OutOfBounds { .. })));
        assert!(matches!(m.sample(3.0, 7.01), Err(Error::OutOfBounds { .. })));
        assert!(m.sample(7.0, 7.0).is_ok());
    }

    #[test]
    fn depth_map_validity() {
        let mut d = DepthMap::new_invalid(4, 4);
        assert_eq!(d.valid_count(), 0);
        d.set(1, 2, 7.5);
        assert_eq!(d.at(1, 2), Some(7.5));
        assert_eq!(d.at(0, 0), None);
        assert_eq!(d.valid_pixels(), vec![(1, 2)]);
    }

    #[test]
    fn float_image_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chan0.fimg");
        let data: Vec<f64> = (0..12).map(|i| i as f64 * 0.25).collect();
        write_float_image(&path, 4, 3, "chan0", &data).unwrap();
        let (w, h, name, back) = read_float_image(&path).unwrap();
        assert_eq!((w, h, name.as_str()), (4, 3, "chan0"));
        assert_eq!(back, data);
    }
}
