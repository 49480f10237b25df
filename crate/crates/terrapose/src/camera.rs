//! Pinhole projection, back-projection, pyramid-level intrinsics, and the
//! analytic Jacobian blocks of the alignment chain rule.
//!
//! Conventions: integer pixel coordinates name pixel centers; the camera
//! looks down +z; poses are world-from-camera, so a world point enters the
//! camera frame through the pose inverse.

use nalgebra::{Matrix2x3, Matrix3x6, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{skew, Pose};

/// Points closer than this to the camera plane are rejected.
pub const Z_MIN: f64 = 1e-6;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

/// Sub-pixel image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        debug_assert!(fx > 0.0 && fy > 0.0);
        debug_assert!(cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64);
        Self { fx, fy, cx, cy, width, height }
    }

    /// Centered intrinsics for a square image with the given focal length.
    pub fn centered(focal: f64, width: usize, height: usize) -> Self {
        Self::new(focal, focal, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height)
    }

    /// `u = fx x/z + cx, v = fy y/z + cy`.
    pub fn project(&self, point_cam: &Vector3<f64>) -> Result<PixelPoint> {
        if point_cam.z <= Z_MIN {
            return Err(Error::BehindCamera(point_cam.z));
        }
        Ok(PixelPoint {
            u: self.fx * point_cam.x / point_cam.z + self.cx,
            v: self.fy * point_cam.y / point_cam.z + self.cy,
        })
    }

    /// `depth * K^-1 (u, v, 1)^T`; the returned point has `z = depth`.
    pub fn back_project(&self, p: &PixelPoint, depth: f64) -> Result<Vector3<f64>> {
        if depth <= 0.0 {
            return Err(Error::NonPositiveDepth(depth));
        }
        Ok(Vector3::new(
            depth * (p.u - self.cx) / self.fx,
            depth * (p.v - self.cy) / self.fy,
            depth,
        ))
    }

    /// Unit-norm camera-frame ray through a pixel center.
    pub fn ray_direction(&self, p: &PixelPoint) -> Vector3<f64> {
        Vector3::new((p.u - self.cx) / self.fx, (p.v - self.cy) / self.fy, 1.0).normalize()
    }

    /// Intrinsics at pyramid level 0 (1/4), 1 (1/2) or 2 (full).
    ///
    /// The principal point follows the pixel-center convention:
    /// `c' = (c + 0.5) * s - 0.5`.
    pub fn level(&self, level: usize) -> Result<Intrinsics> {
        assert!(level < 3, "pyramid has exactly 3 levels");
        if self.width % 4 != 0 || self.height % 4 != 0 {
            return Err(Error::BadDimensions(format!(
                "{}x{} not divisible by 4",
                self.width, self.height
            )));
        }
        let s = match level {
            0 => 0.25,
            1 => 0.5,
            _ => return Ok(*self),
        };
        Ok(Intrinsics {
            fx: self.fx * s,
            fy: self.fy * s,
            cx: (self.cx + 0.5) * s - 0.5,
            cy: (self.cy + 0.5) * s - 0.5,
            width: (self.width as f64 * s) as usize,
            height: (self.height as f64 * s) as usize,
        })
    }

    /// d(project)/d(point_cam), the 2x3 pinhole derivative.
    pub fn projection_jacobian(&self, point_cam: &Vector3<f64>) -> Result<Matrix2x3<f64>> {
        let z = point_cam.z;
        if z <= Z_MIN {
            return Err(Error::BehindCamera(z));
        }
        let z2 = z * z;
        Ok(Matrix2x3::new(
            self.fx / z,
            0.0,
            -self.fx * point_cam.x / z2,
            0.0,
            self.fy / z,
            -self.fy * point_cam.y / z2,
        ))
    }
}

/// Derivative of the camera-frame point `T^-1 P_w` with respect to the six
/// twist coordinates of the left-multiplicative world-frame update
/// `T' = exp(xi) * T`, evaluated at `xi = 0`.
///
/// Translation block `-R^T`, rotation block `R^T [P_w]x`.
pub fn pose_point_jacobian(pose: &Pose, world_point: &Vector3<f64>) -> Matrix3x6<f64> {
    let rt = pose.rotation().matrix().transpose();
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-rt));
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(rt * skew(world_point)));
    j
}
