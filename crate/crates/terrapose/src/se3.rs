//! Rigid-body poses on SE(3): exponential/logarithm maps, composition,
//! geodesic distance, and point transformation.
//!
//! A [`Pose`] stores a world-from-camera transform as an orthonormal
//! rotation plus a translation in meters. Pose increments are [`Twist`]
//! elements `(rho, phi)` with translation first; updates are applied
//! left-multiplicatively in the world frame, `T' = exp(xi) * T`, and every
//! Jacobian in the crate is derived against that convention.

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this rotation angle the exp/log trigonometric coefficients switch
/// to their Taylor forms to avoid 0/0.
const SMALL_ANGLE: f64 = 1e-8;

/// Logarithm is rejected within this margin of pi.
const NEAR_PI_MARGIN: f64 = 1e-6;

/// Rigid transform: rotation (orthonormal, det +1) plus translation in
/// meters, mapping camera-frame points into the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Rotation3<f64>,
    translation: Vector3<f64>,
}

/// se(3) increment: `rho` is the translational part (meters), `phi` the
/// rotational part (radians, axis-angle).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub rho: Vector3<f64>,
    pub phi: Vector3<f64>,
}

/// Attitude as intrinsic yaw-pitch-roll: `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
///
/// This is the single Euler convention used throughout the crate
/// (hypothesis sampling, trajectory generation, reporting).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub pitch: f64,
    pub yaw: f64,
    pub roll: f64,
}

/// Skew-symmetric cross-product matrix `[v]x`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

impl Twist {
    pub fn new(rho: Vector3<f64>, phi: Vector3<f64>) -> Self {
        Self { rho, phi }
    }

    pub fn zero() -> Self {
        Self { rho: Vector3::zeros(), phi: Vector3::zeros() }
    }

    /// Packs as a 6-vector, translation first.
    pub fn as_vector(&self) -> Vector6<f64> {
        Vector6::new(self.rho.x, self.rho.y, self.rho.z, self.phi.x, self.phi.y, self.phi.z)
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self { rho: Vector3::new(v[0], v[1], v[2]), phi: Vector3::new(v[3], v[4], v[5]) }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { rho: self.rho * s, phi: self.phi * s }
    }

    pub fn norm_sq(&self) -> f64 {
        self.rho.norm_squared() + self.phi.norm_squared()
    }

    /// SE(3) exponential map.
    pub fn exp(&self) -> Pose {
        let theta = self.phi.norm();
        let k = skew(&self.phi);
        let k2 = k * k;
        // sin(t)/t, (1-cos t)/t^2, (t - sin t)/t^3 with Taylor fallbacks.
        let (a, b, c) = if theta < SMALL_ANGLE {
            let t2 = theta * theta;
            (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
        } else {
            let t2 = theta * theta;
            (
                theta.sin() / theta,
                (1.0 - theta.cos()) / t2,
                (theta - theta.sin()) / (t2 * theta),
            )
        };
        let r = Matrix3::identity() + k * a + k2 * b;
        let v = Matrix3::identity() + k * b + k2 * c;
        Pose {
            rotation: Rotation3::from_matrix_unchecked(r),
            translation: v * self.rho,
        }
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Rotation3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_parts(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Position + unit quaternion (w, x, y, z); the wire representation of
    /// a pose in trajectory files.
    pub fn to_quaternion_parts(&self) -> (Vector3<f64>, [f64; 4]) {
        let q = UnitQuaternion::from_rotation_matrix(&self.rotation);
        (self.translation, [q.w, q.i, q.j, q.k])
    }

    pub fn from_quaternion_parts(position: Vector3<f64>, wxyz: [f64; 4]) -> Self {
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            wxyz[0], wxyz[1], wxyz[2], wxyz[3],
        ));
        Self { rotation: q.to_rotation_matrix(), translation: position }
    }

    /// Projects the rotation back onto SO(3) through a quaternion
    /// round-trip; used after long composition chains.
    pub fn renormalized(&self) -> Self {
        let q = UnitQuaternion::from_rotation_matrix(&self.rotation);
        Self { rotation: q.to_rotation_matrix(), translation: self.translation }
    }

    /// `self * other`, i.e. other applied first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rinv = self.rotation.inverse();
        Pose { rotation: rinv, translation: -(rinv * self.translation) }
    }

    /// `R * p + t`.
    pub fn apply(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    /// Rotation angle in radians, from the trace.
    pub fn rotation_angle(&self) -> f64 {
        let tr = self.rotation.matrix().trace();
        ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    /// SE(3) logarithm. Fails within [`NEAR_PI_MARGIN`] of a half-turn,
    /// where the axis is numerically unrecoverable.
    pub fn log(&self) -> Result<Twist> {
        // The trace/vee extraction loses eps/sin^2(theta) near pi, so large
        // angles go through the quaternion branch instead.
        let trace_theta = self.rotation_angle();
        let (theta, phi) = if trace_theta < 2.0 {
            let m = self.rotation.matrix();
            let vee = Vector3::new(
                m[(2, 1)] - m[(1, 2)],
                m[(0, 2)] - m[(2, 0)],
                m[(1, 0)] - m[(0, 1)],
            );
            let coef = if trace_theta < SMALL_ANGLE {
                0.5 + trace_theta * trace_theta / 12.0
            } else {
                trace_theta / (2.0 * trace_theta.sin())
            };
            (trace_theta, vee * coef)
        } else {
            let q = UnitQuaternion::from_rotation_matrix(&self.rotation);
            let (w, v) = if q.w >= 0.0 {
                (q.w, q.imag())
            } else {
                (-q.w, -q.imag())
            };
            let vn = v.norm();
            let theta = 2.0 * vn.atan2(w);
            (theta, v * (theta / vn))
        };
        if theta >= std::f64::consts::PI - NEAR_PI_MARGIN {
            return Err(Error::AngleNearPi(std::f64::consts::PI - theta));
        }
        // rho = V(phi)^-1 * t, with the (1 + cos)/(sin) factor rewritten as
        // cot(theta/2) to stay conditioned near pi
        let k = skew(&phi);
        let k2 = k * k;
        let vinv_coef = if theta < SMALL_ANGLE {
            1.0 / 12.0 + theta * theta / 720.0
        } else {
            1.0 / (theta * theta) - 1.0 / (2.0 * theta * (theta / 2.0).tan())
        };
        let v_inv = Matrix3::identity() - k * 0.5 + k2 * vinv_coef;
        Ok(Twist { rho: v_inv * self.translation, phi })
    }

    /// Homogeneous 4x4 matrix.
    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Max deviation of `R^T R` from identity; the orthonormality residual.
    pub fn orthonormality_error(&self) -> f64 {
        let m = self.rotation.matrix();
        let d = m.transpose() * m - Matrix3::identity();
        d.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
    }
}

/// Squared geodesic distance `||log(a^-1 b)||^2`, radians and meters summed
/// without rescaling; the data/motion balance lives entirely in the
/// selection weight, not here.
pub fn geodesic_distance_sq(a: &Pose, b: &Pose) -> Result<f64> {
    let rel = a.inverse().compose(b);
    Ok(rel.log()?.norm_sq())
}

impl EulerAngles {
    pub fn new(pitch: f64, yaw: f64, roll: f64) -> Self {
        Self { pitch, yaw, roll }
    }

    /// `Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn to_rotation(&self) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Vector3::z_axis(), self.yaw)
            * Rotation3::from_axis_angle(&Vector3::y_axis(), self.pitch)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), self.roll)
    }

    /// Inverse of [`to_rotation`](Self::to_rotation); valid away from the
    /// gimbal lock at |pitch| = pi/2.
    pub fn from_rotation(r: &Rotation3<f64>) -> Self {
        let m = r.matrix();
        let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
        let yaw = m[(1, 0)].atan2(m[(0, 0)]);
        let roll = m[(2, 1)].atan2(m[(2, 2)]);
        Self { pitch, yaw, roll }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_twist(rng: &mut impl Rng, rho_max: f64, phi_norm: f64) -> Twist {
        let unit = |rng: &mut dyn RngCore| {
            loop {
                let v = Vector3::new(
                    rng.gen::<f64>() * 2.0 - 1.0,
                    rng.gen::<f64>() * 2.0 - 1.0,
                    rng.gen::<f64>() * 2.0 - 1.0,
                );
                if v.norm() > 1e-3 && v.norm() <= 1.0 {
                    return v.normalize();
                }
            }
        };
        Twist {
            rho: unit(rng) * (rng.gen::<f64>() * rho_max),
            phi: unit(rng) * phi_norm,
        }
    }

    /// Oracle: truncated series of the 4x4 homogeneous matrix exponential.
    fn exp_series_oracle(xi: &Twist, terms: usize) -> Matrix4<f64> {
        let mut gen = Matrix4::zeros();
        gen.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&xi.phi));
        gen.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.rho);
        let mut sum = Matrix4::identity();
        let mut term = Matrix4::identity();
        for k in 1..=terms {
            term = term * gen / k as f64;
            sum += term;
        }
        sum
    }

    /// Oracle: matrix logarithm by inverse scaling-and-squaring.
    /// Denman-Beavers square roots until near identity, then the Mercator
    /// series, then scale back.
    fn log_matrix_oracle(m: &Matrix4<f64>) -> Matrix4<f64> {
        let mut a = *m;
        let mut scale = 1.0;
        for _ in 0..40 {
            if (a - Matrix4::identity()).norm() < 0.25 {
                break;
            }
            // Denman-Beavers iteration for sqrt(a)
            let mut y = a;
            let mut z = Matrix4::identity();
            for _ in 0..60 {
                let y_next = (y + z.try_inverse().unwrap()) * 0.5;
                let z_next = (z + y.try_inverse().unwrap()) * 0.5;
                if (y_next - y).norm() < 1e-15 {
                    y = y_next;
                    break;
                }
                y = y_next;
                z = z_next;
            }
            a = y;
            scale *= 2.0;
        }
        let x = a - Matrix4::identity();
        let mut sum = Matrix4::zeros();
        let mut term = Matrix4::identity();
        for n in 1..=60 {
            term *= x;
            let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
            sum += term * (sign / n as f64);
        }
        sum * scale
    }

    #[test]
    fn exp_zero_is_identity() {
        let p = Twist::zero().exp();
        assert_relative_eq!(p.to_homogeneous(), Pose::identity().to_homogeneous(), epsilon = 1e-15);
    }

    #[test]
    fn exp_quarter_turn_about_z() {
        let xi = Twist::new(Vector3::zeros(), Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let p = xi.exp();
        assert_relative_eq!(p.rotation_angle(), std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
        assert!(p.translation().norm() < 1e-15);
        let back = p.log().unwrap();
        assert_relative_eq!(back.as_vector(), xi.as_vector(), epsilon = 1e-9);
    }

    #[test]
    fn exp_matches_series_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let xi = random_twist(&mut rng, 0.3, 0.3);
            let p = xi.exp();
            let oracle = exp_series_oracle(&xi, 10);
            assert!((p.to_homogeneous() - oracle).norm() < 1e-8);
        }
    }

    #[test]
    fn exp_first_order_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let xi = random_twist(&mut rng, 1e-7, 1e-7);
            let p = xi.exp();
            assert!((p.translation() - xi.rho).norm() < 1e-9);
            let lin = Matrix3::identity() + skew(&xi.phi);
            assert!((p.rotation().matrix() - lin).norm() < 1e-9);
        }
    }

    #[test]
    fn log_identity_is_zero() {
        let xi = Pose::identity().log().unwrap();
        assert!(xi.norm_sq() < 1e-30);
    }

    #[test]
    fn log_recovers_170_degree_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let angle = 170.0f64.to_radians();
        for _ in 0..50 {
            let axis = random_twist(&mut rng, 0.0, 1.0).phi;
            let p = Pose::from_parts(
                Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle),
                Vector3::new(1.0, -2.0, 0.5),
            );
            let xi = p.log().unwrap();
            assert_relative_eq!(xi.phi.norm(), angle, epsilon = 1e-7);
        }
    }

    #[test]
    fn log_rejects_near_pi() {
        let p = Pose::from_parts(
            Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI - 1e-8),
            Vector3::zeros(),
        );
        assert!(matches!(p.log(), Err(Error::AngleNearPi(_))));
    }

    #[test]
    fn log_exp_roundtrip_sweep() {
        // invariant: log(exp(xi)) = xi for ||phi|| < pi, 1e4 samples
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..10_000 {
            let phi_norm = rng.gen::<f64>() * (std::f64::consts::PI - 1e-3);
            let xi = random_twist(&mut rng, 5.0, phi_norm);
            let back = xi.exp().log().unwrap();
            let err = (back.as_vector() - xi.as_vector()).amax();
            assert!(err < 1e-9, "roundtrip err {err} at phi_norm {phi_norm}");
        }
    }

    #[test]
    fn compose_identity_neutral_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let p = random_twist(&mut rng, 2.0, 1.2).exp();
        let id = Pose::identity();
        assert!((id.compose(&p).to_homogeneous() - p.to_homogeneous()).norm() < 1e-12);
        let round = p.compose(&p.inverse());
        assert!((round.to_homogeneous() - Matrix4::identity()).norm() < 1e-9);
        assert!(round.orthonormality_error() < 1e-9);
    }

    #[test]
    fn compose_matches_homogeneous_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..100 {
            let a = random_twist(&mut rng, 3.0, 2.0).exp();
            let b = random_twist(&mut rng, 3.0, 2.0).exp();
            let c = a.compose(&b);
            assert!((c.to_homogeneous() - a.to_homogeneous() * b.to_homogeneous()).norm() < 1e-12);
        }
    }

    #[test]
    fn compose_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = random_twist(&mut rng, 2.0, 1.0).exp();
        let b = random_twist(&mut rng, 2.0, 1.0).exp();
        let c = random_twist(&mut rng, 2.0, 1.0).exp();
        let left = a.compose(&b).compose(&c).to_homogeneous();
        let right = a.compose(&b.compose(&c)).to_homogeneous();
        assert!((left - right).norm() < 1e-9);
    }

    #[test]
    fn geodesic_zero_translation_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let a = random_twist(&mut rng, 2.0, 1.0).exp();
        assert_eq!(geodesic_distance_sq(&a, &a).unwrap(), 0.0);

        let b = Pose::from_parts(*a.rotation(), a.translation() + a.rotation() * Vector3::new(3.0, 4.0, 0.0));
        // pure relative translation (3,4,0): distance^2 = 25
        assert_relative_eq!(geodesic_distance_sq(&a, &b).unwrap(), 25.0, epsilon = 1e-9);

        let c = random_twist(&mut rng, 2.0, 1.5).exp();
        let ab = geodesic_distance_sq(&a, &c).unwrap();
        let ba = geodesic_distance_sq(&c, &a).unwrap();
        assert_relative_eq!(ab, ba, epsilon = 1e-9);
    }

    #[test]
    fn geodesic_matches_matrix_log_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..50 {
            let a = random_twist(&mut rng, 2.0, 1.0).exp();
            let b = random_twist(&mut rng, 2.0, 1.0).exp();
            let d = geodesic_distance_sq(&a, &b).unwrap();
            let rel = a.inverse().compose(&b).to_homogeneous();
            let lg = log_matrix_oracle(&rel);
            let rho = lg.fixed_view::<3, 1>(0, 3).into_owned();
            let phi = Vector3::new(lg[(2, 1)], lg[(0, 2)], lg[(1, 0)]);
            let oracle = rho.norm_squared() + phi.norm_squared();
            assert_relative_eq!(d, oracle, epsilon = 1e-8, max_relative = 1e-8);
        }
    }

    #[test]
    fn apply_cases() {
        let id = Pose::identity();
        assert_eq!(id.apply(&Vector3::new(1.0, 2.0, 3.0)), Vector3::new(1.0, 2.0, 3.0));

        let shift = Pose::from_parts(Rotation3::identity(), Vector3::new(0.0, 0.0, 5.0));
        assert_eq!(shift.apply(&Vector3::zeros()), Vector3::new(0.0, 0.0, 5.0));

        let yaw90 = Pose::from_parts(
            Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2),
            Vector3::zeros(),
        );
        let out = yaw90.apply(&Vector3::new(1.0, 0.0, 0.0));
        assert!((out - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn left_update_acts_on_applied_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..100 {
            let xi = random_twist(&mut rng, 1.0, 0.8);
            let p = random_twist(&mut rng, 2.0, 1.0).exp();
            let point = Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()) * 10.0;
            let lhs = xi.exp().compose(&p).apply(&point);
            let rhs = xi.exp().apply(&p.apply(&point));
            assert!((lhs - rhs).norm() < 1e-9);
        }
    }

    #[test]
    fn euler_roundtrip_away_from_gimbal_lock() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..1000 {
            let e = EulerAngles::new(
                (rng.gen::<f64>() - 0.5) * (std::f64::consts::PI - 2e-3 - 2e-3),
                (rng.gen::<f64>() - 0.5) * 2.0 * std::f64::consts::PI * 0.999,
                (rng.gen::<f64>() - 0.5) * 2.0 * std::f64::consts::PI * 0.999,
            );
            let back = EulerAngles::from_rotation(&e.to_rotation());
            assert_relative_eq!(back.pitch, e.pitch, epsilon = 1e-9);
            assert_relative_eq!(back.yaw, e.yaw, epsilon = 1e-9);
            assert_relative_eq!(back.roll, e.roll, epsilon = 1e-9);
        }
    }

    #[test]
    fn quaternion_serialization_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..100 {
            let p = random_twist(&mut rng, 10.0, 2.0).exp();
            let (pos, q) = p.to_quaternion_parts();
            let back = Pose::from_quaternion_parts(pos, q);
            assert!((back.to_homogeneous() - p.to_homogeneous()).norm() < 1e-12);
        }
    }

    #[test]
    fn orthonormality_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut p = Pose::identity();
        for _ in 0..1000 {
            p = random_twist(&mut rng, 1.0, 0.5).exp().compose(&p);
        }
        assert!(p.orthonormality_error() < 1e-9);
    }
}
