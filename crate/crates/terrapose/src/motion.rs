//! Constant-velocity motion prior.
//!
//! Translation runs through a per-axis linear Kalman filter over
//! (position, velocity); rotation is extrapolated by an exponentially
//! smoothed body-frame angular velocity. The filter supplies the predicted
//! pose for rendering and sampling, the translation statistics for
//! hypothesis generation, and the lag-compensating extrapolation of the
//! dual-thread engine.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::se3::{Pose, Twist};

/// Process noise on position, (0.1 m)^2 per frame.
const Q_POS: f64 = 0.01;
/// Process noise on velocity, (0.05 m/frame)^2 per frame.
const Q_VEL: f64 = 0.0025;
/// Measurement noise on position, (0.2 m)^2.
const R_MEAS: f64 = 0.04;
/// Angular-velocity smoothing factor.
const BETA: f64 = 0.5;
/// Diffuse prior: the first measurements dominate the initial state.
const INIT_POS_VAR: f64 = 1e12;
const INIT_VEL_VAR: f64 = 1e10;

/// Filter state: pose estimate, body-frame velocity twist advancing one
/// frame, and the per-axis (position, velocity) covariance.
#[derive(Debug, Clone)]
pub struct MotionState {
    pose: Pose,
    velocity: Twist,
    /// World-frame translational velocity per axis (m/frame).
    vel_world: Vector3<f64>,
    /// Per-axis 2x2 covariance over (position, velocity).
    cov: [Matrix2<f64>; 3],
}

/// Output of [`MotionState::predict`].
#[derive(Debug, Clone)]
pub struct Prediction {
    pub pose: Pose,
    /// Mean translation perturbation relative to the predicted pose.
    pub mu_t: Vector3<f64>,
    /// Translation sampling covariance (m^2).
    pub sigma_t: Matrix3<f64>,
}

impl MotionState {
    /// Initializes from a first pose estimate with zero velocity and a
    /// diffuse covariance.
    pub fn new(pose: Pose) -> Self {
        Self {
            pose,
            velocity: Twist::zero(),
            vel_world: Vector3::zeros(),
            cov: [Matrix2::new(INIT_POS_VAR, 0.0, 0.0, INIT_VEL_VAR); 3],
        }
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    /// Body-frame velocity twist (one frame of motion).
    pub fn velocity(&self) -> &Twist {
        &self.velocity
    }

    /// Diagonal position covariance block (m^2).
    pub fn cov_translation(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(self.cov[0][(0, 0)], self.cov[1][(0, 0)], self.cov[2][(0, 0)]))
    }

    /// Diagonal velocity covariance block (m^2/frame^2).
    pub fn cov_velocity(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(self.cov[0][(1, 1)], self.cov[1][(1, 1)], self.cov[2][(1, 1)]))
    }

    /// Extrapolates the pose `frames_ahead` frames: the pose advances by
    /// `exp(k * velocity)` on the body side, perturbation sampling stays
    /// centered on the prediction (`mu_t = 0`) with
    /// `sigma_t = P_pos + k^2 P_vel + k Q_pos`.
    pub fn predict(&self, frames_ahead: usize) -> Prediction {
        debug_assert!(frames_ahead >= 1);
        let k = frames_ahead as f64;
        let pose = self.pose.compose(&self.velocity.scaled(k).exp());
        let mut sigma = Vector3::zeros();
        for axis in 0..3 {
            let p = &self.cov[axis];
            sigma[axis] = p[(0, 0)] + k * k * p[(1, 1)] + k * Q_POS;
        }
        Prediction { pose, mu_t: Vector3::zeros(), sigma_t: Matrix3::from_diagonal(&sigma) }
    }

    /// Advances one frame with no measurement (tracking failure): the pose
    /// follows the prediction and the covariance grows by process noise.
    pub fn coasted(&self) -> MotionState {
        let f = Matrix2::new(1.0, 1.0, 0.0, 1.0);
        let q = Matrix2::new(Q_POS, 0.0, 0.0, Q_VEL);
        let mut cov = self.cov;
        for c in &mut cov {
            *c = f * *c * f.transpose() + q;
        }
        let pose = self.predict(1).pose.renormalized();
        let rho_body = pose.rotation().inverse() * self.vel_world;
        MotionState {
            pose,
            velocity: Twist::new(rho_body, self.velocity.phi),
            vel_world: self.vel_world,
            cov,
        }
    }

    /// Folds in a measured pose: one time-update frame followed by a
    /// Joseph-form position update per axis; rotation adopts the
    /// measurement and refreshes the smoothed angular velocity from
    /// `log(previous^-1 * measured)`.
    pub fn update(&self, measured: &Pose) -> MotionState {
        let f = Matrix2::new(1.0, 1.0, 0.0, 1.0);
        let q = Matrix2::new(Q_POS, 0.0, 0.0, Q_VEL);
        let h = nalgebra::RowVector2::new(1.0, 0.0);

        let mut pos = Vector3::zeros();
        let mut vel = Vector3::zeros();
        let mut cov = self.cov;
        for axis in 0..3 {
            let x = Vector2::new(self.pose.translation()[axis], self.vel_world[axis]);
            let x_prior = f * x;
            let p_prior = f * cov[axis] * f.transpose() + q;
            let s = (h * p_prior * h.transpose())[(0, 0)] + R_MEAS;
            let k_gain = p_prior * h.transpose() / s;
            let innovation = measured.translation()[axis] - x_prior[0];
            let x_post = x_prior + k_gain * innovation;
            let i_kh = Matrix2::identity() - k_gain * h;
            let p_post = i_kh * p_prior * i_kh.transpose() + k_gain * R_MEAS * k_gain.transpose();
            pos[axis] = x_post[0];
            vel[axis] = x_post[1];
            // keep exact symmetry under accumulation
            cov[axis] = (p_post + p_post.transpose()) * 0.5;
        }

        let omega_obs = self
            .pose
            .inverse()
            .compose(measured)
            .log()
            .map(|xi| xi.phi)
            .unwrap_or_else(|_| self.velocity.phi);
        let omega = self.velocity.phi * (1.0 - BETA) + omega_obs * BETA;

        let rotation = *measured.rotation();
        let pose = Pose::from_parts(rotation, pos).renormalized();
        let rho_body = rotation.inverse() * vel;
        MotionState {
            pose,
            velocity: Twist::new(rho_body, omega),
            vel_world: vel,
            cov,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::EulerAngles;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Independent scalar KF oracle over (position, velocity).
    struct ScalarKf {
        x: Vector2<f64>,
        p: Matrix2<f64>,
    }

    impl ScalarKf {
        fn new(p0: f64) -> Self {
            Self { x: Vector2::new(p0, 0.0), p: Matrix2::new(INIT_POS_VAR, 0.0, 0.0, INIT_VEL_VAR) }
        }

        fn step(&mut self, z: f64) -> f64 {
            let f = Matrix2::new(1.0, 1.0, 0.0, 1.0);
            let q = Matrix2::new(Q_POS, 0.0, 0.0, Q_VEL);
            let x_prior = f * self.x;
            let p_prior = f * self.p * f.transpose() + q;
            let s = p_prior[(0, 0)] + R_MEAS;
            let k = Vector2::new(p_prior[(0, 0)], p_prior[(1, 0)]) / s;
            let prediction = x_prior[0];
            self.x = x_prior + k * (z - prediction);
            let i_kh = Matrix2::new(1.0 - k[0], 0.0, -k[1], 1.0);
            self.p = i_kh * p_prior * i_kh.transpose() + k * R_MEAS * k.transpose();
            prediction
        }
    }

    #[test]
    fn zero_velocity_prediction_is_stationary() {
        let pose = Pose::from_parts(
            EulerAngles::new(0.2, 1.0, -0.1).to_rotation(),
            Vector3::new(3.0, -2.0, 50.0),
        );
        let state = MotionState::new(pose);
        let pred = state.predict(1);
        assert!((pred.pose.to_homogeneous() - pose.to_homogeneous()).norm() < 1e-12);
        assert_eq!(pred.mu_t, Vector3::zeros());
    }

    #[test]
    fn pure_translation_velocity_advances_linearly() {
        let mut state = MotionState::new(Pose::identity());
        state.velocity = Twist::new(Vector3::new(1.0, 0.0, 0.0), Vector3::zeros());
        let pred = state.predict(2);
        assert!((pred.pose.translation() - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn sigma_grows_with_horizon() {
        let mut state = MotionState::new(Pose::identity());
        // make the covariance finite first
        for i in 0..5 {
            state = state.update(&Pose::from_parts(
                nalgebra::Rotation3::identity(),
                Vector3::new(i as f64, 0.0, 0.0),
            ));
        }
        let mut prev = 0.0;
        for k in 1..=5 {
            let sigma = state.predict(k).sigma_t;
            let min_eig = sigma.symmetric_eigenvalues().min();
            assert!(min_eig > prev);
            prev = min_eig;
        }
    }

    #[test]
    fn measurement_at_prediction_keeps_pose_and_shrinks_covariance() {
        let mut state = MotionState::new(Pose::from_parts(
            nalgebra::Rotation3::identity(),
            Vector3::new(1.0, 2.0, 3.0),
        ));
        for i in 1..4 {
            state = state.update(&Pose::from_parts(
                nalgebra::Rotation3::identity(),
                Vector3::new(1.0 + i as f64, 2.0, 3.0),
            ));
        }
        let predicted = state.predict(1).pose;
        let before = state.cov_translation().trace();
        let after = state.update(&predicted);
        assert!((after.pose().to_homogeneous() - predicted.to_homogeneous()).norm() < 1e-9);
        assert!(after.cov_translation().trace() < before + 3.0 * Q_POS);
    }

    #[test]
    fn static_pose_drives_velocity_to_zero() {
        let pose = Pose::from_parts(EulerAngles::new(0.1, 0.3, 0.0).to_rotation(), Vector3::new(5.0, 5.0, 100.0));
        let mut state = MotionState::new(pose);
        for _ in 0..100 {
            state = state.update(&pose);
        }
        assert!(state.velocity().rho.norm() < 1e-6);
        assert!(state.velocity().phi.norm() < 1e-6);
        assert!((state.pose().translation() - pose.translation()).norm() < 1e-6);
    }

    #[test]
    fn constant_velocity_prediction_converges_and_matches_oracle() {
        let v = Vector3::new(2.0, -1.0, 0.5);
        let start = Vector3::new(10.0, 20.0, 150.0);
        let mut state = MotionState::new(Pose::from_parts(nalgebra::Rotation3::identity(), start));
        let mut oracles = [ScalarKf::new(start.x), ScalarKf::new(start.y), ScalarKf::new(start.z)];
        for frame in 1..=30 {
            let truth = start + v * frame as f64;
            let pred = state.predict(1);
            let err = (pred.pose.translation() - truth).norm();
            for (axis, oracle) in oracles.iter_mut().enumerate() {
                let oracle_pred = oracle.step(truth[axis]);
                assert_relative_eq!(pred.pose.translation()[axis], oracle_pred, epsilon = 1e-9, max_relative = 1e-9);
            }
            if frame >= 10 {
                assert!(err < 1e-9, "prediction error {err} at frame {frame}");
            }
            state = state.update(&Pose::from_parts(nalgebra::Rotation3::identity(), truth));
        }
    }

    #[test]
    fn covariances_stay_symmetric_psd_under_fuzz() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let mut state = MotionState::new(Pose::identity());
        for _ in 0..10_000 {
            if rng.gen::<f64>() < 0.3 {
                let k = rng.gen_range(1..5);
                let _ = state.predict(k);
            } else {
                let meas = Pose::from_parts(
                    EulerAngles::new(
                        (rng.gen::<f64>() - 0.5) * 0.5,
                        (rng.gen::<f64>() - 0.5) * 3.0,
                        (rng.gen::<f64>() - 0.5) * 0.5,
                    )
                    .to_rotation(),
                    Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()) * 100.0,
                );
                state = state.update(&meas);
            }
            for axis in 0..3 {
                let p = &state.cov[axis];
                assert!((p[(0, 1)] - p[(1, 0)]).abs() < 1e-9);
                let eigs = p.symmetric_eigenvalues();
                assert!(eigs.min() >= -1e-12, "covariance lost PSD: {eigs:?}");
            }
        }
    }

    #[test]
    fn rotating_motion_tracks_angular_velocity() {
        // constant yaw rate: after smoothing settles, prediction matches
        let rate = 0.02;
        let mut state = MotionState::new(Pose::identity());
        for frame in 1..=60 {
            let truth = Pose::from_parts(
                EulerAngles::new(0.0, rate * frame as f64, 0.0).to_rotation(),
                Vector3::zeros(),
            );
            state = state.update(&truth);
        }
        let pred = state.predict(1).pose;
        let expect = EulerAngles::new(0.0, rate * 61.0, 0.0).to_rotation();
        let diff = (pred.rotation().matrix() - expect.matrix()).norm();
        assert!(diff < 1e-6, "angular extrapolation off by {diff}");
    }
}
