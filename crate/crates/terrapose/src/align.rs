//! Multi-hypothesis feature-metric pose alignment.
//!
//! The optimizer samples a swarm of pose hypotheses around a prediction —
//! a rotation-aware grid that allocates its range to the motion-sensitive
//! pitch/yaw axes plus Gaussian translation offsets — refines every
//! hypothesis in parallel with a coarse-to-fine robust Levenberg-Marquardt
//! loop over the reference geo-anchors, and selects the winner by the sum
//! of its photometric cost and a motion-prior geodesic penalty.

use std::time::Instant;

use nalgebra::{Matrix2x6, Matrix3, Matrix6, Rotation3, Vector3, Vector6};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::camera::{pose_point_jacobian, Intrinsics, PixelPoint, Z_MIN};
use crate::error::{Error, Result};
use crate::image::GradientMatrix;
use crate::pyramid::{joint_weight, FeaturePyramid, LEVELS};
use crate::se3::{geodesic_distance_sq, skew, Pose, Twist};

/// Damping clamp for the LM schedule.
const LAMBDA_MIN: f64 = 1e-6;
const LAMBDA_MAX: f64 = 1e4;

/// Anchors are dropped when they project within this margin of the image
/// border, so the bilinear support stays interior.
const BORDER_MARGIN: f64 = 1.0;

/// Fixed reduction chunk for the order-insensitive parallel accumulation.
const REDUCTION_CHUNK: usize = 64;

/// One geo-anchor of a reference bundle: its world position, source pixel,
/// and the reference features/confidences cached per pyramid level.
#[derive(Debug, Clone)]
pub struct BundleAnchor {
    pub world_point: Vector3<f64>,
    pub ref_pixel: PixelPoint,
    /// Reference feature per level (sampled once at bundle creation).
    pub ref_features: [Vec<f64>; LEVELS],
    /// Reference confidence per level.
    pub ref_weights: [f64; LEVELS],
}

/// Everything one localization cycle aligns against: the reference
/// pyramid, the pose it was rendered from, and the cached geo-anchors.
#[derive(Debug, Clone)]
pub struct ReferenceBundle {
    pub reference_pyramid: FeaturePyramid,
    pub predicted_pose: Pose,
    pub anchors: Vec<BundleAnchor>,
    pub intrinsics: Intrinsics,
    /// Frame this bundle was prepared for.
    pub frame_index: usize,
    /// Frame whose estimate drove the prediction (-1 = initial prior).
    pub source_frame: i64,
}

/// A refined pose candidate with its running costs.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub pose: Pose,
    /// Fine-level robust photometric cost; infinite when flagged invalid.
    pub photometric_cost_fine: f64,
    /// Photometric cost plus the motion regularizer (set by [`select`]).
    pub total_cost: f64,
    pub valid_anchor_count: usize,
}

impl Hypothesis {
    pub fn is_valid(&self) -> bool {
        self.photometric_cost_fine.is_finite()
    }
}

/// Rotation-aware hypothesis sampling parameters.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    /// Pitch box half-width (rad).
    pub alpha_pitch: f64,
    /// Yaw box half-width (rad).
    pub alpha_yaw: f64,
    /// Grid steps (rad); must tile the box.
    pub pitch_step: f64,
    pub yaw_step: f64,
    /// Translation sampling covariance (m^2).
    pub sigma_t: Matrix3<f64>,
    pub rng_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            alpha_pitch: 11f64.to_radians(),
            alpha_yaw: 11f64.to_radians(),
            pitch_step: 2f64.to_radians(),
            yaw_step: 2f64.to_radians(),
            sigma_t: Matrix3::identity(),
            rng_seed: 0,
        }
    }
}

/// Per-level iteration counts and the robust-LM policy.
#[derive(Debug, Clone)]
pub struct RefineSchedule {
    /// LM iterations at the coarse, mid and fine levels.
    pub iterations_per_level: [usize; LEVELS],
    pub lm_lambda_init: f64,
    /// Multiplier on reject (> 1).
    pub lm_lambda_up: f64,
    /// Multiplier on accept (< 1).
    pub lm_lambda_down: f64,
    /// Huber threshold in feature units.
    pub huber_delta: f64,
    /// Below this many valid anchors a hypothesis is flagged.
    pub min_anchors: usize,
}

impl Default for RefineSchedule {
    fn default() -> Self {
        Self {
            iterations_per_level: [2, 3, 4],
            lm_lambda_init: 1e-2,
            lm_lambda_up: 10.0,
            lm_lambda_down: 0.5,
            huber_delta: 0.5,
            min_anchors: 50,
        }
    }
}

/// Damped normal equations accumulated over anchors.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub hessian: Matrix6<f64>,
    pub gradient: Vector6<f64>,
}

/// Residual, Jacobian and joint weight of one anchor at one level.
#[derive(Debug, Clone)]
pub struct AnchorTerm {
    pub residual: nalgebra::DVector<f64>,
    pub jacobian: nalgebra::OMatrix<f64, nalgebra::Dyn, nalgebra::U6>,
    pub weight: f64,
}

/// Per-run diagnostics: costs per hypothesis, accepted LM steps, timing.
#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub photometric_costs: Vec<f64>,
    pub total_costs: Vec<f64>,
    pub accepted_steps: Vec<usize>,
    pub selected_index: usize,
    pub wall_ms: f64,
}

/// Heading of a camera attitude: azimuth of the optical axis, falling back
/// to the image-right axis for a pure nadir view.
pub fn heading_of(rotation: &Rotation3<f64>) -> f64 {
    let forward = rotation * Vector3::z();
    if forward.x.hypot(forward.y) > 1e-6 {
        forward.y.atan2(forward.x)
    } else {
        let right = rotation * Vector3::x();
        right.y.atan2(right.x)
    }
}

/// Applies a yaw/pitch/roll perturbation in the heading-aligned frame:
/// yaw about the world vertical, pitch about the lateral axis of the
/// current heading, roll about the forward axis. Used both for hypothesis
/// sampling and for injecting pose noise in the harnesses.
pub fn perturb_attitude(base: &Rotation3<f64>, yaw: f64, pitch: f64, roll: f64) -> Rotation3<f64> {
    let h = Rotation3::from_axis_angle(&Vector3::z_axis(), heading_of(base));
    let pert = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw)
        * Rotation3::from_axis_angle(&Vector3::y_axis(), pitch)
        * Rotation3::from_axis_angle(&Vector3::x_axis(), roll);
    h * pert * h.inverse() * base
}

/// Grid node values covering [-alpha, alpha] inclusive. `alpha = 0`
/// degenerates to the single center node.
fn grid_nodes(alpha: f64, step: f64) -> Result<Vec<f64>> {
    if alpha < 0.0 || step <= 0.0 {
        return Err(Error::ConfigMismatch(format!(
            "box half-width {alpha} and step {step} must be non-negative/positive"
        )));
    }
    if alpha == 0.0 {
        return Ok(vec![0.0]);
    }
    let ratio = 2.0 * alpha / step;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-6 {
        return Err(Error::ConfigMismatch(format!(
            "step {step} does not tile the box [-{alpha}, {alpha}]"
        )));
    }
    Ok((0..=n as usize).map(|i| -alpha + i as f64 * step).collect())
}

fn translation_sampler(sigma_t: &Matrix3<f64>) -> Result<Option<nalgebra::Cholesky<f64, nalgebra::U3>>> {
    if sigma_t.norm() == 0.0 {
        return Ok(None);
    }
    sigma_t
        .cholesky()
        .map(Some)
        .ok_or_else(|| Error::ConfigMismatch("sigma_t not positive definite".into()))
}

fn draw_offset(
    chol: &Option<nalgebra::Cholesky<f64, nalgebra::U3>>,
    rng: &mut ChaCha8Rng,
) -> Vector3<f64> {
    match chol {
        Some(l) => {
            let z = Vector3::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            );
            l.l() * z
        }
        None => Vector3::zeros(),
    }
}

/// Number of hypotheses the grid sampler will produce.
pub fn hypothesis_count(cfg: &SamplerConfig) -> Result<usize> {
    Ok(grid_nodes(cfg.alpha_pitch, cfg.pitch_step)?.len()
        * grid_nodes(cfg.alpha_yaw, cfg.yaw_step)?.len())
}

/// Generates the hypothesis swarm: one pose per (pitch, yaw) grid node,
/// each with an independent Gaussian translation offset. Deterministic for
/// a given seed.
pub fn generate_hypotheses(center: &Pose, cfg: &SamplerConfig) -> Result<Vec<Pose>> {
    let pitches = grid_nodes(cfg.alpha_pitch, cfg.pitch_step)?;
    let yaws = grid_nodes(cfg.alpha_yaw, cfg.yaw_step)?;
    let chol = translation_sampler(&cfg.sigma_t)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut out = Vec::with_capacity(pitches.len() * yaws.len());
    for &pitch in &pitches {
        for &yaw in &yaws {
            let offset = draw_offset(&chol, &mut rng);
            out.push(Pose::from_parts(
                perturb_attitude(center.rotation(), yaw, pitch, 0.0),
                center.translation() + offset,
            ));
        }
    }
    Ok(out)
}

/// Isotropic-tight sampler (the rotation-aware ablation's "off" arm):
/// `count` random perturbations uniform in [-step, step] on all three
/// rotation axes, same translation model.
pub fn generate_hypotheses_isotropic(
    center: &Pose,
    cfg: &SamplerConfig,
    count: usize,
) -> Result<Vec<Pose>> {
    let chol = translation_sampler(&cfg.sigma_t)?;
    let half = cfg.pitch_step.max(cfg.yaw_step);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    Ok((0..count)
        .map(|_| {
            let yaw = (rng.gen::<f64>() * 2.0 - 1.0) * half;
            let pitch = (rng.gen::<f64>() * 2.0 - 1.0) * half;
            let roll = (rng.gen::<f64>() * 2.0 - 1.0) * half;
            let offset = draw_offset(&chol, &mut rng);
            Pose::from_parts(
                perturb_attitude(center.rotation(), yaw, pitch, roll),
                center.translation() + offset,
            )
        })
        .collect())
}

/// Huber cost of a squared weighted residual norm `s = w ||r||^2`.
#[inline]
fn huber(s: f64, delta: f64) -> f64 {
    if s <= delta * delta {
        s
    } else {
        2.0 * delta * s.sqrt() - delta * delta
    }
}

/// IRLS weight `rho'(s) = min(1, delta / sqrt(s))`.
#[inline]
fn irls_weight(s: f64, delta: f64) -> f64 {
    if s <= delta * delta {
        1.0
    } else {
        delta / s.sqrt()
    }
}

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    #[inline]
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

type SystemAcc = ([[Kahan; 6]; 6], [Kahan; 6]);

/// Projects an anchor into the query camera at one level; `None` drops the
/// anchor (behind the camera or outside the 1 px interior margin).
#[inline]
fn project_anchor(
    anchor: &BundleAnchor,
    inv_pose: &Pose,
    level_k: &Intrinsics,
) -> Option<(PixelPoint, Vector3<f64>)> {
    let p_cam = inv_pose.apply(&anchor.world_point);
    if p_cam.z <= Z_MIN {
        return None;
    }
    let px = level_k.project(&p_cam).ok()?;
    if px.u < BORDER_MARGIN
        || px.v < BORDER_MARGIN
        || px.u > level_k.width as f64 - 1.0 - BORDER_MARGIN
        || px.v > level_k.height as f64 - 1.0 - BORDER_MARGIN
    {
        return None;
    }
    Some((px, p_cam))
}

/// Feature residual and chain-rule Jacobian of one anchor at one level:
/// `r = f_q(project(T^-1 P_w)) - f_ref`, `J = featGrad * projJac * poseJac`.
/// Returns `None` (a dropped anchor, not an error) when the projection is
/// behind the camera or outside the interior margin.
pub fn residual(
    anchor: &BundleAnchor,
    level: usize,
    level_k: &Intrinsics,
    hyp_pose: &Pose,
    query: &FeaturePyramid,
) -> Option<AnchorTerm> {
    let inv = hyp_pose.inverse();
    let (px, p_cam) = project_anchor(anchor, &inv, level_k)?;
    let qf = query.feature(level);
    let (value, grad): (nalgebra::DVector<f64>, GradientMatrix) = qf.sample(px.u, px.v).ok()?;
    let mut r = value;
    for ch in 0..qf.channels {
        r[ch] -= anchor.ref_features[level][ch];
    }
    let proj_jac = level_k.projection_jacobian(&p_cam).ok()?;
    let j23: Matrix2x6<f64> = proj_jac * pose_point_jacobian(hyp_pose, &anchor.world_point);
    let jacobian = grad * j23;
    let wq = query.uncertainty(level).sample(px.u, px.v).ok()?;
    let weight = joint_weight(wq, anchor.ref_weights[level]);
    Some(AnchorTerm { residual: r, jacobian, weight })
}

fn merge_system(into: &mut SystemAcc, sys: &LinearSystem) {
    for a in 0..6 {
        into.1[a].add(sys.gradient[a]);
        for b in a..6 {
            into.0[a][b].add(sys.hessian[(a, b)]);
        }
    }
}

fn finish_system(acc: SystemAcc) -> LinearSystem {
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    for a in 0..6 {
        g[a] = acc.1[a].value();
        for b in a..6 {
            let v = acc.0[a][b].value();
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    LinearSystem { hessian: h, gradient: g }
}

fn accumulate_chunk(terms: &[AnchorTerm], huber_delta: f64) -> LinearSystem {
    let mut acc = SystemAcc::default();
    for t in terms {
        let s = t.weight * t.residual.norm_squared();
        let w_tot = t.weight * irls_weight(s, huber_delta);
        for ch in 0..t.residual.len() {
            let row = t.jacobian.row(ch);
            for a in 0..6 {
                acc.1[a].add(w_tot * row[a] * t.residual[ch]);
                for b in a..6 {
                    acc.0[a][b].add(w_tot * row[a] * row[b]);
                }
            }
        }
    }
    finish_system(acc)
}

/// Builds `H = sum J^T w rho' J`, `g = sum J^T w rho' r` with Huber IRLS
/// reweighting and compensated summation. The reduction runs over fixed
/// 64-term chunks combined in index order, so the result is identical
/// whether chunks execute in parallel or sequentially.
pub fn accumulate_system(terms: &[AnchorTerm], huber_delta: f64) -> LinearSystem {
    let partials: Vec<LinearSystem> = terms
        .par_chunks(REDUCTION_CHUNK)
        .map(|chunk| accumulate_chunk(chunk, huber_delta))
        .collect();
    let mut acc = SystemAcc::default();
    for p in &partials {
        merge_system(&mut acc, p);
    }
    finish_system(acc)
}

/// Solves `(H + lambda I) dxi = -g` by Cholesky factorization.
pub fn lm_solve(sys: &LinearSystem, lambda: f64) -> Result<Twist> {
    debug_assert!(lambda > 0.0);
    let damped = sys.hessian + Matrix6::identity() * lambda;
    let chol = damped.cholesky().ok_or(Error::SolveFailed)?;
    let step = chol.solve(&(-sys.gradient));
    Ok(Twist::from_vector(&step))
}

/// One-pass system/cost/valid-count evaluation used by the refinement hot
/// loop; numerically it matches `accumulate_system` over [`residual`]
/// terms (covered by a test) but runs allocation-free. Within a fixed
/// 64-anchor chunk sums are plain f64; chunks merge through compensated
/// accumulators in index order, matching the public reduction contract.
fn build_level_system(
    pose: &Pose,
    bundle: &ReferenceBundle,
    query: &FeaturePyramid,
    level: usize,
    level_k: &Intrinsics,
    huber_delta: f64,
) -> (LinearSystem, f64, usize) {
    let inv = pose.inverse();
    let rt = *inv.rotation().matrix();
    let qf = query.feature(level);
    let qu = query.uncertainty(level);
    let c = qf.channels;
    let mut value = vec![0.0; c];
    let mut grad = vec![0.0; 2 * c];
    let mut acc = SystemAcc::default();
    let mut cost = Kahan::default();
    let mut valid = 0usize;
    for chunk in bundle.anchors.chunks(REDUCTION_CHUNK) {
        let mut ch_h = [[0.0f64; 6]; 6];
        let mut ch_g = [0.0f64; 6];
        let mut ch_cost = 0.0f64;
        for anchor in chunk {
            let Some((px, p_cam)) = project_anchor(anchor, &inv, level_k) else { continue };
            qf.sample_into(px.u, px.v, &mut value, Some(&mut grad));
            let wq = qu.sample(px.u, px.v).expect("checked in bounds");
            let w = joint_weight(wq, anchor.ref_weights[level]);
            let mut rnorm_sq = 0.0;
            for (ch, v) in value.iter_mut().enumerate() {
                *v -= anchor.ref_features[level][ch];
                rnorm_sq += *v * *v;
            }
            let s = w * rnorm_sq;
            ch_cost += huber(s, huber_delta);
            valid += 1;
            let w_tot = w * irls_weight(s, huber_delta);
            let proj_jac = level_k.projection_jacobian(&p_cam).expect("z checked positive");
            // j23 = projJac * [-R^T | R^T [P]x] = [-(projJac R^T) | (projJac R^T) [P]x]
            let a2 = proj_jac * rt;
            let a2_rot = a2 * skew(&anchor.world_point);
            for ch in 0..c {
                let gu = grad[2 * ch];
                let gv = grad[2 * ch + 1];
                let row = [
                    -(gu * a2[(0, 0)] + gv * a2[(1, 0)]),
                    -(gu * a2[(0, 1)] + gv * a2[(1, 1)]),
                    -(gu * a2[(0, 2)] + gv * a2[(1, 2)]),
                    gu * a2_rot[(0, 0)] + gv * a2_rot[(1, 0)],
                    gu * a2_rot[(0, 1)] + gv * a2_rot[(1, 1)],
                    gu * a2_rot[(0, 2)] + gv * a2_rot[(1, 2)],
                ];
                let wr = w_tot * value[ch];
                for a in 0..6 {
                    ch_g[a] += wr * row[a];
                    let wrow = w_tot * row[a];
                    for b in a..6 {
                        ch_h[a][b] += wrow * row[b];
                    }
                }
            }
        }
        cost.add(ch_cost);
        for a in 0..6 {
            acc.1[a].add(ch_g[a]);
            for b in a..6 {
                acc.0[a][b].add(ch_h[a][b]);
            }
        }
    }
    (finish_system(acc), cost.value(), valid)
}

/// Robust photometric cost (Huber over weighted squared residual norms)
/// and the number of anchors contributing at this level.
pub fn photometric_cost(
    pose: &Pose,
    bundle: &ReferenceBundle,
    query: &FeaturePyramid,
    level: usize,
    huber_delta: f64,
) -> (f64, usize) {
    let level_k = bundle.intrinsics.level(level).expect("validated at bundle creation");
    let inv = pose.inverse();
    let qf = query.feature(level);
    let qu = query.uncertainty(level);
    let mut value = vec![0.0; qf.channels];
    let mut cost = Kahan::default();
    let mut valid = 0usize;
    for chunk in bundle.anchors.chunks(REDUCTION_CHUNK) {
        let mut ch_cost = 0.0f64;
        for anchor in chunk {
            let Some((px, _)) = project_anchor(anchor, &inv, &level_k) else { continue };
            qf.sample_into(px.u, px.v, &mut value, None);
            let wq = qu.sample(px.u, px.v).expect("checked in bounds");
            let w = joint_weight(wq, anchor.ref_weights[level]);
            let mut rnorm_sq = 0.0;
            for (ch, v) in value.iter().enumerate() {
                let d = *v - anchor.ref_features[level][ch];
                rnorm_sq += d * d;
            }
            ch_cost += huber(w * rnorm_sq, huber_delta);
            valid += 1;
        }
        cost.add(ch_cost);
    }
    (cost.value(), valid)
}

/// Coarse-to-fine robust LM refinement of one hypothesis. Runs the
/// scheduled iterations per level with accept/reject damping; a hypothesis
/// that loses anchor support (or hits a singular system) keeps its pose
/// and is flagged with infinite cost.
pub fn refine(
    start: &Pose,
    bundle: &ReferenceBundle,
    query: &FeaturePyramid,
    sched: &RefineSchedule,
) -> Hypothesis {
    refine_with_stats(start, bundle, query, sched).0
}

fn refine_with_stats(
    start: &Pose,
    bundle: &ReferenceBundle,
    query: &FeaturePyramid,
    sched: &RefineSchedule,
) -> (Hypothesis, usize) {
    let mut pose = *start;
    let mut flagged = false;
    let mut accepted = 0usize;
    'levels: for level in 0..LEVELS {
        let level_k = bundle.intrinsics.level(level).expect("validated at bundle creation");
        let mut lambda = sched.lm_lambda_init;
        let (mut sys, mut cost, valid) =
            build_level_system(&pose, bundle, query, level, &level_k, sched.huber_delta);
        if valid < sched.min_anchors {
            flagged = true;
            break 'levels;
        }
        for _ in 0..sched.iterations_per_level[level] {
            let step = match lm_solve(&sys, lambda) {
                Ok(step) => step,
                Err(_) => {
                    flagged = true;
                    break 'levels;
                }
            };
            let candidate = step.exp().compose(&pose);
            let (cand_sys, cand_cost, cand_valid) =
                build_level_system(&candidate, bundle, query, level, &level_k, sched.huber_delta);
            if cand_valid >= sched.min_anchors && cand_cost < cost {
                pose = candidate;
                cost = cand_cost;
                sys = cand_sys;
                accepted += 1;
                lambda = (lambda * sched.lm_lambda_down).clamp(LAMBDA_MIN, LAMBDA_MAX);
            } else {
                lambda = (lambda * sched.lm_lambda_up).clamp(LAMBDA_MIN, LAMBDA_MAX);
            }
        }
    }
    let (fine_cost, fine_valid) = photometric_cost(&pose, bundle, query, 2, sched.huber_delta);
    let hyp = Hypothesis {
        pose,
        photometric_cost_fine: if flagged || fine_valid < sched.min_anchors {
            f64::INFINITY
        } else {
            fine_cost
        },
        total_cost: f64::INFINITY,
        valid_anchor_count: fine_valid,
    };
    (hyp, accepted)
}

/// Scores every hypothesis with `photometric + lambda * d_geodesic^2` to
/// the predicted pose and returns the argmin (ties break to the lowest
/// index). Flagged hypotheses never win.
pub fn select(
    hyps: &mut [Hypothesis],
    predicted: &Pose,
    lambda_motion: f64,
) -> Result<(Pose, usize)> {
    let mut best: Option<usize> = None;
    for i in 0..hyps.len() {
        if !hyps[i].is_valid() {
            hyps[i].total_cost = f64::INFINITY;
            continue;
        }
        let motion = match geodesic_distance_sq(predicted, &hyps[i].pose) {
            Ok(d) => d,
            Err(_) => {
                hyps[i].total_cost = f64::INFINITY;
                continue;
            }
        };
        hyps[i].total_cost = hyps[i].photometric_cost_fine + lambda_motion * motion;
        if best.map_or(true, |b| hyps[i].total_cost < hyps[b].total_cost) {
            best = Some(i);
        }
    }
    let idx = best.ok_or(Error::AllHypothesesInvalid)?;
    Ok((hyps[idx].pose, idx))
}

/// Full alignment cycle: generate hypotheses around `center`, refine them
/// all in parallel, select by total cost. Deterministic for a fixed seed
/// and fixed reduction chunking.
#[allow(clippy::too_many_arguments)]
pub fn run(
    center: &Pose,
    bundle: &ReferenceBundle,
    query: &FeaturePyramid,
    sampler_cfg: &SamplerConfig,
    sched: &RefineSchedule,
    predicted: &Pose,
    lambda_motion: f64,
) -> Result<(Pose, Vec<Hypothesis>, Diagnostics)> {
    let start = Instant::now();
    let seeds = generate_hypotheses(center, sampler_cfg)?;
    run_over_seeds(seeds, bundle, query, sched, predicted, lambda_motion, start)
}

/// [`run`] with caller-supplied seed poses; ablation arms swap the sampler.
pub fn run_with_seeds(
    seeds: Vec<Pose>,
    bundle: &ReferenceBundle,
    query: &FeaturePyramid,
    sched: &RefineSchedule,
    predicted: &Pose,
    lambda_motion: f64,
) -> Result<(Pose, Vec<Hypothesis>, Diagnostics)> {
    let start = Instant::now();
    run_over_seeds(seeds, bundle, query, sched, predicted, lambda_motion, start)
}

fn run_over_seeds(
    seeds: Vec<Pose>,
    bundle: &ReferenceBundle,
    query: &FeaturePyramid,
    sched: &RefineSchedule,
    predicted: &Pose,
    lambda_motion: f64,
    start: Instant,
) -> Result<(Pose, Vec<Hypothesis>, Diagnostics)> {
    let refined: Vec<(Hypothesis, usize)> = seeds
        .par_iter()
        .map(|seed| refine_with_stats(seed, bundle, query, sched))
        .collect();
    let accepted_steps: Vec<usize> = refined.iter().map(|(_, a)| *a).collect();
    let mut hyps: Vec<Hypothesis> = refined.into_iter().map(|(h, _)| h).collect();
    let (pose, selected_index) = select(&mut hyps, predicted, lambda_motion)?;
    let diagnostics = Diagnostics {
        photometric_costs: hyps.iter().map(|h| h.photometric_cost_fine).collect(),
        total_costs: hyps.iter().map(|h| h.total_cost).collect(),
        accepted_steps,
        selected_index,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok((pose, hyps, diagnostics))
}
