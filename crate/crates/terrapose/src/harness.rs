//! Orchestration: config-driven runs, the finite-difference Jacobian
//! audit, motion-weight calibration, single-trial basin probes, and the
//! ablation harness.

use std::fmt;

use nalgebra::Vector6;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::align::{self, SamplerConfig};
use crate::camera::Intrinsics;
use crate::config::RunConfig;
use crate::engine::{
    self, derive_seed, make_bundle, query_render, Degradation, ExecutionMode, FrameResult,
    SamplerMode,
};
use crate::error::Result;
use crate::metrics::{compute_metrics, pose_error, MetricsReport};
use crate::plot::{line_chart, Series};
use crate::pyramid::LEVELS;
use crate::se3::{Pose, Twist};
use crate::trajectory::{camera_attitude, FrameRecord};
use crate::world::{Scene, SceneSpec};

/// Outcome of the finite-difference Jacobian audit.
#[derive(Debug, Clone)]
pub struct JacobianCheck {
    pub samples_per_level: usize,
    pub per_level_max_rel_err: [f64; LEVELS],
    pub max_rel_err: f64,
}

impl JacobianCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

/// Compares the analytic residual Jacobian against central finite
/// differences over the six twist coordinates, on `samples_per_level`
/// random (scene, pose, anchor) triples per pyramid level. Samples whose
/// projection sits within 0.05 px of a bilinear cell boundary are redrawn:
/// the gradient is genuinely discontinuous there.
pub fn jacobian_check(seed: u64, samples_per_level: usize) -> Result<JacobianCheck> {
    const SCENES: usize = 4;
    let k = Intrinsics::centered(128.0, 128, 128);
    let mut setups = Vec::new();
    for s in 0..SCENES {
        let spec = SceneSpec { seed: seed.wrapping_add(s as u64), ..SceneSpec::default() };
        let scene = Scene::build(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 17, s as u64));
        let pose = Pose::from_parts(
            camera_attitude(rng.gen::<f64>() * 6.28, 0.6 + rng.gen::<f64>() * 0.9),
            nalgebra::Vector3::new(
                (rng.gen::<f64>() - 0.5) * 400.0,
                (rng.gen::<f64>() - 0.5) * 400.0,
                160.0 + rng.gen::<f64>() * 80.0,
            ),
        );
        let bundle = make_bundle(&scene, &pose, &k, 300, derive_seed(seed, 18, s as u64), 0, -1)?;
        let query = query_render(
            &scene,
            &engine::perturb_pose(&pose, 2.0, 1.5, false, derive_seed(seed, 19, s as u64)),
            &k,
            &Degradation::default(),
            0,
        )?;
        setups.push((pose, bundle, query));
    }

    let h = 1e-6;
    let mut per_level = [0.0f64; LEVELS];
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 20, 0));
    for (level, slot) in per_level.iter_mut().enumerate() {
        let mut checked = 0;
        let mut attempts = 0;
        while checked < samples_per_level {
            attempts += 1;
            assert!(attempts < samples_per_level * 200, "sampling starved at level {level}");
            let (base_pose, bundle, query) = &setups[rng.gen_range(0..SCENES)];
            let anchor = &bundle.anchors[rng.gen_range(0..bundle.anchors.len())];
            let pose = engine::perturb_pose(
                base_pose,
                rng.gen::<f64>() * 3.0,
                rng.gen::<f64>() * 2.0,
                false,
                rng.gen(),
            );
            let level_k = bundle.intrinsics.level(level).expect("dims validated");

            // reject samples on bilinear cell boundaries
            let inv = pose.inverse();
            let cam = inv.apply(&anchor.world_point);
            if cam.z <= 1e-6 {
                continue;
            }
            let Ok(px) = level_k.project(&cam) else { continue };
            let frac_ok = |x: f64| {
                let f = x.fract();
                f > 0.05 && f < 0.95
            };
            if !frac_ok(px.u) || !frac_ok(px.v) {
                continue;
            }

            let Some(term) = align::residual(anchor, level, &level_k, &pose, query) else {
                continue;
            };
            let mut fd_ok = true;
            let mut max_abs_diff = 0.0f64;
            for axis in 0..6 {
                let mut dv = Vector6::zeros();
                dv[axis] = h;
                let plus_pose = Twist::from_vector(&dv).exp().compose(&pose);
                let minus_pose = Twist::from_vector(&(-dv)).exp().compose(&pose);
                let (Some(plus), Some(minus)) = (
                    align::residual(anchor, level, &level_k, &plus_pose, query),
                    align::residual(anchor, level, &level_k, &minus_pose, query),
                ) else {
                    fd_ok = false;
                    break;
                };
                for c in 0..term.residual.len() {
                    let fd = (plus.residual[c] - minus.residual[c]) / (2.0 * h);
                    max_abs_diff = max_abs_diff.max((fd - term.jacobian[(c, axis)]).abs());
                }
            }
            if !fd_ok {
                continue;
            }
            let scale = term.jacobian.amax().max(1e-9);
            *slot = slot.max(max_abs_diff / scale);
            checked += 1;
        }
    }
    Ok(JacobianCheck {
        samples_per_level,
        per_level_max_rel_err: per_level,
        max_rel_err: per_level.iter().cloned().fold(0.0, f64::max),
    })
}

/// Calibrates the motion-regularizer weight: the median fine-level
/// photometric cost of poses displaced `deviation_m` from the prediction,
/// scaled so the motion term reaches that cost at the initial-noise bound
/// rather than at the probe deviation (a weight that large would veto
/// legitimate first-frame recoveries).
pub fn calibrate_lambda_motion(cfg: &RunConfig, samples: usize, seed: u64) -> Result<f64> {
    let deviation_m = 2.0;
    let equalize_at_m = (2.0 * cfg.noise.init_trans_m).max(deviation_m);
    let scene = Scene::build(&cfg.scene);
    let k = cfg.intrinsics();
    let pose = cfg.ground_truth()?[0];
    let bundle = make_bundle(&scene, &pose, &k, cfg.jngo.n_anchors, derive_seed(seed, 21, 0), 0, -1)?;
    let query = query_render(&scene, &pose, &k, &cfg.degradation(), derive_seed(seed, 22, 0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 23, 0));
    let mut costs: Vec<f64> = (0..samples)
        .map(|_| {
            let dir = loop {
                let v = nalgebra::Vector3::new(
                    rng.gen::<f64>() * 2.0 - 1.0,
                    rng.gen::<f64>() * 2.0 - 1.0,
                    rng.gen::<f64>() * 2.0 - 1.0,
                );
                if v.norm() > 1e-3 && v.norm() <= 1.0 {
                    break v.normalize();
                }
            };
            let displaced = Pose::from_parts(*pose.rotation(), pose.translation() + dir * deviation_m);
            align::photometric_cost(&displaced, &bundle, &query, 2, cfg.jngo.huber_delta).0
        })
        .collect();
    costs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = costs[costs.len() / 2];
    Ok(median / (equalize_at_m * equalize_at_m))
}

/// Runs a sequence from a config and packages results with ground truth.
pub struct RunOutput {
    pub results: Vec<FrameResult>,
    pub records: Vec<FrameRecord>,
    pub ground_truth: Vec<Pose>,
}

pub fn run_from_config(
    cfg: &RunConfig,
    mode: ExecutionMode,
    seed_override: Option<u64>,
) -> Result<RunOutput> {
    let seq = cfg.to_sequence_config(seed_override)?;
    let results = engine::run_sequence(&seq, mode)?;
    let records = results.iter().map(|r| r.to_record()).collect();
    Ok(RunOutput { results, records, ground_truth: seq.trajectory })
}

/// One worst-case recovery trial: the reference bundle is rendered from a
/// prior displaced by exactly `trans_m` meters and `yaw_deg` degrees of
/// yaw from the ground truth, the query is rendered at the truth, and the
/// full multi-hypothesis alignment runs once.
pub fn wide_basin_trial(
    cfg: &RunConfig,
    scene: &Scene,
    gt_pose: &Pose,
    trans_m: f64,
    yaw_deg: f64,
    degradation: &Degradation,
    seed: u64,
) -> Result<(f64, f64)> {
    let k = cfg.intrinsics();
    let prior = engine::perturb_pose(gt_pose, trans_m, yaw_deg, true, derive_seed(seed, 31, 0));
    let bundle = make_bundle(scene, &prior, &k, cfg.jngo.n_anchors, derive_seed(seed, 32, 0), 0, -1)?;
    let query = query_render(scene, gt_pose, &k, degradation, derive_seed(seed, 33, 0))?;
    let sampler = SamplerConfig { rng_seed: derive_seed(seed, 34, 0), ..cfg.sampler() };
    let (pose, _, _) = align::run(
        &prior,
        &bundle,
        &query,
        &sampler,
        &cfg.schedule(),
        &prior,
        cfg.jngo.lambda_motion,
    )?;
    Ok(pose_error(&pose, gt_pose))
}

/// Ablation axes mirroring the system-component rows of the evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    /// Anisotropic pitch/yaw grid vs isotropic-tight sampling.
    RotationAware,
    /// Calibrated motion regularizer vs lambda = 0.
    MotionReg,
    /// Full swarm vs single-hypothesis LM.
    MultiHypothesis,
}

impl std::str::FromStr for AblationAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "rotation-aware" | "rotation_aware" => Ok(Self::RotationAware),
            "motion-reg" | "motion_reg" => Ok(Self::MotionReg),
            "multi-hypothesis" | "multi_hypothesis" => Ok(Self::MultiHypothesis),
            other => Err(format!(
                "unknown axis {other:?} (expected rotation-aware, motion-reg or multi-hypothesis)"
            )),
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Self::RotationAware => "rotation-aware",
            Self::MotionReg => "motion-reg",
            Self::MultiHypothesis => "multi-hypothesis",
        };
        write!(f, "{name}")
    }
}

/// Recall@(1 m, 1 deg) per noise level for the toggled component.
#[derive(Debug, Clone)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub noise_levels: Vec<f64>,
    pub on_recall: Vec<f64>,
    pub off_recall: Vec<f64>,
    pub trials: usize,
    pub frames_per_trial: usize,
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "ablation axis: {} ({} trials x {} frames per cell, recall @ 1 m / 1 deg)",
            self.axis, self.trials, self.frames_per_trial
        )?;
        write!(f, "{:<14}", "setting")?;
        for n in &self.noise_levels {
            write!(f, " | {:>12}", format!("{n:.0} m/{n:.0} deg"))?;
        }
        writeln!(f)?;
        write!(f, "{:<14}", "on")?;
        for r in &self.on_recall {
            write!(f, " | {r:>11.1}%")?;
        }
        writeln!(f)?;
        write!(f, "{:<14}", "off")?;
        for r in &self.off_recall {
            write!(f, " | {r:>11.1}%")?;
        }
        writeln!(f)
    }
}

fn ablation_cell(
    base: &RunConfig,
    axis: AblationAxis,
    on: bool,
    noise_level: f64,
    trials: usize,
    frames: usize,
    seed: u64,
) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for trial in 0..trials {
        let mut cfg = base.clone();
        cfg.trajectory.frames = frames;
        cfg.noise.init_trans_m = noise_level;
        cfg.noise.init_rot_deg = noise_level;
        if axis == AblationAxis::MotionReg && !on {
            cfg.jngo.lambda_motion = 0.0;
        }
        let mut seq = cfg.to_sequence_config(Some(derive_seed(
            seed,
            40 + axis as u64 * 2 + on as u64,
            trial as u64,
        )))?;
        seq.sampler_mode = match (axis, on) {
            (AblationAxis::RotationAware, false) => SamplerMode::IsotropicTight,
            (AblationAxis::MultiHypothesis, false) => SamplerMode::SingleHypothesis,
            _ => SamplerMode::RotationAwareGrid,
        };
        let results = engine::run_sequence(&seq, ExecutionMode::SingleThread)?;
        for r in &results {
            total += 1;
            if let Some(pose) = &r.pose {
                let (t, rot) = pose_error(pose, &seq.trajectory[r.frame_index]);
                if t <= 1.0 && rot <= 1.0 {
                    hits += 1;
                }
            }
        }
    }
    Ok(100.0 * hits as f64 / total.max(1) as f64)
}

/// Runs the ablation: short sequences (default geometry from the base
/// config) at each initial-noise level, with the axis toggled on/off.
pub fn run_ablation(
    base: &RunConfig,
    axis: AblationAxis,
    noise_levels: &[f64],
    trials: usize,
    frames: usize,
    seed: u64,
) -> Result<AblationTable> {
    let mut on_recall = Vec::new();
    let mut off_recall = Vec::new();
    for (i, level) in noise_levels.iter().enumerate() {
        on_recall.push(ablation_cell(base, axis, true, *level, trials, frames, seed.wrapping_add(i as u64))?);
        off_recall.push(ablation_cell(base, axis, false, *level, trials, frames, seed.wrapping_add(i as u64))?);
    }
    Ok(AblationTable {
        axis,
        noise_levels: noise_levels.to_vec(),
        on_recall,
        off_recall,
        trials,
        frames_per_trial: frames,
    })
}

/// Writes per-frame translation and rotation error curves as SVG charts.
pub fn write_error_plots(report: &MetricsReport, dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let split_series = |pick: fn(&crate::metrics::FrameError) -> Option<f64>| -> Vec<Vec<(f64, f64)>> {
        let mut segments = Vec::new();
        let mut current = Vec::new();
        for frame in &report.per_frame {
            match pick(frame) {
                Some(v) => current.push((frame.frame_index as f64, v)),
                None => {
                    if !current.is_empty() {
                        segments.push(std::mem::take(&mut current));
                    }
                }
            }
        }
        if !current.is_empty() {
            segments.push(current);
        }
        segments
    };

    let trans_segments = split_series(|f| f.trans_m);
    let series: Vec<Series<'_>> = trans_segments
        .iter()
        .enumerate()
        .map(|(i, points)| Series {
            label: if i == 0 { "translation error" } else { "" },
            color: "#1f77b4",
            points: points.clone(),
        })
        .collect();
    line_chart(&dir.join("translation_error.svg"), "per-frame translation error", "frame", "error (m)", &series)?;

    let rot_segments = split_series(|f| f.rot_deg);
    let series: Vec<Series<'_>> = rot_segments
        .iter()
        .enumerate()
        .map(|(i, points)| Series {
            label: if i == 0 { "rotation error" } else { "" },
            color: "#d62728",
            points: points.clone(),
        })
        .collect();
    line_chart(&dir.join("rotation_error.svg"), "per-frame rotation error", "frame", "error (deg)", &series)?;
    Ok(())
}

/// Evaluates a finished run against its ground truth.
pub fn evaluate(records: &[FrameRecord], gt: &[Pose], cfg: &RunConfig) -> Result<MetricsReport> {
    compute_metrics(records, gt, &cfg.thresholds())
}
