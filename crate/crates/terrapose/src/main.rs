//! Command-line front end. Exit codes: 0 success, 1 usage error,
//! 2 runtime failure, 3 acceptance-threshold failure (CI gating).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use terrapose::config::RunConfig;
use terrapose::engine::{self, ExecutionMode};
use terrapose::harness::{self, AblationAxis};
use terrapose::metrics::compute_target_recall;
use terrapose::se3::Pose;
use terrapose::target::{read_targets, track_targets};
use terrapose::trajectory::{
    read_ground_truth, read_results, write_ground_truth, write_results, FrameStatus,
    TrajectoryPattern,
};
use terrapose::world::{Scene, SceneSpec};
use terrapose::Error;

#[derive(Parser)]
#[command(name = "terrapose", version, about = "Terrain-referenced visual localization pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a run configuration with the given procedural scene block.
    GenScene {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 2000.0)]
        extent: f64,
        #[arg(long, default_value_t = 1.0)]
        roughness: f64,
        /// Also render a preview view and dump float images here.
        #[arg(long)]
        dump_dir: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Generate a ground-truth trajectory file.
    GenTraj {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config pattern with a preset: line, orbit, barrel-roll.
        #[arg(long)]
        pattern: Option<String>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run sequence localization and write the estimated trajectory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Ground-truth trajectory file (overrides the config pattern).
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Also write the ground truth actually used.
        #[arg(long)]
        write_gt: Option<PathBuf>,
        /// Overrides every run seed for one-command reproduction.
        #[arg(long)]
        seed: Option<u64>,
        /// Use the sequential oracle instead of the dual-thread engine.
        #[arg(long)]
        single_thread: bool,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Geolocate annotated target pixels from an estimated trajectory.
    Target {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Compute metrics from trajectory files.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the JSON report here (default: stdout).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Emit per-frame error SVG charts into this directory.
        #[arg(long)]
        plot: Option<PathBuf>,
        /// CI gates; any violation exits with code 3.
        #[arg(long)]
        max_median_m: Option<f64>,
        #[arg(long)]
        max_median_deg: Option<f64>,
        #[arg(long)]
        min_completeness: Option<f64>,
    },
    /// Toggle one system component and report recall per noise level.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// rotation-aware | motion-reg | multi-hypothesis
        #[arg(long, value_parser = parse_axis)]
        axis: AblationAxis,
        #[arg(long, value_delimiter = ',', default_values_t = vec![3.0, 5.0, 10.0])]
        levels: Vec<f64>,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 12)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Gate the expected trends (exit 3 on violation).
        #[arg(long)]
        gate: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Finite-difference audit of the analytic alignment Jacobian.
    JacobianCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn parse_axis(s: &str) -> std::result::Result<AblationAxis, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> terrapose::Result<u8> {
    match cli.cmd {
        Cmd::GenScene { seed, extent, roughness, dump_dir, output } => {
            let mut cfg = RunConfig::default();
            cfg.scene = SceneSpec { seed, extent_m: extent, roughness, ..SceneSpec::default() };
            cfg.save(&output)?;
            println!("wrote {}", output.display());
            if let Some(dir) = dump_dir {
                let scene = Scene::build(&cfg.scene);
                let pose = cfg.ground_truth()?[0];
                let view = scene.render(&pose, &cfg.intrinsics())?;
                view.dump(&dir, "preview")?;
                println!("dumped preview channels to {}", dir.display());
            }
            Ok(0)
        }
        Cmd::GenTraj { config, pattern, frames, output } => {
            let cfg = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            let n = frames.unwrap_or(cfg.trajectory.frames);
            let pat = match pattern.as_deref() {
                None => cfg.trajectory.pattern.clone(),
                Some("line") => TrajectoryPattern::Line {
                    start: [-500.0, 0.0, 200.0],
                    velocity: [2.0, 0.0, 0.0],
                    depression_deg: 50.0,
                },
                Some("orbit") => TrajectoryPattern::Orbit {
                    center: [0.0, 0.0],
                    radius_m: 400.0,
                    altitude_m: 220.0,
                    step_deg: 0.5,
                    depression_deg: 35.0,
                },
                Some("barrel-roll") => TrajectoryPattern::BarrelRoll {
                    center: [0.0, 0.0],
                    radius_m: 400.0,
                    altitude_m: 220.0,
                    altitude_swing_m: 25.0,
                    step_deg: 0.5,
                    depression_deg: 40.0,
                    attitude_step_deg: 3.0,
                    step_every: 25,
                },
                Some(other) => {
                    return Err(Error::Config(format!(
                        "unknown pattern {other:?} (line, orbit, barrel-roll)"
                    )))
                }
            };
            write_ground_truth(&output, &pat.generate(n))?;
            println!("wrote {n} frames to {}", output.display());
            Ok(0)
        }
        Cmd::Run { config, gt, write_gt, seed, single_thread, output } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(gt_path) = gt {
                cfg.trajectory.file = Some(gt_path);
            }
            let mode = if single_thread {
                ExecutionMode::SingleThread
            } else {
                ExecutionMode::DualThread
            };
            let out = harness::run_from_config(&cfg, mode, seed)?;
            write_results(&output, &out.records)?;
            if let Some(path) = write_gt {
                write_ground_truth(&path, &out.ground_truth)?;
            }
            let localized = out.results.iter().filter(|r| r.localized()).count();
            println!(
                "localized {}/{} frames, wrote {}",
                localized,
                out.results.len(),
                output.display()
            );
            Ok(0)
        }
        Cmd::Target { config, results, targets, output } => {
            let cfg = RunConfig::load(&config)?;
            let scene = Scene::build(&cfg.scene);
            let k = cfg.intrinsics();
            let records = read_results(&results)?;
            let frame_results: Vec<engine::FrameResult> = records
                .iter()
                .map(|r| engine::FrameResult {
                    frame_index: r.frame_index,
                    status: r.status,
                    pose: (r.status == FrameStatus::Localized).then_some(r.pose),
                    predicted_pose: r.pose,
                    photometric_cost: Some(r.cost),
                    hypothesis_index: None,
                    latency_ms: r.latency_ms,
                    bundle_frame: r.frame_index,
                    bundle_source_frame: -1,
                    bundle_fallback: false,
                })
                .collect();
            let specs = read_targets(&targets)?;
            let observations = track_targets(&frame_results, &specs, &scene, &k)?;

            use std::io::Write;
            let mut w = std::io::BufWriter::new(std::fs::File::create(&output)?);
            writeln!(w, "# frame_index,u,v,status,x,y,z")?;
            for o in &observations {
                match o.world_estimate {
                    Some(p) => writeln!(
                        w,
                        "{},{:.3},{:.3},hit,{:.6},{:.6},{:.6}",
                        o.frame_index, o.pixel.u, o.pixel.v, p.x, p.y, p.z
                    )?,
                    None => {
                        writeln!(w, "{},{:.3},{:.3},miss,,,", o.frame_index, o.pixel.u, o.pixel.v)?
                    }
                }
            }
            drop(w);

            let with_gt: Vec<Option<f64>> = specs
                .iter()
                .zip(&observations)
                .filter(|(s, _)| s.ground_truth.is_some())
                .map(|(s, o)| o.world_estimate.map(|e| (e - s.ground_truth.unwrap()).norm()))
                .collect();
            if !with_gt.is_empty() {
                let report = compute_target_recall(&with_gt, &[1.0, 3.0, 5.0]);
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            }
            println!("wrote {} observations to {}", observations.len(), output.display());
            Ok(0)
        }
        Cmd::Eval {
            results,
            gt,
            config,
            output,
            plot,
            max_median_m,
            max_median_deg,
            min_completeness,
        } => {
            let cfg = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            let records = read_results(&results)?;
            let gt_poses: Vec<Pose> = read_ground_truth(&gt)?;
            let report = harness::evaluate(&records, &gt_poses, &cfg)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            match &output {
                Some(path) => std::fs::write(path, &json)?,
                None => println!("{json}"),
            }
            if let Some(dir) = plot {
                harness::write_error_plots(&report, &dir)?;
                println!("wrote error charts to {}", dir.display());
            }
            let mut gate_failed = false;
            if let Some(limit) = max_median_m {
                gate_failed |= report.median_translation_err_m.map_or(true, |m| m > limit);
            }
            if let Some(limit) = max_median_deg {
                gate_failed |= report.median_rotation_err_deg.map_or(true, |d| d > limit);
            }
            if let Some(limit) = min_completeness {
                gate_failed |= report.completeness_percent < limit;
            }
            Ok(if gate_failed { 3 } else { 0 })
        }
        Cmd::Ablate { config, axis, levels, trials, frames, seed, gate, output } => {
            let cfg = RunConfig::load(&config)?;
            let table = harness::run_ablation(&cfg, axis, &levels, trials, frames, seed)?;
            let text = table.to_string();
            match &output {
                Some(path) => std::fs::write(path, &text)?,
                None => print!("{text}"),
            }
            if gate {
                let violated = match axis {
                    AblationAxis::RotationAware => {
                        let last = table.noise_levels.len() - 1;
                        table.on_recall[last] - table.off_recall[last] < 20.0
                    }
                    AblationAxis::MotionReg => {
                        let max = table.on_recall.iter().cloned().fold(f64::MIN, f64::max);
                        let min = table.on_recall.iter().cloned().fold(f64::MAX, f64::min);
                        max - min > 5.0
                    }
                    AblationAxis::MultiHypothesis => {
                        let last = table.noise_levels.len() - 1;
                        table.on_recall[last] <= table.off_recall[last]
                    }
                };
                return Ok(if violated { 3 } else { 0 });
            }
            Ok(0)
        }
        Cmd::JacobianCheck { seed, samples, tolerance } => {
            let check = harness::jacobian_check(seed, samples)?;
            for (level, err) in check.per_level_max_rel_err.iter().enumerate() {
                println!(
                    "level {level}: max relative error {err:.3e} over {} samples",
                    check.samples_per_level
                );
            }
            println!(
                "overall max relative error {:.3e} (tolerance {tolerance:.1e})",
                check.max_rel_err
            );
            Ok(if check.passes(tolerance) { 0 } else { 3 })
        }
    }
}
