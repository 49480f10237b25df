//! Ground-truth flight patterns, camera attitude construction, and the
//! trajectory wire formats.
//!
//! World frame: x east, y north, z up. A camera attitude is built from a
//! heading (about world z) and a depression angle (tilt below horizontal);
//! depression pi/2 looks straight down.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::Pose;

/// Rotation mapping camera axes (x right, y down, z forward) into the
/// world for a level, heading-0 camera looking along +x.
fn level_forward_attitude() -> Rotation3<f64> {
    Rotation3::from_matrix_unchecked(Matrix3::new(
        0.0, 0.0, 1.0, //
        -1.0, 0.0, 0.0, //
        0.0, -1.0, 0.0,
    ))
}

/// Camera attitude from heading (rad, about world z, 0 = +x) and
/// depression (rad below horizontal; pi/2 = nadir).
pub fn camera_attitude(heading: f64, depression: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), heading)
        * level_forward_attitude()
        * Rotation3::from_axis_angle(&Vector3::x_axis(), -depression)
}

/// Ground-truth trajectory patterns for `gen-traj`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "snake_case")]
pub enum TrajectoryPattern {
    /// Straight constant-velocity cruise.
    Line {
        start: [f64; 3],
        /// Meters per frame.
        velocity: [f64; 3],
        depression_deg: f64,
    },
    /// Horizontal orbit around a center, camera looking inward.
    Orbit {
        center: [f64; 2],
        radius_m: f64,
        altitude_m: f64,
        /// Degrees of arc per frame.
        step_deg: f64,
        depression_deg: f64,
    },
    /// Orbit combined with step-wise pitch/yaw offsets and an altitude
    /// swing; exercises all six degrees of freedom.
    BarrelRoll {
        center: [f64; 2],
        radius_m: f64,
        altitude_m: f64,
        altitude_swing_m: f64,
        step_deg: f64,
        depression_deg: f64,
        /// Step-wise offset applied to depression and heading (deg),
        /// cycling every `step_every` frames.
        attitude_step_deg: f64,
        step_every: usize,
    },
}

impl TrajectoryPattern {
    /// Generates `frames` ground-truth poses.
    pub fn generate(&self, frames: usize) -> Vec<Pose> {
        let cycle = [0.0, 1.0, 0.0, -1.0];
        (0..frames)
            .map(|i| match self {
                TrajectoryPattern::Line { start, velocity, depression_deg } => {
                    let pos = Vector3::from(*start) + Vector3::from(*velocity) * i as f64;
                    let heading = velocity[1].atan2(velocity[0]);
                    Pose::from_parts(camera_attitude(heading, depression_deg.to_radians()), pos)
                }
                TrajectoryPattern::Orbit { center, radius_m, altitude_m, step_deg, depression_deg } => {
                    let angle = step_deg.to_radians() * i as f64;
                    let pos = Vector3::new(
                        center[0] + radius_m * angle.cos(),
                        center[1] + radius_m * angle.sin(),
                        *altitude_m,
                    );
                    // camera looks at the orbit center
                    let heading = (center[1] - pos.y).atan2(center[0] - pos.x);
                    Pose::from_parts(camera_attitude(heading, depression_deg.to_radians()), pos)
                }
                TrajectoryPattern::BarrelRoll {
                    center,
                    radius_m,
                    altitude_m,
                    altitude_swing_m,
                    step_deg,
                    depression_deg,
                    attitude_step_deg,
                    step_every,
                } => {
                    let angle = step_deg.to_radians() * i as f64;
                    let phase = 2.0 * std::f64::consts::PI * i as f64 / (frames.max(2) as f64);
                    let pos = Vector3::new(
                        center[0] + radius_m * angle.cos(),
                        center[1] + radius_m * angle.sin(),
                        altitude_m + altitude_swing_m * phase.sin(),
                    );
                    let step = cycle[(i / (*step_every).max(1)) % cycle.len()] * attitude_step_deg;
                    let heading = (center[1] - pos.y).atan2(center[0] - pos.x) + step.to_radians();
                    let depression = depression_deg.to_radians() + step.to_radians();
                    Pose::from_parts(camera_attitude(heading, depression), pos)
                }
            })
            .collect()
    }
}

/// Whether a frame produced a pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameStatus {
    Localized,
    Failed,
}

/// One row of an estimated-trajectory file. Failed rows carry the coasted
/// prediction in the pose columns; consumers must honor `status`.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub frame_index: usize,
    pub status: FrameStatus,
    pub pose: Pose,
    pub cost: f64,
    pub latency_ms: f64,
}

fn fmt_pose_fields(pose: &Pose) -> String {
    let (pos, q) = pose.to_quaternion_parts();
    format!(
        "{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
        pos.x, pos.y, pos.z, q[0], q[1], q[2], q[3]
    )
}

fn parse_pose_fields(fields: &[&str]) -> Option<Pose> {
    let nums: Vec<f64> = fields.iter().filter_map(|f| f.trim().parse().ok()).collect();
    if nums.len() != 7 {
        return None;
    }
    Some(Pose::from_quaternion_parts(
        Vector3::new(nums[0], nums[1], nums[2]),
        [nums[3], nums[4], nums[5], nums[6]],
    ))
}

/// Writes `frame_index,x,y,z,qw,qx,qy,qz` rows with a header line.
pub fn write_ground_truth(path: &Path, poses: &[Pose]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "frame_index,x,y,z,qw,qx,qy,qz")?;
    for (i, pose) in poses.iter().enumerate() {
        writeln!(w, "{},{}", i, fmt_pose_fields(pose))?;
    }
    Ok(())
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<Pose>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut poses = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || t.starts_with("frame_index") {
            continue;
        }
        let fields: Vec<&str> = t.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("expected 8 fields, got {}", fields.len()),
            });
        }
        let pose = parse_pose_fields(&fields[1..]).ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: "bad pose fields".into(),
        })?;
        poses.push(pose);
    }
    Ok(poses)
}

/// Writes `frame_index,status,x,y,z,qw,qx,qy,qz,cost,latency_ms` rows.
pub fn write_results(path: &Path, records: &[FrameRecord]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "frame_index,status,x,y,z,qw,qx,qy,qz,cost,latency_ms")?;
    for r in records {
        let status = match r.status {
            FrameStatus::Localized => "localized",
            FrameStatus::Failed => "failed",
        };
        writeln!(
            w,
            "{},{},{},{:.6},{:.3}",
            r.frame_index,
            status,
            fmt_pose_fields(&r.pose),
            r.cost,
            r.latency_ms
        )?;
    }
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<FrameRecord>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || t.starts_with("frame_index") {
            continue;
        }
        let fields: Vec<&str> = t.split(',').collect();
        if fields.len() != 11 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("expected 11 fields, got {}", fields.len()),
            });
        }
        let parse_err = |msg: &str| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: msg.into(),
        };
        let frame_index: usize = fields[0].trim().parse().map_err(|_| parse_err("bad frame index"))?;
        let status = match fields[1].trim() {
            "localized" => FrameStatus::Localized,
            "failed" => FrameStatus::Failed,
            other => return Err(parse_err(&format!("bad status {other:?}"))),
        };
        let pose = parse_pose_fields(&fields[2..9]).ok_or_else(|| parse_err("bad pose fields"))?;
        let cost: f64 = fields[9].trim().parse().map_err(|_| parse_err("bad cost"))?;
        let latency_ms: f64 = fields[10].trim().parse().map_err(|_| parse_err("bad latency"))?;
        records.push(FrameRecord { frame_index, status, pose, cost, latency_ms });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn nadir_attitude_looks_down() {
        let r = camera_attitude(0.0, std::f64::consts::FRAC_PI_2);
        let forward = r * Vector3::z();
        assert!((forward - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oblique_attitude_heading_and_tilt() {
        let heading = 0.7;
        let depression = 0.9;
        let r = camera_attitude(heading, depression);
        let forward = r * Vector3::z();
        assert_relative_eq!(forward.y.atan2(forward.x), heading, epsilon = 1e-12);
        assert_relative_eq!((-forward.z).asin(), depression, epsilon = 1e-12);
    }

    #[test]
    fn line_pattern_is_constant_velocity() {
        let pattern = TrajectoryPattern::Line {
            start: [0.0, 0.0, 200.0],
            velocity: [2.0, 0.5, 0.0],
            depression_deg: 50.0,
        };
        let poses = pattern.generate(10);
        for i in 1..10 {
            let step = poses[i].translation() - poses[i - 1].translation();
            assert!((step - Vector3::new(2.0, 0.5, 0.0)).norm() < 1e-12);
            assert_eq!(poses[i].rotation().matrix(), poses[0].rotation().matrix());
        }
    }

    #[test]
    fn orbit_stays_on_circle() {
        let pattern = TrajectoryPattern::Orbit {
            center: [100.0, -50.0],
            radius_m: 300.0,
            altitude_m: 250.0,
            step_deg: 1.5,
            depression_deg: 45.0,
        };
        for pose in pattern.generate(100) {
            let d = ((pose.translation().x - 100.0).powi(2) + (pose.translation().y + 50.0).powi(2)).sqrt();
            assert_relative_eq!(d, 300.0, epsilon = 1e-9);
            assert_eq!(pose.translation().z, 250.0);
        }
    }

    #[test]
    fn barrel_roll_varies_all_axes() {
        let pattern = TrajectoryPattern::BarrelRoll {
            center: [0.0, 0.0],
            radius_m: 200.0,
            altitude_m: 220.0,
            altitude_swing_m: 30.0,
            step_deg: 1.0,
            depression_deg: 50.0,
            attitude_step_deg: 4.0,
            step_every: 10,
        };
        let poses = pattern.generate(80);
        let zs: Vec<f64> = poses.iter().map(|p| p.translation().z).collect();
        assert!(zs.iter().cloned().fold(f64::MIN, f64::max) - zs.iter().cloned().fold(f64::MAX, f64::min) > 10.0);
        // attitude steps actually change the rotation
        assert!(poses[0].rotation().matrix() != poses[15].rotation().matrix());
    }

    #[test]
    fn trajectory_files_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let gt_path = dir.path().join("gt.csv");
        let est_path = dir.path().join("est.csv");
        let pattern = TrajectoryPattern::Line {
            start: [1.0, 2.0, 150.0],
            velocity: [1.0, 0.0, 0.0],
            depression_deg: 60.0,
        };
        let poses = pattern.generate(5);
        write_ground_truth(&gt_path, &poses).unwrap();
        let back = read_ground_truth(&gt_path).unwrap();
        assert_eq!(back.len(), 5);
        for (a, b) in poses.iter().zip(&back) {
            assert!((a.to_homogeneous() - b.to_homogeneous()).norm() < 1e-8);
        }

        let records: Vec<FrameRecord> = poses
            .iter()
            .enumerate()
            .map(|(i, p)| FrameRecord {
                frame_index: i,
                status: if i == 3 { FrameStatus::Failed } else { FrameStatus::Localized },
                pose: *p,
                cost: if i == 3 { f64::INFINITY } else { 0.5 * i as f64 },
                latency_ms: 12.0,
            })
            .collect();
        write_results(&est_path, &records).unwrap();
        let back = read_results(&est_path).unwrap();
        assert_eq!(back.len(), 5);
        assert_eq!(back[3].status, FrameStatus::Failed);
        assert!(back[3].cost.is_infinite());
        assert_eq!(back[2].status, FrameStatus::Localized);
        assert!((back[2].cost - 1.0).abs() < 1e-6);
    }
}
