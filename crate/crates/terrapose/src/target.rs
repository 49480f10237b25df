//! Pixel-to-world target geolocation: cast a camera ray through an
//! annotated query pixel from the estimated pose and intersect the map.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::camera::{Intrinsics, PixelPoint};
use crate::engine::FrameResult;
use crate::error::{Error, Result};
use crate::se3::Pose;
use crate::world::Scene;

/// World-coordinate estimate for one annotated pixel; `None` marks a miss
/// (ray left the map or the frame had no pose).
#[derive(Debug, Clone)]
pub struct TargetObservation {
    pub frame_index: usize,
    pub pixel: PixelPoint,
    pub world_estimate: Option<Vector3<f64>>,
}

impl TargetObservation {
    pub fn is_hit(&self) -> bool {
        self.world_estimate.is_some()
    }
}

/// One annotation row: frame, pixel, optional ground-truth position.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    pub frame_index: usize,
    pub pixel: PixelPoint,
    pub ground_truth: Option<Vector3<f64>>,
}

/// Casts the camera ray through pixel `p` into the scene.
pub fn pixel_to_world(pose: &Pose, k: &Intrinsics, p: &PixelPoint, scene: &Scene) -> TargetObservation {
    debug_assert!(p.u >= 0.0 && p.v >= 0.0 && p.u <= k.width as f64 - 1.0 && p.v <= k.height as f64 - 1.0);
    let dir_world = pose.rotation() * k.ray_direction(p);
    TargetObservation {
        frame_index: 0,
        pixel: *p,
        world_estimate: scene.raycast(pose.translation(), &dir_world).ok(),
    }
}

/// Geolocates every annotation against its frame's estimated pose; failed
/// frames yield misses.
pub fn track_targets(
    results: &[FrameResult],
    targets: &[TargetSpec],
    scene: &Scene,
    k: &Intrinsics,
) -> Result<Vec<TargetObservation>> {
    targets
        .iter()
        .map(|t| {
            let frame = results
                .iter()
                .find(|r| r.frame_index == t.frame_index)
                .ok_or(Error::UnknownFrame(t.frame_index))?;
            let obs = match frame.pose {
                Some(pose) => {
                    let mut o = pixel_to_world(&pose, k, &t.pixel, scene);
                    o.frame_index = t.frame_index;
                    o
                }
                None => TargetObservation {
                    frame_index: t.frame_index,
                    pixel: t.pixel,
                    world_estimate: None,
                },
            };
            Ok(obs)
        })
        .collect()
}

/// Reads `frame_index,u,v[,x,y,z]` rows; `#` starts a comment.
pub fn read_targets(path: &Path) -> Result<Vec<TargetSpec>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = t
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        match fields.len() {
            3 => out.push(TargetSpec {
                frame_index: fields[0] as usize,
                pixel: PixelPoint::new(fields[1], fields[2]),
                ground_truth: None,
            }),
            6 => out.push(TargetSpec {
                frame_index: fields[0] as usize,
                pixel: PixelPoint::new(fields[1], fields[2]),
                ground_truth: Some(Vector3::new(fields[3], fields[4], fields[5])),
            }),
            n => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: format!("expected 3 or 6 fields, got {n}"),
                })
            }
        }
    }
    Ok(out)
}

pub fn write_targets(path: &Path, targets: &[TargetSpec]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# frame_index,u,v[,x,y,z]")?;
    for t in targets {
        match t.ground_truth {
            Some(g) => writeln!(
                w,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                t.frame_index, t.pixel.u, t.pixel.v, g.x, g.y, g.z
            )?,
            None => writeln!(w, "{},{:.6},{:.6}", t.frame_index, t.pixel.u, t.pixel.v)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{camera_attitude, FrameStatus};
    use crate::world::SceneSpec;

    fn frame_result(i: usize, pose: Option<Pose>) -> FrameResult {
        FrameResult {
            frame_index: i,
            status: if pose.is_some() { FrameStatus::Localized } else { FrameStatus::Failed },
            pose,
            predicted_pose: pose.unwrap_or_else(Pose::identity),
            photometric_cost: None,
            hypothesis_index: None,
            latency_ms: 0.0,
            bundle_frame: i,
            bundle_source_frame: i as i64 - 2,
            bundle_fallback: false,
        }
    }

    #[test]
    fn rendered_pixel_maps_back_to_its_anchor_point() {
        let scene = Scene::build(&SceneSpec::default());
        let k = Intrinsics::centered(64.0, 64, 64);
        let pose = Pose::from_parts(camera_attitude(0.4, 1.0), Vector3::new(10.0, 0.0, 210.0));
        let view = scene.render(&pose, &k).unwrap();
        let anchors = crate::world::sample_geo_anchors(&view, 50, 3).unwrap();
        for a in &anchors {
            let obs = pixel_to_world(&pose, &k, &a.ref_pixel, &scene);
            let hit = obs.world_estimate.expect("anchor pixels hit terrain");
            assert!((hit - a.world_point).norm() < 1e-3);
        }
    }

    #[test]
    fn altitude_error_over_flat_terrain_keeps_nadir_pixel_horizontal() {
        // closed-form planar case: a nadir ray from a vertically displaced
        // origin lands on the same (x, y); the altitude error does not leak
        // into the horizontal target estimate
        let scene = Scene::build(&SceneSpec { roughness: 0.0, ..SceneSpec::default() });
        let k = Intrinsics::centered(64.0, 64, 64);
        let true_pose = Pose::from_parts(
            camera_attitude(0.0, std::f64::consts::FRAC_PI_2),
            Vector3::new(25.0, -40.0, 200.0),
        );
        let wrong_alt = Pose::from_parts(
            *true_pose.rotation(),
            true_pose.translation() + Vector3::new(0.0, 0.0, 1.0),
        );
        let center = PixelPoint::new(k.cx, k.cy);
        let truth = pixel_to_world(&true_pose, &k, &center, &scene).world_estimate.unwrap();
        let est = pixel_to_world(&wrong_alt, &k, &center, &scene).world_estimate.unwrap();
        assert!((truth.xy() - est.xy()).norm() < 1e-9);
        assert!((est.z - truth.z).abs() < 1e-9, "hit stays on the true terrain");
    }

    #[test]
    fn skyward_pixel_misses() {
        let scene = Scene::build(&SceneSpec::default());
        let k = Intrinsics::centered(64.0, 64, 64);
        // shallow depression: top image rows point above the horizon
        let pose = Pose::from_parts(camera_attitude(0.0, 0.05), Vector3::new(0.0, 0.0, 300.0));
        let obs = pixel_to_world(&pose, &k, &PixelPoint::new(31.5, 0.0), &scene);
        assert!(!obs.is_hit());
    }

    #[test]
    fn failed_frames_and_unknown_frames() {
        let scene = Scene::build(&SceneSpec::default());
        let k = Intrinsics::centered(64.0, 64, 64);
        let pose = Pose::from_parts(camera_attitude(0.0, 1.2), Vector3::new(0.0, 0.0, 200.0));
        let results = vec![frame_result(0, Some(pose)), frame_result(1, None)];
        let targets = vec![
            TargetSpec { frame_index: 0, pixel: PixelPoint::new(32.0, 32.0), ground_truth: None },
            TargetSpec { frame_index: 1, pixel: PixelPoint::new(32.0, 32.0), ground_truth: None },
        ];
        let obs = track_targets(&results, &targets, &scene, &k).unwrap();
        assert!(obs[0].is_hit());
        assert!(!obs[1].is_hit());

        let unknown = vec![TargetSpec { frame_index: 7, pixel: PixelPoint::new(1.0, 1.0), ground_truth: None }];
        assert!(matches!(
            track_targets(&results, &unknown, &scene, &k),
            Err(Error::UnknownFrame(7))
        ));
    }

    #[test]
    fn annotation_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("targets.csv");
        let targets = vec![
            TargetSpec { frame_index: 3, pixel: PixelPoint::new(10.5, 20.25), ground_truth: None },
            TargetSpec {
                frame_index: 8,
                pixel: PixelPoint::new(1.0, 2.0),
                ground_truth: Some(Vector3::new(100.0, -50.0, 12.5)),
            },
        ];
        write_targets(&path, &targets).unwrap();
        let back = read_targets(&path).unwrap();
        assert_eq!(back, targets);
    }
}
