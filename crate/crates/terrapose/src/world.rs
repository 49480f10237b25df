//! Deterministic procedural terrain: a smooth sum-of-sinusoids heightfield
//! with a matching multi-channel appearance field, depth rendering, and ray
//! casting. Stands in for a geo-referenced 3D map so that every geometric
//! claim in the optimizer can be checked against closed-form ground truth.

use nalgebra::Vector3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{Intrinsics, PixelPoint};
use crate::error::{Error, Result};
use crate::image::{write_float_image, DepthMap, FeatureMap};
use crate::se3::Pose;

/// Appearance channel count.
pub const CHANNELS: usize = 4;

/// Coarse ray-march step in meters; terrain wavelengths are two orders of
/// magnitude larger, so crossings cannot be stepped over.
const MARCH_STEP: f64 = 1.0;

/// Bisection window below which a ray-terrain crossing is accepted.
const BISECT_TOL: f64 = 1e-4;

/// Number of heightfield sinusoids.
const HEIGHT_WAVES: usize = 8;

/// Heightfield wavelengths span extent/3.2 down to extent/25.
const HEIGHT_DIVISOR_MIN: f64 = 3.2;
const HEIGHT_DIVISOR_MAX: f64 = 25.0;

/// Total height amplitude at roughness 1.
const HEIGHT_AMPLITUDE_SUM: f64 = 24.0;

/// Parameters of the procedural world; the `[scene]` block of a run
/// configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    /// Seed for every derived field parameter.
    pub seed: u64,
    /// Side length of the square domain, centered at the origin (m).
    pub extent_m: f64,
    /// Scales the height amplitudes; 0 gives a flat plane at height 0.
    pub roughness: f64,
    /// Appearance sinusoid wavelengths (m), longest first.
    pub appearance_wavelengths_m: Vec<f64>,
    /// Relative weight of each appearance wavelength.
    pub appearance_weights: Vec<f64>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            extent_m: 2000.0,
            roughness: 1.0,
            appearance_wavelengths_m: vec![48.0, 34.0, 25.0, 17.0, 8.0, 6.0],
            appearance_weights: vec![1.0, 0.75, 0.55, 0.40, 0.10, 0.07],
        }
    }
}

/// One planar sinusoid `amp * sin(kx x + ky y + phase)`.
#[derive(Debug, Clone, Copy)]
struct Wave {
    amp: f64,
    kx: f64,
    ky: f64,
    phase: f64,
}

impl Wave {
    #[inline]
    fn eval(&self, x: f64, y: f64) -> f64 {
        self.amp * (self.kx * x + self.ky * y + self.phase).sin()
    }

    #[inline]
    fn gradient(&self, x: f64, y: f64) -> (f64, f64) {
        let c = self.amp * (self.kx * x + self.ky * y + self.phase).cos();
        (c * self.kx, c * self.ky)
    }
}

/// The procedural world: immutable after construction, shareable across
/// threads.
#[derive(Debug, Clone)]
pub struct Scene {
    spec: SceneSpec,
    height_waves: Vec<Wave>,
    /// One sinusoid bank per appearance channel.
    appearance_waves: Vec<Vec<Wave>>,
    appearance_weight_sum: f64,
    height_amp_sum: f64,
}

/// Reference view rendered from a pose: appearance channels, depth with
/// validity, and the exact pose/intrinsics used.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub appearance: FeatureMap,
    pub depth: DepthMap,
    pub pose: Pose,
    pub intrinsics: Intrinsics,
}

/// World point paired with the reference pixel it was lifted from.
#[derive(Debug, Clone, Copy)]
pub struct GeoAnchor {
    pub world_point: Vector3<f64>,
    pub ref_pixel: PixelPoint,
}

impl Scene {
    /// Builds the deterministic scene for a spec. Same spec, same fields.
    pub fn build(spec: &SceneSpec) -> Scene {
        assert!(spec.extent_m > 0.0, "extent must be positive");
        assert_eq!(
            spec.appearance_wavelengths_m.len(),
            spec.appearance_weights.len(),
            "wavelength/weight tables must pair up"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

        let ratio = (HEIGHT_DIVISOR_MAX / HEIGHT_DIVISOR_MIN).powf(1.0 / (HEIGHT_WAVES as f64 - 1.0));
        let lambdas: Vec<f64> = (0..HEIGHT_WAVES)
            .map(|k| spec.extent_m / (HEIGHT_DIVISOR_MIN * ratio.powi(k as i32)))
            .collect();
        let lambda_sum: f64 = lambdas.iter().sum();
        let height_waves = lambdas
            .iter()
            .map(|lambda| {
                let theta = rng.gen::<f64>() * std::f64::consts::PI;
                let omega = 2.0 * std::f64::consts::PI / lambda;
                Wave {
                    amp: spec.roughness * HEIGHT_AMPLITUDE_SUM * lambda / lambda_sum,
                    kx: omega * theta.cos(),
                    ky: omega * theta.sin(),
                    phase: rng.gen::<f64>() * 2.0 * std::f64::consts::PI,
                }
            })
            .collect::<Vec<_>>();
        let height_amp_sum: f64 = height_waves.iter().map(|w| w.amp.abs()).sum();

        let appearance_waves = (0..CHANNELS)
            .map(|_| {
                spec.appearance_wavelengths_m
                    .iter()
                    .zip(&spec.appearance_weights)
                    .map(|(lambda, weight)| {
                        let theta = rng.gen::<f64>() * std::f64::consts::PI;
                        let omega = 2.0 * std::f64::consts::PI / lambda;
                        Wave {
                            amp: *weight,
                            kx: omega * theta.cos(),
                            ky: omega * theta.sin(),
                            phase: rng.gen::<f64>() * 2.0 * std::f64::consts::PI,
                        }
                    })
                    .collect()
            })
            .collect();
        let appearance_weight_sum: f64 = spec.appearance_weights.iter().map(|w| w.abs()).sum();

        Scene {
            spec: spec.clone(),
            height_waves,
            appearance_waves,
            appearance_weight_sum,
            height_amp_sum,
        }
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn extent(&self) -> f64 {
        self.spec.extent_m
    }

    /// Upper bound on terrain height (sum of amplitudes).
    pub fn max_height(&self) -> f64 {
        self.height_amp_sum
    }

    /// Terrain elevation at `(x, y)`; defined on the whole plane.
    pub fn height(&self, x: f64, y: f64) -> f64 {
        self.height_waves.iter().map(|w| w.eval(x, y)).sum()
    }

    /// Analytic gradient `(dh/dx, dh/dy)`.
    pub fn height_gradient(&self, x: f64, y: f64) -> (f64, f64) {
        self.height_waves.iter().fold((0.0, 0.0), |(gx, gy), w| {
            let (dx, dy) = w.gradient(x, y);
            (gx + dx, gy + dy)
        })
    }

    /// Appearance channels at `(x, y)`, each in [0, 1]. Channel 3 blends in
    /// normalized elevation so one channel stays height-correlated.
    pub fn appearance(&self, x: f64, y: f64) -> [f64; CHANNELS] {
        let mut out = [0.0; CHANNELS];
        for (c, slot) in out.iter_mut().enumerate() {
            let mix: f64 = self.appearance_waves[c].iter().map(|w| w.eval(x, y)).sum();
            let mix = mix / self.appearance_weight_sum;
            *slot = if c == CHANNELS - 1 {
                let h_norm = if self.height_amp_sum > 0.0 {
                    self.height(x, y) / self.height_amp_sum
                } else {
                    0.0
                };
                0.5 + 0.25 * h_norm + 0.25 * mix
            } else {
                0.5 + 0.5 * mix
            };
        }
        out
    }

    #[inline]
    fn inside_extent(&self, x: f64, y: f64) -> bool {
        let half = self.spec.extent_m / 2.0;
        x.abs() <= half && y.abs() <= half
    }

    /// First terrain intersection of a unit ray, to 1e-4 m, or a miss when
    /// the ray exits the extent or escapes upward.
    pub fn raycast(&self, origin: &Vector3<f64>, direction: &Vector3<f64>) -> Result<Vector3<f64>> {
        debug_assert!((direction.norm() - 1.0).abs() < 1e-9, "direction must be unit length");
        let ceiling = self.height_amp_sum + 1.0;

        let mut t = 0.0;
        // skip the empty air above the terrain ceiling analytically
        if origin.z > ceiling {
            if direction.z >= 0.0 {
                return Err(Error::NoIntersection);
            }
            t = (origin.z - ceiling) / -direction.z;
        }

        let value = |t: f64| {
            let p = origin + direction * t;
            p.z - self.height(p.x, p.y)
        };
        if value(t) <= 0.0 {
            return Err(Error::NoIntersection);
        }

        let t_max = t + 4.0 * self.spec.extent_m + origin.z.abs();
        let mut prev_t = t;
        let mut prev_f = value(t);
        loop {
            t += MARCH_STEP;
            if t > t_max {
                return Err(Error::NoIntersection);
            }
            let p = origin + direction * t;
            if !self.inside_extent(p.x, p.y) {
                return Err(Error::NoIntersection);
            }
            if p.z > ceiling && direction.z >= 0.0 {
                return Err(Error::NoIntersection);
            }
            let f = p.z - self.height(p.x, p.y);
            if f <= 0.0 {
                // bracketed: bisect [prev_t, t]
                let (mut lo, mut hi) = (prev_t, t);
                let mut f_lo = prev_f;
                while hi - lo > BISECT_TOL {
                    let mid = 0.5 * (lo + hi);
                    let fm = value(mid);
                    if fm > 0.0 {
                        lo = mid;
                        f_lo = fm;
                    } else {
                        hi = mid;
                    }
                }
                let _ = f_lo;
                let t_hit = 0.5 * (lo + hi);
                let hit = origin + direction * t_hit;
                if !self.inside_extent(hit.x, hit.y) {
                    return Err(Error::NoIntersection);
                }
                return Ok(hit);
            }
            prev_t = t;
            prev_f = f;
        }
    }

    /// Renders appearance and depth by casting a ray through every pixel
    /// center. Depth is along the optical axis. Pixels whose ray misses the
    /// terrain are marked invalid.
    pub fn render(&self, pose: &Pose, k: &Intrinsics) -> Result<RenderedView> {
        let cam = pose.translation();
        let terrain = self.height(cam.x, cam.y);
        if cam.z <= terrain {
            return Err(Error::CameraUnderground { z: cam.z, terrain });
        }

        let mut appearance = FeatureMap::zeros(k.width, k.height, CHANNELS);
        let mut depth = DepthMap::new_invalid(k.width, k.height);

        let rows: Vec<(usize, Vec<f64>, Vec<Option<f64>>)> = (0..k.height)
            .into_par_iter()
            .map(|y| {
                let mut app_row = vec![0.0; k.width * CHANNELS];
                let mut depth_row = vec![None; k.width];
                for x in 0..k.width {
                    let dir_cam = k.ray_direction(&PixelPoint::new(x as f64, y as f64));
                    let dir_world = pose.rotation() * dir_cam;
                    if let Ok(hit) = self.raycast(cam, &dir_world) {
                        let cam_point = pose.inverse().apply(&hit);
                        debug_assert!(cam_point.z > 0.0);
                        depth_row[x] = Some(cam_point.z);
                        let a = self.appearance(hit.x, hit.y);
                        app_row[x * CHANNELS..(x + 1) * CHANNELS].copy_from_slice(&a);
                    }
                }
                (y, app_row, depth_row)
            })
            .collect();

        for (y, app_row, depth_row) in rows {
            for x in 0..k.width {
                appearance.pixel_mut(x, y).copy_from_slice(&app_row[x * CHANNELS..(x + 1) * CHANNELS]);
                if let Some(d) = depth_row[x] {
                    depth.set(x, y, d);
                }
            }
        }

        Ok(RenderedView { appearance, depth, pose: *pose, intrinsics: *k })
    }
}

/// Draws `n` anchors uniformly without replacement from the view's valid
/// depth pixels and lifts them to world coordinates through the recorded
/// pose. Deterministic for a given seed.
pub fn sample_geo_anchors(view: &RenderedView, n: usize, rng_seed: u64) -> Result<Vec<GeoAnchor>> {
    let mut pixels = view.depth.valid_pixels();
    if pixels.len() < n {
        return Err(Error::InsufficientValidPixels { have: pixels.len(), need: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    // partial Fisher-Yates: the first n entries become the sample
    for i in 0..n {
        let j = rng.gen_range(i..pixels.len());
        pixels.swap(i, j);
    }
    pixels.truncate(n);

    pixels
        .into_iter()
        .map(|(x, y)| {
            let p = PixelPoint::new(x as f64, y as f64);
            let d = view.depth.at(x, y).expect("sampled from valid mask");
            let cam_point = view.intrinsics.back_project(&p, d)?;
            Ok(GeoAnchor { world_point: view.pose.apply(&cam_point), ref_pixel: p })
        })
        .collect()
}

impl RenderedView {
    /// Dumps one float-image file per channel plus depth (invalid depth as
    /// NaN) into `dir` with the given stem.
    pub fn dump(&self, dir: &std::path::Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let (w, h) = (self.appearance.width, self.appearance.height);
        for c in 0..self.appearance.channels {
            let plane: Vec<f64> = (0..w * h)
                .map(|i| self.appearance.pixel(i % w, i / w)[c])
                .collect();
            let name = format!("channel{c}");
            write_float_image(&dir.join(format!("{stem}_{name}.fimg")), w, h, &name, &plane)?;
        }
        let depth_plane: Vec<f64> = (0..w * h)
            .map(|i| self.depth.at(i % w, i / w).unwrap_or(f64::NAN))
            .collect();
        write_float_image(&dir.join(format!("{stem}_depth.fimg")), w, h, "depth", &depth_plane)?;
        Ok(())
    }
}
