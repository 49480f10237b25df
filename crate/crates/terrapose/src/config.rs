//! Run configuration file: one TOML document with `scene`, `trajectory`,
//! `noise`, `jngo`, `engine` and `eval` sections. Every tunable of the
//! pipeline appears here with its default, so a run is fully reproducible
//! from the file (plus the `--seed` override).

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::align::{RefineSchedule, SamplerConfig};
use crate::camera::Intrinsics;
use crate::engine::{Degradation, SequenceConfig};
use crate::error::{Error, Result};
use crate::se3::Pose;
use crate::trajectory::{read_ground_truth, TrajectoryPattern};
use crate::world::SceneSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectorySection {
    pub frames: usize,
    /// Explicit ground-truth file; overrides the pattern when set.
    pub file: Option<PathBuf>,
    #[serde(flatten)]
    pub pattern: TrajectoryPattern,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        Self {
            frames: 500,
            file: None,
            pattern: TrajectoryPattern::Line {
                start: [-500.0, 0.0, 200.0],
                velocity: [2.0, 0.0, 0.0],
                depression_deg: 50.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSection {
    /// First-frame prior noise bounds.
    pub init_trans_m: f64,
    pub init_rot_deg: f64,
    /// Query photometric degradation.
    pub gain: f64,
    pub bias: f64,
    pub noise_sigma: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self { init_trans_m: 10.0, init_rot_deg: 10.0, gain: 1.05, bias: 0.02, noise_sigma: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JngoSection {
    pub alpha_pitch_deg: f64,
    pub alpha_yaw_deg: f64,
    pub pitch_step_deg: f64,
    pub yaw_step_deg: f64,
    /// Diagonal of the translation sampling covariance (m^2).
    pub sigma_t_m2: [f64; 3],
    pub iterations_per_level: [usize; 3],
    pub lm_lambda_init: f64,
    pub lm_lambda_up: f64,
    pub lm_lambda_down: f64,
    pub huber_delta: f64,
    pub min_anchors: usize,
    /// Motion-regularizer weight of the selection cost (calibrated so the
    /// motion term matches the median photometric cost at 2 m deviation).
    pub lambda_motion: f64,
    pub n_anchors: usize,
}

impl Default for JngoSection {
    fn default() -> Self {
        Self {
            alpha_pitch_deg: 11.0,
            alpha_yaw_deg: 11.0,
            pitch_step_deg: 2.0,
            yaw_step_deg: 2.0,
            sigma_t_m2: [1.0, 1.0, 1.0],
            iterations_per_level: [2, 3, 4],
            lm_lambda_init: 1e-2,
            lm_lambda_up: 10.0,
            lm_lambda_down: 0.5,
            huber_delta: 0.5,
            min_anchors: 50,
            lambda_motion: 0.021,
            n_anchors: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineSection {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rng_seed: u64,
}

impl Default for EngineSection {
    fn default() -> Self {
        Self { fx: 256.0, fy: 256.0, cx: 127.5, cy: 127.5, width: 256, height: 256, rng_seed: 1234 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    /// Paired (meters, degrees) recall thresholds.
    pub thresholds: Vec<[f64; 2]>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { thresholds: vec![[1.0, 1.0], [3.0, 3.0], [5.0, 5.0]] }
    }
}

/// The full run configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub scene: SceneSpec,
    pub trajectory: TrajectorySection,
    pub noise: NoiseSection,
    pub jngo: JngoSection,
    pub engine: EngineSection,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::new(
            self.engine.fx,
            self.engine.fy,
            self.engine.cx,
            self.engine.cy,
            self.engine.width,
            self.engine.height,
        )
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            alpha_pitch: self.jngo.alpha_pitch_deg.to_radians(),
            alpha_yaw: self.jngo.alpha_yaw_deg.to_radians(),
            pitch_step: self.jngo.pitch_step_deg.to_radians(),
            yaw_step: self.jngo.yaw_step_deg.to_radians(),
            sigma_t: Matrix3::from_diagonal(&Vector3::new(
                self.jngo.sigma_t_m2[0],
                self.jngo.sigma_t_m2[1],
                self.jngo.sigma_t_m2[2],
            )),
            rng_seed: self.engine.rng_seed,
        }
    }

    pub fn schedule(&self) -> RefineSchedule {
        RefineSchedule {
            iterations_per_level: self.jngo.iterations_per_level,
            lm_lambda_init: self.jngo.lm_lambda_init,
            lm_lambda_up: self.jngo.lm_lambda_up,
            lm_lambda_down: self.jngo.lm_lambda_down,
            huber_delta: self.jngo.huber_delta,
            min_anchors: self.jngo.min_anchors,
        }
    }

    pub fn degradation(&self) -> Degradation {
        Degradation {
            gain: self.noise.gain,
            bias: self.noise.bias,
            noise_sigma: self.noise.noise_sigma,
        }
    }

    /// Ground-truth trajectory: the referenced file when set, otherwise the
    /// generated pattern.
    pub fn ground_truth(&self) -> Result<Vec<Pose>> {
        match &self.trajectory.file {
            Some(path) => read_ground_truth(path),
            None => Ok(self.trajectory.pattern.generate(self.trajectory.frames)),
        }
    }

    /// Assembles the runtime sequence configuration. `seed_override`
    /// replaces the engine seed for one-command reproduction.
    pub fn to_sequence_config(&self, seed_override: Option<u64>) -> Result<SequenceConfig> {
        let trajectory = self.ground_truth()?;
        if trajectory.is_empty() {
            return Err(Error::Config("trajectory is empty".into()));
        }
        Ok(SequenceConfig {
            scene: self.scene.clone(),
            intrinsics: self.intrinsics(),
            trajectory,
            init_noise_trans_m: self.noise.init_trans_m,
            init_noise_rot_deg: self.noise.init_rot_deg,
            degradation: self.degradation(),
            sampler: SamplerConfig {
                rng_seed: seed_override.unwrap_or(self.engine.rng_seed),
                ..self.sampler()
            },
            sampler_mode: Default::default(),
            schedule: self.schedule(),
            lambda_motion: self.jngo.lambda_motion,
            n_anchors: self.jngo.n_anchors,
            rng_seed: seed_override.unwrap_or(self.engine.rng_seed),
        })
    }

    pub fn thresholds(&self) -> Vec<(f64, f64)> {
        self.eval.thresholds.iter().map(|t| (t[0], t[1])).collect()
    }
}
