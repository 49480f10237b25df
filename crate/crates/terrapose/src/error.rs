//! Crate-wide error type.

use thiserror::Error;

/// All fallible operations in this crate return this error.
#[derive(Debug, Error)]
pub enum Error {
    /// Rotation angle is within tolerance of pi; the SE(3) logarithm is
    /// ill-conditioned there.
    #[error("rotation angle within {0:.3e} rad of pi; logarithm ill-conditioned")]
    AngleNearPi(f64),

    /// Point is at or behind the camera plane (z <= z_min).
    #[error("point behind camera: z = {0:.6e} m")]
    BehindCamera(f64),

    /// Back-projection requires a strictly positive depth.
    #[error("non-positive depth: {0:.6e} m")]
    NonPositiveDepth(f64),

    /// Image dimensions incompatible with the requested operation.
    #[error("bad dimensions: {0}")]
    BadDimensions(String),

    /// Sample point outside the map's valid interpolation domain.
    #[error("sample point ({u:.3}, {v:.3}) outside [0, {width}-1] x [0, {height}-1]")]
    OutOfBounds { u: f64, v: f64, width: usize, height: usize },

    /// Render camera sits below the terrain surface.
    #[error("camera underground: z = {z:.3} m, terrain = {terrain:.3} m")]
    CameraUnderground { z: f64, terrain: f64 },

    /// Ray never intersects the terrain inside the scene extent.
    #[error("ray does not intersect terrain")]
    NoIntersection,

    /// Fewer valid pixels than requested anchors.
    #[error("insufficient valid pixels: have {have}, need {need}")]
    InsufficientValidPixels { have: usize, need: usize },

    /// Sampler grid steps do not tile the configured box.
    #[error("sampler config mismatch: {0}")]
    ConfigMismatch(String),

    /// Damped normal equations are numerically singular.
    #[error("linear solve failed: damped system not positive definite")]
    SolveFailed,

    /// Every hypothesis was flagged invalid; tracking is lost for the frame.
    #[error("all hypotheses invalid")]
    AllHypothesesInvalid,

    /// Target annotation references a frame with no result.
    #[error("unknown frame index {0}")]
    UnknownFrame(usize),

    /// Paired series have different lengths.
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// Malformed input file.
    #[error("parse error in {path} line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    /// Configuration file rejected.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
