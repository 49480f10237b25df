//! Terrain-referenced visual localization.
//!
//! The crate localizes a downward/oblique-looking camera against a
//! geo-referenced terrain model by direct feature-metric alignment:
//! a render stage produces a reference view with depth from a predicted
//! pose, world-frame geo-anchors are back-projected from the reference
//! depth, and a multi-hypothesis Levenberg-Marquardt optimizer refines a
//! swarm of pose candidates against the query image's feature pyramid.
//! A constant-velocity motion prior supplies predictions, bridges the
//! two-frame render lag of the dual-thread engine, and regularizes the
//! final hypothesis selection. Any query pixel can then be ray-cast into
//! the terrain to recover its world coordinates.
//!
//! Everything is validated end-to-end against a deterministic procedural
//! world ([`world::Scene`]) that stands in for a real 3D map: rendering,
//! depth, and ground-truth trajectories all come from closed-form fields,
//! so analytic Jacobians and convergence claims are testable exactly.
//!
//! Start with the runnable examples (`cargo run --release --example ...`)
//! or the `terrapose` CLI.

pub mod align;
pub mod camera;
pub mod config;
pub mod engine;
pub mod error;
pub mod harness;
pub mod image;
pub mod metrics;
pub mod motion;
pub mod plot;
pub mod pyramid;
pub mod se3;
pub mod target;
pub mod trajectory;
pub mod world;

pub use error::{Error, Result};
pub use se3::{EulerAngles, Pose, Twist};
