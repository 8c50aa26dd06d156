//! Physics-aware road editing for 3D-Gaussian driving scenes.
//!
//! The pipeline has two branches. The static branch turns a masked depth map
//! plus a texture crop into a metric point cloud ([`lift`]), initializes
//! Gaussian primitives from it and merges them into a background scene
//! ([`gaussians`]), optionally harmonizing colors against a reference road
//! patch ([`colorxfer`]). The dynamic branch builds a signed-residual height
//! field from the edited geometry ([`heightfield`]), drives a 4-DOF half-car
//! model over it ([`halfcar`]), and superimposes the resulting body heave and
//! pitch onto recorded per-frame vehicle poses ([`pose`]). [`metrics`]
//! provides the evaluation side: series agreement, image sharpness, and
//! CIEDE2000 color difference.
//!
//! All types are plain data and all operations are pure functions; any value
//! can be shared freely across threads.

pub mod colorxfer;
pub mod error;
pub mod gaussians;
pub mod halfcar;
pub mod heightfield;
pub mod imageio;
pub mod lift;
pub mod math;
pub mod metrics;
pub mod pose;

pub use colorxfer::TransferConfig;
pub use error::Error;
pub use gaussians::{GaussianCloud, ScaleConfig};
pub use halfcar::{HalfCarState, SimulationResult, VehicleParams, EGO, FRONT};
pub use heightfield::{GroundPlane, HeightField, Trajectory};
pub use lift::{PointCloud, RigidTransform, TargetDims};
pub use math::{Mat3, Quat, Vec3};
pub use pose::{PoseSequence, PoseSet};

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
