//! JSON pipeline configuration. Relative paths resolve against the config
//! file's directory; CLI flags override individual fields after load.

use roves_core::colorxfer::TransferConfig;
use roves_core::gaussians::ScaleConfig;
use roves_core::halfcar::{VehicleParams, EGO, FRONT};
use roves_core::lift::{RigidTransform, TargetDims};
use roves_core::math::{Quat, Vec3};
use roves_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Files the pipeline reads. Which ones a given subcommand requires is
/// checked by that subcommand, so deleting an input unrelated to the
/// invoked stage never causes a failure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigPaths {
    pub texture: PathBuf,
    pub mask: PathBuf,
    pub depth: PathBuf,
    pub background: PathBuf,
    pub trajectory: PathBuf,
    pub poses: PathBuf,
    pub reference: PathBuf,
}

/// Color transfer stage switches around [`TransferConfig`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TransferSettings {
    pub enabled: bool,
    #[serde(flatten)]
    pub config: TransferConfig,
    /// Trim the source statistics as well as the reference statistics.
    #[serde(default)]
    pub clip_source: bool,
}

impl Default for TransferSettings {
    fn default() -> Self {
        TransferSettings { enabled: false, config: TransferConfig::default(), clip_source: false }
    }
}

/// World placement of the lifted cloud: rotation as [w, x, y, z] plus a
/// translation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Placement {
    pub q: [f64; 4],
    pub p: [f64; 3],
}

impl Placement {
    pub fn transform(&self) -> Result<RigidTransform> {
        let q = Quat::from_array(self.q);
        if !(q.norm() > 0.0) || !q.is_finite() {
            return Err(Error::invalid(format!("placement rotation {:?} is degenerate", self.q)));
        }
        Ok(RigidTransform::from_quat(q, Vec3::from_array(self.p)))
    }
}

/// Integration window plus the vehicle: either a named preset or inline
/// parameters, exactly one of the two.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSettings {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vehicle: Option<VehicleParams>,
}

fn default_margin() -> f64 {
    0.02
}

fn default_frame_rate() -> f64 {
    10.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub paths: ConfigPaths,
    pub dims: TargetDims,
    #[serde(default)]
    pub scale: ScaleConfig,
    #[serde(default)]
    pub transfer: TransferSettings,
    pub placement: Placement,
    #[serde(default = "default_margin")]
    pub merge_margin: f64,
    pub cell_size: f64,
    pub sim: SimSettings,
    #[serde(default = "default_frame_rate")]
    pub frame_rate_hz: f64,
}

/// Flag-level overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub sigma: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    pub dt: Option<f64>,
    pub cell_size: Option<f64>,
    pub preset: Option<String>,
}

impl PipelineConfig {
    /// Reads and validates a config file; returns it together with the
    /// SHA-256 of the raw bytes, which tags simulation provenance.
    pub fn load(path: &Path) -> Result<(PipelineConfig, String)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let sha = hex_digest(&bytes);
        let mut cfg: PipelineConfig = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Json { path: path.into(), source: e })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [
            &mut cfg.paths.texture,
            &mut cfg.paths.mask,
            &mut cfg.paths.depth,
            &mut cfg.paths.background,
            &mut cfg.paths.trajectory,
            &mut cfg.paths.poses,
            &mut cfg.paths.reference,
        ] {
            if p.is_relative() {
                *p = base.join(&p);
            }
        }
        cfg.validate()?;
        Ok((cfg, sha))
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.scale.validate()?;
        self.transfer.config.validate()?;
        self.placement.transform()?;
        if !(self.merge_margin >= 0.0) || !self.merge_margin.is_finite() {
            return Err(Error::invalid(format!(
                "merge margin must be >= 0, got {}",
                self.merge_margin
            )));
        }
        if !(self.cell_size > 0.0) || !self.cell_size.is_finite() {
            return Err(Error::invalid(format!(
                "cell size must be positive, got {}",
                self.cell_size
            )));
        }
        if !(self.sim.dt > 0.0 && self.sim.t_end >= self.sim.dt) {
            return Err(Error::invalid(format!(
                "need 0 < dt <= t_end, got dt = {}, t_end = {}",
                self.sim.dt, self.sim.t_end
            )));
        }
        if !(self.frame_rate_hz > 0.0) || !self.frame_rate_hz.is_finite() {
            return Err(Error::invalid(format!(
                "frame rate must be positive, got {}",
                self.frame_rate_hz
            )));
        }
        self.vehicle_params()?.validate()
    }

    /// Resolves the preset name or inline parameter block.
    pub fn vehicle_params(&self) -> Result<VehicleParams> {
        match (&self.sim.preset, &self.sim.vehicle) {
            (Some(name), None) => preset_by_name(name),
            (None, Some(params)) => Ok(*params),
            (Some(_), Some(_)) => {
                Err(Error::invalid("give either a vehicle preset or inline parameters, not both"))
            }
            (None, None) => Err(Error::invalid("no vehicle preset or inline parameters given")),
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(v) = o.sigma {
            self.scale.sigma = v;
        }
        if let Some(v) = o.beta {
            self.transfer.config.beta = v;
        }
        if let Some(v) = o.lambda {
            self.transfer.config.lambda = v;
        }
        if let Some(v) = o.dt {
            self.sim.dt = v;
        }
        if let Some(v) = o.cell_size {
            self.cell_size = v;
        }
        if let Some(name) = &o.preset {
            preset_by_name(name)?;
            self.sim.preset = Some(name.clone());
            self.sim.vehicle = None;
        }
        self.validate()
    }
}

pub fn preset_by_name(name: &str) -> Result<VehicleParams> {
    match name {
        "ego" => Ok(EGO),
        "front" => Ok(FRONT),
        other => Err(Error::invalid(format!(
            "unknown vehicle preset {other:?} (expected \"ego\" or \"front\")"
        ))),
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    use std::fmt::Write;
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}
