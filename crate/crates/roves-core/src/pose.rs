//! Per-frame vehicle pose sequences: direct edits, sampling of the dynamics
//! solution at frame timestamps, and superposition of vertical displacement
//! and pitch onto recorded poses.

use crate::error::Error;
use crate::halfcar::SimulationResult;
use crate::math::{Quat, Vec3};
use crate::Result;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// One recorded pose: object-to-world rotation and translation at time t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseFrame {
    pub t: f64,
    pub rotation: Quat,
    pub translation: Vec3,
}

/// Timestamped pose track of one vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    pub vehicle_id: String,
    pub frames: Vec<PoseFrame>,
}

impl PoseSequence {
    /// Validates monotone timestamps and quaternion norms; quaternions off
    /// unit by more than 1e-6 are renormalized with a warning.
    pub fn new(vehicle_id: impl Into<String>, mut frames: Vec<PoseFrame>) -> Result<Self> {
        let vehicle_id = vehicle_id.into();
        for w in frames.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(Error::invalid(format!(
                    "vehicle {vehicle_id}: timestamps must strictly increase ({} then {})",
                    w[0].t, w[1].t
                )));
            }
        }
        for f in frames.iter_mut() {
            if !f.t.is_finite() || !f.rotation.is_finite() || !f.translation.is_finite() {
                return Err(Error::invalid(format!(
                    "vehicle {vehicle_id}: non-finite pose at t = {}",
                    f.t
                )));
            }
            let n = f.rotation.norm();
            if !(n > 0.0) {
                return Err(Error::invalid(format!(
                    "vehicle {vehicle_id}: zero rotation quaternion at t = {}",
                    f.t
                )));
            }
            if (n - 1.0).abs() > 1e-6 {
                log::warn!(
                    "vehicle {vehicle_id}: normalizing rotation at t = {} (norm {n})",
                    f.t
                );
                f.rotation = f.rotation.normalized();
            }
        }
        Ok(PoseSequence { vehicle_id, frames })
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.t).collect()
    }
}

/// A direct pose edit applied uniformly to a sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoseEdit {
    /// Add this world-frame offset to every translation.
    Translate(Vec3),
    /// Left-multiply this rotation into every frame rotation.
    Rotate(Quat),
    /// Remove frames [start, end) by index.
    Delete { start: usize, end: usize },
}

pub fn edit_pose(seq: &PoseSequence, op: &PoseEdit) -> Result<PoseSequence> {
    let mut out = seq.clone();
    match *op {
        PoseEdit::Translate(d) => {
            for f in out.frames.iter_mut() {
                f.translation = f.translation + d;
            }
        }
        PoseEdit::Rotate(q) => {
            let n = q.norm();
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::invalid("rotation edit has a degenerate quaternion"));
            }
            let q = if (n - 1.0).abs() > 1e-6 {
                log::warn!("normalizing rotation edit (norm {n})");
                q.normalized()
            } else {
                q
            };
            for f in out.frames.iter_mut() {
                f.rotation = q.mul(f.rotation);
            }
        }
        PoseEdit::Delete { start, end } => {
            if start > end || end > out.frames.len() {
                return Err(Error::invalid(format!(
                    "delete range {start}..{end} out of bounds for {} frames",
                    out.frames.len()
                )));
            }
            out.frames.drain(start..end);
        }
    }
    Ok(out)
}

/// Per-frame vertical displacement and pitch sampled from a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionSeries {
    pub dz: Vec<f64>,
    pub dtheta: Vec<f64>,
}

impl CorrectionSeries {
    pub fn zeros(n: usize) -> Self {
        CorrectionSeries { dz: vec![0.0; n], dtheta: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.dz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dz.is_empty()
    }
}

/// Linearly interpolates body heave and pitch onto the given timestamps.
/// Every timestamp must lie inside the simulated interval.
pub fn sample_correction(sim: &SimulationResult, timestamps: &[f64]) -> Result<CorrectionSeries> {
    let n = sim.states.len();
    if n < 2 {
        return Err(Error::invalid("simulation holds fewer than 2 states"));
    }
    let t_end = sim.t_end();
    let mut dz = Vec::with_capacity(timestamps.len());
    let mut dtheta = Vec::with_capacity(timestamps.len());
    for (frame, &ts) in timestamps.iter().enumerate() {
        if ts < -1e-9 || ts > t_end + 1e-9 {
            return Err(Error::invalid(format!(
                "frame {frame} timestamp {ts} outside simulated interval [0, {t_end}]"
            )));
        }
        let pos = (ts / sim.dt).clamp(0.0, (n - 1) as f64);
        let i0 = (pos.floor() as usize).min(n - 2);
        let frac = pos - i0 as f64;
        let (a, b) = (&sim.states[i0], &sim.states[i0 + 1]);
        dz.push(a.z_s + (b.z_s - a.z_s) * frac);
        dtheta.push(a.theta + (b.theta - a.theta) * frac);
    }
    Ok(CorrectionSeries { dz, dtheta })
}

/// Superimposes the correction: translation += dz * up, rotation gets a
/// pitch about the body lateral (y) axis, positive dtheta lowering the
/// front (body +x) corner. `mount_offset` (body frame) shifts a rigidly
/// attached pose such as a camera; zero leaves the CoM path.
pub fn apply_correction(
    seq: &PoseSequence,
    corr: &CorrectionSeries,
    up: Vec3,
    mount_offset: Vec3,
) -> Result<PoseSequence> {
    if corr.len() != seq.frames.len() {
        return Err(Error::invalid(format!(
            "correction has {} entries for {} frames",
            corr.len(),
            seq.frames.len()
        )));
    }
    if (up.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("up vector must be unit length, got {:?}", up)));
    }
    let mut out = seq.clone();
    for (i, f) in out.frames.iter_mut().enumerate() {
        let lateral = f.rotation.rotate(Vec3::Y);
        let pitch = Quat::from_axis_angle(lateral, corr.dtheta[i]);
        let mut p = f.translation + up * corr.dz[i];
        if mount_offset != Vec3::ZERO {
            let arm = f.rotation.rotate(mount_offset);
            p = p + pitch.rotate(arm) - arm;
        }
        f.rotation = pitch.mul(f.rotation);
        f.translation = p;
    }
    Ok(out)
}

/// Provenance block describing how a corrected file was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub simulation_config_sha256: String,
}

/// A pose file: one frame array per vehicle id, plus an optional provenance
/// block on corrected outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSet {
    pub sequences: Vec<PoseSequence>,
    pub provenance: Option<Provenance>,
}

#[derive(Serialize, Deserialize)]
struct RawFrame {
    t: f64,
    q: [f64; 4],
    p: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct PoseDoc {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    provenance: Option<Provenance>,
    vehicles: BTreeMap<String, Vec<RawFrame>>,
}

impl PoseSet {
    pub fn new(sequences: Vec<PoseSequence>, provenance: Option<Provenance>) -> Self {
        PoseSet { sequences, provenance }
    }

    pub fn sequence(&self, vehicle_id: &str) -> Option<&PoseSequence> {
        self.sequences.iter().find(|s| s.vehicle_id == vehicle_id)
    }

    pub fn load_json(path: &Path) -> Result<PoseSet> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: PoseDoc = serde_json::from_str(&text)
            .map_err(|e| Error::Json { path: path.into(), source: e })?;
        let mut sequences = Vec::with_capacity(doc.vehicles.len());
        for (id, raw) in doc.vehicles {
            let frames = raw
                .iter()
                .map(|r| PoseFrame {
                    t: r.t,
                    rotation: Quat::from_array(r.q),
                    translation: Vec3::from_array(r.p),
                })
                .collect();
            sequences.push(PoseSequence::new(id, frames)?);
        }
        Ok(PoseSet { sequences, provenance: doc.provenance })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let mut vehicles = BTreeMap::new();
        for seq in &self.sequences {
            let raw: Vec<RawFrame> = seq
                .frames
                .iter()
                .map(|f| RawFrame {
                    t: f.t,
                    q: f.rotation.to_array(),
                    p: f.translation.to_array(),
                })
                .collect();
            if vehicles.insert(seq.vehicle_id.clone(), raw).is_some() {
                return Err(Error::invalid(format!(
                    "duplicate vehicle id {}",
                    seq.vehicle_id
                )));
            }
        }
        let doc = PoseDoc { provenance: self.provenance.clone(), vehicles };
        let text = serde_json::to_string_pretty(&doc).expect("pose document serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::halfcar::{simulate, HalfCarState, HalfSineBump, EGO};

    fn straight_sequence(n: usize) -> PoseSequence {
        let frames = (0..n)
            .map(|i| PoseFrame {
                t: i as f64 * 0.1,
                rotation: Quat::IDENTITY,
                translation: Vec3::new(i as f64 * 0.5, 0.0, 0.0),
            })
            .collect();
        PoseSequence::new("ego", frames).unwrap()
    }

    #[test]
    fn zero_translate_and_identity_rotate_are_noops() {
        let seq = straight_sequence(5);
        let t = edit_pose(&seq, &PoseEdit::Translate(Vec3::ZERO)).unwrap();
        assert_eq!(t, seq);
        let r = edit_pose(&seq, &PoseEdit::Rotate(Quat::IDENTITY)).unwrap();
        assert_eq!(r, seq);
    }

    #[test]
    fn translate_shifts_every_frame() {
        let seq = straight_sequence(4);
        let out = edit_pose(&seq, &PoseEdit::Translate(Vec3::new(0.0, 2.0, -1.0))).unwrap();
        for (a, b) in out.frames.iter().zip(&seq.frames) {
            assert_eq!(a.translation.y, b.translation.y + 2.0);
            assert_eq!(a.translation.z, b.translation.z - 1.0);
            assert_eq!(a.rotation, b.rotation);
        }
    }

    #[test]
    fn rotate_left_multiplies() {
        let seq = straight_sequence(3);
        let yaw = Quat::from_axis_angle(Vec3::Z, std::f64::consts::FRAC_PI_2);
        let out = edit_pose(&seq, &PoseEdit::Rotate(yaw)).unwrap();
        // identity base poses now carry the yaw itself
        for f in &out.frames {
            let moved = f.rotation.rotate(Vec3::X);
            assert!((moved - Vec3::Y).norm() < 1e-12);
        }
    }

    #[test]
    fn non_unit_rotation_edit_is_normalized() {
        let seq = straight_sequence(2);
        let q = Quat::new(2.0, 0.0, 0.0, 0.0);
        let out = edit_pose(&seq, &PoseEdit::Rotate(q)).unwrap();
        assert_eq!(out, seq);
        assert!(edit_pose(&seq, &PoseEdit::Rotate(Quat::new(0.0, 0.0, 0.0, 0.0))).is_err());
    }

    #[test]
    fn delete_bookkeeping() {
        let seq = straight_sequence(10);
        let out = edit_pose(&seq, &PoseEdit::Delete { start: 2, end: 5 }).unwrap();
        assert_eq!(out.frames.len(), 7);
        assert_eq!(out.frames[2].t, seq.frames[5].t);
        let all = edit_pose(&seq, &PoseEdit::Delete { start: 0, end: 10 }).unwrap();
        assert!(all.frames.is_empty());
        assert!(edit_pose(&seq, &PoseEdit::Delete { start: 3, end: 11 }).is_err());
        assert!(edit_pose(&seq, &PoseEdit::Delete { start: 5, end: 3 }).is_err());
    }

    fn tiny_sim(dt: f64, z_values: &[f64]) -> SimulationResult {
        let states = z_values
            .iter()
            .map(|z| HalfCarState { z_s: *z, theta: *z * 0.1, ..Default::default() })
            .collect();
        SimulationResult {
            dt,
            states,
            params: EGO,
            excitation_desc: String::from("test"),
        }
    }

    #[test]
    fn sampling_hits_grid_points_exactly() {
        let sim = tiny_sim(0.02, &[0.0, 0.02, 0.04, 0.03]);
        let corr = sample_correction(&sim, &[0.0, 0.02, 0.04, 0.06]).unwrap();
        assert_eq!(corr.dz, vec![0.0, 0.02, 0.04, 0.03]);
    }

    #[test]
    fn sampling_interpolates_midpoints() {
        let sim = tiny_sim(0.02, &[0.02, 0.04]);
        let corr = sample_correction(&sim, &[0.01]).unwrap();
        assert!((corr.dz[0] - 0.03).abs() < 1e-15);
        assert!((corr.dtheta[0] - 0.003).abs() < 1e-15);
    }

    #[test]
    fn sampling_matches_an_independent_piecewise_oracle() {
        let bump = HalfSineBump { amplitude: 0.08, start: 0.5, duration: 0.2, delay: 0.12 };
        let sim = simulate(&HalfCarState::default(), &bump, &EGO, 2.0, 1e-3).unwrap();
        let stamps: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let corr = sample_correction(&sim, &stamps).unwrap();
        for (i, &ts) in stamps.iter().enumerate() {
            // independent piecewise-linear evaluation
            let pos = ts / sim.dt;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(sim.states.len() - 1);
            let frac = pos - lo as f64;
            let expect = sim.states[lo].z_s * (1.0 - frac) + sim.states[hi].z_s * frac;
            assert!((corr.dz[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_interval_timestamp_names_the_frame() {
        let sim = tiny_sim(0.02, &[0.0, 0.01, 0.02]);
        let err = sample_correction(&sim, &[0.0, 0.2]).unwrap_err();
        assert!(err.to_string().contains("frame 1"), "got {err}");
        assert!(sample_correction(&sim, &[-0.5]).is_err());
    }

    #[test]
    fn zero_correction_is_bitwise_identity() {
        let seq = straight_sequence(6);
        let corr = CorrectionSeries::zeros(6);
        let out = apply_correction(&seq, &corr, Vec3::Z, Vec3::ZERO).unwrap();
        assert_eq!(out, seq);
    }

    #[test]
    fn heave_moves_translation_up_only() {
        let seq = straight_sequence(1);
        let corr = CorrectionSeries { dz: vec![0.05], dtheta: vec![0.0] };
        let out = apply_correction(&seq, &corr, Vec3::Z, Vec3::ZERO).unwrap();
        assert_eq!(out.frames[0].translation.z, 0.05);
        assert_eq!(out.frames[0].translation.x, seq.frames[0].translation.x);
        assert_eq!(out.frames[0].rotation, Quat::IDENTITY);
    }

    #[test]
    fn positive_pitch_lowers_the_front_overhang() {
        let seq = straight_sequence(1);
        let dtheta = 0.01;
        let corr = CorrectionSeries { dz: vec![0.0], dtheta: vec![dtheta] };
        let out = apply_correction(&seq, &corr, Vec3::Z, Vec3::ZERO).unwrap();
        let front_body = Vec3::new(EGO.l_f, 0.0, 0.0);
        let before = seq.frames[0].rotation.rotate(front_body) + seq.frames[0].translation;
        let after = out.frames[0].rotation.rotate(front_body) + out.frames[0].translation;
        let drop = before.z - after.z;
        assert!(
            (drop - EGO.l_f * dtheta).abs() < 1e-6,
            "front corner moved by {drop}, expected about {}",
            EGO.l_f * dtheta
        );
    }

    #[test]
    fn pitch_preserves_yaw_heading() {
        let yaw = Quat::from_axis_angle(Vec3::Z, 0.52);
        let frames = vec![PoseFrame {
            t: 0.0,
            rotation: yaw,
            translation: Vec3::new(3.0, -2.0, 0.0),
        }];
        let seq = PoseSequence::new("car", frames).unwrap();
        let corr = CorrectionSeries { dz: vec![0.02], dtheta: vec![0.15] };
        let out = apply_correction(&seq, &corr, Vec3::Z, Vec3::ZERO).unwrap();
        let h0 = yaw.rotate(Vec3::X);
        let h1 = out.frames[0].rotation.rotate(Vec3::X);
        let norm0 = (h0.x * h0.x + h0.y * h0.y).sqrt();
        let norm1 = (h1.x * h1.x + h1.y * h1.y).sqrt();
        assert!((h0.x / norm0 - h1.x / norm1).abs() < 1e-9);
        assert!((h0.y / norm0 - h1.y / norm1).abs() < 1e-9);
    }

    #[test]
    fn mount_offset_swings_with_the_pitch() {
        let seq = straight_sequence(1);
        let dtheta = 0.1;
        let corr = CorrectionSeries { dz: vec![0.0], dtheta: vec![dtheta] };
        let offset = Vec3::new(2.0, 0.0, 0.0);
        let out = apply_correction(&seq, &corr, Vec3::Z, offset).unwrap();
        // translation picks up exactly the lever-arm delta of the pitch
        let arm = seq.frames[0].rotation.rotate(offset);
        let pitch = Quat::from_axis_angle(Vec3::Y, dtheta);
        let delta = pitch.rotate(arm) - arm;
        assert!((out.frames[0].translation - (seq.frames[0].translation + delta)).norm() < 1e-12);
    }

    #[test]
    fn mismatched_correction_length_is_rejected() {
        let seq = straight_sequence(4);
        let corr = CorrectionSeries::zeros(3);
        assert!(apply_correction(&seq, &corr, Vec3::Z, Vec3::ZERO).is_err());
        assert!(apply_correction(
            &seq,
            &CorrectionSeries::zeros(4),
            Vec3::new(0.0, 0.0, 2.0),
            Vec3::ZERO
        )
        .is_err());
    }

    #[test]
    fn zero_correction_commutes_with_edits() {
        let seq = straight_sequence(5);
        let corr = CorrectionSeries::zeros(5);
        let edit = PoseEdit::Translate(Vec3::new(1.0, 2.0, 3.0));
        let a = edit_pose(&apply_correction(&seq, &corr, Vec3::Z, Vec3::ZERO).unwrap(), &edit)
            .unwrap();
        let b = edit_pose(&seq, &edit).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn json_round_trip_with_provenance() {
        let set = PoseSet::new(
            vec![straight_sequence(3), PoseSequence::new("truck", vec![PoseFrame {
                // 17 significant digits; must survive the round trip bit-exactly
                t: 14.0 * 0.1,
                rotation: Quat::from_axis_angle(Vec3::Z, 0.3),
                translation: Vec3::new(1.0 / 3.0, 2.0, 0.0),
            }])
            .unwrap()],
            Some(Provenance {
                source: String::from("unit-test"),
                simulation_config_sha256: String::from("abc123"),
            }),
        );
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("poses.json");
        let p2 = dir.path().join("again.json");
        set.save_json(&p1).unwrap();
        let loaded = PoseSet::load_json(&p1).unwrap();
        assert_eq!(loaded.provenance, set.provenance);
        assert_eq!(loaded.sequences.len(), 2);
        let ego = loaded.sequence("ego").unwrap();
        assert_eq!(ego.frames, set.sequence("ego").unwrap().frames);
        loaded.save_json(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn load_rejects_bad_sequences() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        std::fs::write(
            &p,
            r#"{"vehicles": {"car": [
                {"t": 0.0, "q": [1, 0, 0, 0], "p": [0, 0, 0]},
                {"t": 0.0, "q": [1, 0, 0, 0], "p": [1, 0, 0]}
            ]}}"#,
        )
        .unwrap();
        assert!(PoseSet::load_json(&p).is_err());
        std::fs::write(
            &p,
            r#"{"vehicles": {"car": [{"t": 0.0, "q": [0, 0, 0, 0], "p": [0, 0, 0]}]}}"#,
        )
        .unwrap();
        assert!(PoseSet::load_json(&p).is_err());
        std::fs::write(&p, "not json").unwrap();
        assert!(matches!(PoseSet::load_json(&p), Err(Error::Json { .. })));
    }
}
