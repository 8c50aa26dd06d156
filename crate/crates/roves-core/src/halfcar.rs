//! 4-DOF half-car vertical dynamics under road excitation, integrated with
//! classical fixed-step RK4.
//!
//! State layout: (z_s, theta, z_uf, z_ur) displacements plus their four time
//! derivatives. Sign convention: positive pitch lowers the front body corner,
//! so the front suspension deflection is `z_s - z_uf - l_f*theta` and the
//! rear is `z_s - z_ur + l_r*theta`.

use crate::error::Error;
use crate::Result;
use std::io::{BufRead, Write};

/// Physical constants of the half-car model.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VehicleParams {
    /// Sprung mass [kg].
    pub m_s: f64,
    /// Pitch moment of inertia [kg m^2].
    pub i_y: f64,
    /// CoM-to-front-axle distance [m].
    pub l_f: f64,
    /// CoM-to-rear-axle distance [m].
    pub l_r: f64,
    /// Front unsprung mass [kg].
    pub m_uf: f64,
    /// Rear unsprung mass [kg].
    pub m_ur: f64,
    /// Front suspension stiffness [N/m].
    pub k_sf: f64,
    /// Rear suspension stiffness [N/m].
    pub k_sr: f64,
    /// Front suspension damping [N s/m].
    pub c_sf: f64,
    /// Rear suspension damping [N s/m].
    pub c_sr: f64,
    /// Front tire stiffness [N/m].
    pub k_tf: f64,
    /// Rear tire stiffness [N/m].
    pub k_tr: f64,
}

/// Sedan-class preset (the ego vehicle).
pub const EGO: VehicleParams = VehicleParams {
    m_s: 1200.0,
    i_y: 1800.0,
    l_f: 1.2,
    l_r: 1.5,
    m_uf: 54.0,
    m_ur: 54.0,
    k_sf: 18000.0,
    k_sr: 18000.0,
    c_sf: 3200.0,
    c_sr: 3200.0,
    k_tf: 180000.0,
    k_tr: 180000.0,
};

/// Light-truck preset (the inserted front vehicle).
pub const FRONT: VehicleParams = VehicleParams {
    m_s: 2600.0,
    i_y: 4800.0,
    l_f: 1.1,
    l_r: 1.9,
    m_uf: 110.0,
    m_ur: 110.0,
    k_sf: 52000.0,
    k_sr: 52000.0,
    c_sf: 6500.0,
    c_sr: 6500.0,
    k_tf: 380000.0,
    k_tr: 380000.0,
};

impl VehicleParams {
    /// Checks that every constant is strictly positive and finite.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("m_s", self.m_s),
            ("i_y", self.i_y),
            ("l_f", self.l_f),
            ("l_r", self.l_r),
            ("m_uf", self.m_uf),
            ("m_ur", self.m_ur),
            ("k_sf", self.k_sf),
            ("k_sr", self.k_sr),
            ("c_sf", self.c_sf),
            ("c_sr", self.c_sr),
            ("k_tf", self.k_tf),
            ("k_tr", self.k_tr),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::invalid(format!(
                    "vehicle parameter {name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Front-to-rear axle distance [m].
    pub fn wheelbase(&self) -> f64 {
        self.l_f + self.l_r
    }

    pub fn by_preset(name: &str) -> Option<VehicleParams> {
        match name {
            "ego" => Some(EGO),
            "front" => Some(FRONT),
            _ => None,
        }
    }
}

/// Full state of the half-car model at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HalfCarState {
    /// Body vertical displacement at the CoM [m].
    pub z_s: f64,
    /// Pitch angle [rad]; positive lowers the front corner.
    pub theta: f64,
    /// Front unsprung displacement [m].
    pub z_uf: f64,
    /// Rear unsprung displacement [m].
    pub z_ur: f64,
    /// [m/s]
    pub zdot_s: f64,
    /// [rad/s]
    pub thetadot: f64,
    /// [m/s]
    pub zdot_uf: f64,
    /// [m/s]
    pub zdot_ur: f64,
}

impl HalfCarState {
    pub fn to_array(self) -> [f64; 8] {
        [
            self.z_s, self.theta, self.z_uf, self.z_ur,
            self.zdot_s, self.thetadot, self.zdot_uf, self.zdot_ur,
        ]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        HalfCarState {
            z_s: a[0],
            theta: a[1],
            z_uf: a[2],
            z_ur: a[3],
            zdot_s: a[4],
            thetadot: a[5],
            zdot_uf: a[6],
            zdot_ur: a[7],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Road heights (front contact, rear contact) [m] as a function of time [s].
pub trait RoadExcitation {
    fn heights(&self, t: f64) -> (f64, f64);
}

impl<F: Fn(f64) -> (f64, f64)> RoadExcitation for F {
    fn heights(&self, t: f64) -> (f64, f64) {
        self(t)
    }
}

/// Fixed heights at both wheels, e.g. (0, 0) for a flat road.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantExcitation(pub f64, pub f64);

impl RoadExcitation for ConstantExcitation {
    fn heights(&self, _t: f64) -> (f64, f64) {
        (self.0, self.1)
    }
}

/// Analytic half-sine bump hit by the front wheel at `start`, reaching the
/// rear wheel `delay` seconds later.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfSineBump {
    /// Crest height [m].
    pub amplitude: f64,
    /// Time the front wheel enters the bump [s].
    pub start: f64,
    /// Traversal duration per wheel [s].
    pub duration: f64,
    /// Wheelbase delay between front and rear [s].
    pub delay: f64,
}

impl HalfSineBump {
    fn profile(&self, t: f64) -> f64 {
        let s = t - self.start;
        if s >= 0.0 && s <= self.duration {
            self.amplitude * (std::f64::consts::PI * s / self.duration).sin()
        } else {
            0.0
        }
    }
}

impl RoadExcitation for HalfSineBump {
    fn heights(&self, t: f64) -> (f64, f64) {
        (self.profile(t), self.profile(t - self.delay))
    }
}

/// Uniformly sampled excitation with linear interpolation between samples.
/// Queries outside the sampled span clamp to the first/last sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledExcitation {
    pub t0: f64,
    pub dt: f64,
    pub samples: Vec<(f64, f64)>,
}

impl SampledExcitation {
    pub fn new(t0: f64, dt: f64, samples: Vec<(f64, f64)>) -> Result<Self> {
        if dt <= 0.0 || !dt.is_finite() {
            return Err(Error::invalid(format!("sample step must be positive, got {dt}")));
        }
        if samples.is_empty() {
            return Err(Error::invalid("sampled excitation needs at least one sample"));
        }
        Ok(SampledExcitation { t0, dt, samples })
    }

    /// Time of the last sample [s].
    pub fn t_end(&self) -> f64 {
        self.t0 + self.dt * (self.samples.len() - 1) as f64
    }
}

impl RoadExcitation for SampledExcitation {
    fn heights(&self, t: f64) -> (f64, f64) {
        let pos = (t - self.t0) / self.dt;
        if pos <= 0.0 {
            return self.samples[0];
        }
        let last = self.samples.len() - 1;
        if pos >= last as f64 {
            return self.samples[last];
        }
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        let (f0, r0) = self.samples[i];
        let (f1, r1) = self.samples[i + 1];
        (f0 + (f1 - f0) * frac, r0 + (r1 - r0) * frac)
    }
}

/// Time derivative of the 8-component state vector: the four velocities
/// followed by the four accelerations.
pub fn derivatives(
    state: &HalfCarState,
    excitation_value: (f64, f64),
    params: &VehicleParams,
) -> Result<[f64; 8]> {
    if !state.is_finite() {
        return Err(Error::invalid("non-finite state passed to derivatives"));
    }
    let (z_rf, z_rr) = excitation_value;
    if !z_rf.is_finite() || !z_rr.is_finite() {
        return Err(Error::invalid("non-finite road excitation"));
    }
    let p = params;
    let s = state;

    // suspension deflections and deflection rates
    let x_f = s.z_s - s.z_uf - p.l_f * s.theta;
    let x_r = s.z_s - s.z_ur + p.l_r * s.theta;
    let v_f = s.zdot_s - s.zdot_uf - p.l_f * s.thetadot;
    let v_r = s.zdot_s - s.zdot_ur + p.l_r * s.thetadot;

    let zddot_s = (-p.k_sf * x_f - p.c_sf * v_f - p.k_sr * x_r - p.c_sr * v_r) / p.m_s;
    let thetaddot = (p.l_f * p.k_sf * x_f + p.l_f * p.c_sf * v_f
        - p.l_r * p.k_sr * x_r
        - p.l_r * p.c_sr * v_r)
        / p.i_y;
    let zddot_uf = (p.k_sf * x_f + p.c_sf * v_f - p.k_tf * (s.z_uf - z_rf)) / p.m_uf;
    let zddot_ur = (p.k_sr * x_r + p.c_sr * v_r - p.k_tr * (s.z_ur - z_rr)) / p.m_ur;

    Ok([
        s.zdot_s, s.thetadot, s.zdot_uf, s.zdot_ur,
        zddot_s, thetaddot, zddot_uf, zddot_ur,
    ])
}

fn add_scaled(a: [f64; 8], b: [f64; 8], s: f64) -> [f64; 8] {
    let mut r = [0.0; 8];
    for i in 0..8 {
        r[i] = a[i] + b[i] * s;
    }
    r
}

/// One classical RK4 step of size `dt` from time `t`, with the excitation
/// evaluated at t, t + dt/2, and t + dt.
pub fn rk4_step<E: RoadExcitation + ?Sized>(
    state: &HalfCarState,
    t: f64,
    dt: f64,
    excitation: &E,
    params: &VehicleParams,
) -> Result<HalfCarState> {
    if dt <= 0.0 || !dt.is_finite() {
        return Err(Error::invalid(format!("step size must be positive, got {dt}")));
    }
    let y = state.to_array();
    let e0 = excitation.heights(t);
    let e1 = excitation.heights(t + dt / 2.0);
    let e2 = excitation.heights(t + dt);

    let k1 = derivatives(state, e0, params)?;
    let k2 = derivatives(&HalfCarState::from_array(add_scaled(y, k1, dt / 2.0)), e1, params)?;
    let k3 = derivatives(&HalfCarState::from_array(add_scaled(y, k2, dt / 2.0)), e1, params)?;
    let k4 = derivatives(&HalfCarState::from_array(add_scaled(y, k3, dt)), e2, params)?;

    let mut out = [0.0; 8];
    for i in 0..8 {
        out[i] = y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(HalfCarState::from_array(out))
}

/// Any state component whose magnitude exceeds this aborts the simulation.
pub const DEFAULT_DIVERGENCE_BOUND: f64 = 1e6;

const STATE_NAMES: [&str; 8] = [
    "z_s", "theta", "z_uf", "z_ur", "zdot_s", "thetadot", "zdot_uf", "zdot_ur",
];

/// Uniform-step trajectory of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    /// Step size [s]; state `i` is at time `i * dt`.
    pub dt: f64,
    /// States from t = 0 through t = t_end inclusive.
    pub states: Vec<HalfCarState>,
    /// Parameters the run used.
    pub params: VehicleParams,
    /// Human-readable description of the excitation source.
    pub excitation_desc: String,
}

impl SimulationResult {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.states.len()).map(move |i| i as f64 * self.dt)
    }

    pub fn t_end(&self) -> f64 {
        (self.states.len() - 1) as f64 * self.dt
    }
}

/// Integrates from `initial` over [0, t_end] with fixed step `dt`.
pub fn simulate<E: RoadExcitation + ?Sized>(
    initial: &HalfCarState,
    excitation: &E,
    params: &VehicleParams,
    t_end: f64,
    dt: f64,
) -> Result<SimulationResult> {
    simulate_bounded(initial, excitation, params, t_end, dt, DEFAULT_DIVERGENCE_BOUND)
}

/// [`simulate`] with an explicit divergence bound.
pub fn simulate_bounded<E: RoadExcitation + ?Sized>(
    initial: &HalfCarState,
    excitation: &E,
    params: &VehicleParams,
    t_end: f64,
    dt: f64,
    bound: f64,
) -> Result<SimulationResult> {
    params.validate()?;
    if !(t_end > 0.0 && dt > 0.0 && dt <= t_end) {
        return Err(Error::invalid(format!(
            "need 0 < dt <= t_end, got dt = {dt}, t_end = {t_end}"
        )));
    }
    if !initial.is_finite() {
        return Err(Error::invalid("non-finite initial state"));
    }
    let steps = (t_end / dt).round() as usize;
    let mut states = Vec::with_capacity(steps + 1);
    let mut state = *initial;
    states.push(state);
    for i in 0..steps {
        state = rk4_step(&state, i as f64 * dt, dt, excitation, params)?;
        let arr = state.to_array();
        for (c, v) in arr.iter().enumerate() {
            if !v.is_finite() || v.abs() > bound {
                return Err(Error::Diverged {
                    step: i + 1,
                    t: (i + 1) as f64 * dt,
                    component: STATE_NAMES[c],
                    value: *v,
                    bound,
                });
            }
        }
        states.push(state);
    }
    Ok(SimulationResult {
        dt,
        states,
        params: *params,
        excitation_desc: String::new(),
    })
}

/// Kinetic energy of the four masses plus elastic energy of the suspension
/// and tire springs, under the stated deflection definitions [J].
pub fn mechanical_energy(
    state: &HalfCarState,
    excitation_value: (f64, f64),
    params: &VehicleParams,
) -> f64 {
    let p = params;
    let s = state;
    let (z_rf, z_rr) = excitation_value;
    let x_f = s.z_s - s.z_uf - p.l_f * s.theta;
    let x_r = s.z_s - s.z_ur + p.l_r * s.theta;
    let kinetic = 0.5
        * (p.m_s * s.zdot_s * s.zdot_s
            + p.i_y * s.thetadot * s.thetadot
            + p.m_uf * s.zdot_uf * s.zdot_uf
            + p.m_ur * s.zdot_ur * s.zdot_ur);
    let elastic = 0.5
        * (p.k_sf * x_f * x_f
            + p.k_sr * x_r * x_r
            + p.k_tf * (s.z_uf - z_rf) * (s.z_uf - z_rf)
            + p.k_tr * (s.z_ur - z_rr) * (s.z_ur - z_rr));
    kinetic + elastic
}

pub const CSV_HEADER: &str = "t,z_s,theta,z_uf,z_ur,zdot_s,thetadot,zdot_uf,zdot_ur";

/// Writes the trajectory as CSV, 9 significant digits per value.
pub fn write_csv<W: Write>(result: &SimulationResult, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for (i, s) in result.states.iter().enumerate() {
        let t = i as f64 * result.dt;
        let a = s.to_array();
        writeln!(
            w,
            "{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}",
            t, a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7]
        )?;
    }
    Ok(())
}

/// A trajectory read back from CSV: uniform step plus states.
#[derive(Debug, Clone, PartialEq)]
pub struct SimCsv {
    pub dt: f64,
    pub states: Vec<HalfCarState>,
}

/// Parses a CSV produced by [`write_csv`], validating the header and the
/// uniformity of the time grid.
pub fn read_csv<R: BufRead>(r: R, origin: &std::path::Path) -> Result<SimCsv> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(origin, "empty file", Some(0)))?
        .map_err(|e| Error::io(origin, e))?;
    if header.trim() != CSV_HEADER {
        return Err(Error::format(
            origin,
            format!("expected header `{CSV_HEADER}`, found `{}`", header.trim()),
            Some(0),
        ));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    for (ln, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::format(
                origin,
                format!("row {}: expected 9 columns, found {}", ln + 2, fields.len()),
                None,
            ));
        }
        let mut vals = [0.0f64; 9];
        for (i, f) in fields.iter().enumerate() {
            vals[i] = f.trim().parse::<f64>().map_err(|e| {
                Error::format(origin, format!("row {}: bad number `{f}`: {e}", ln + 2), None)
            })?;
        }
        times.push(vals[0]);
        states.push(HalfCarState::from_array([
            vals[1], vals[2], vals[3], vals[4], vals[5], vals[6], vals[7], vals[8],
        ]));
    }
    if times.len() < 2 {
        return Err(Error::format(origin, "need at least two rows", None));
    }
    let dt = times[1] - times[0];
    for i in 1..times.len() {
        let expect = times[0] + dt * i as f64;
        if (times[i] - expect).abs() > dt * 1e-6 + 1e-12 {
            return Err(Error::format(
                origin,
                format!("non-uniform time grid at row {} (t = {})", i + 2, times[i]),
                None,
            ));
        }
    }
    Ok(SimCsv { dt, states })
}
