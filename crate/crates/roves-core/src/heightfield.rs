//! Signed-residual road height field on a fitted ground plane, plus
//! wheel-contact excitation sampling along a trajectory.

use crate::error::Error;
use crate::halfcar::{SampledExcitation, VehicleParams};
use crate::math::{quantile_sorted, sym_eigen, Mat3, Vec3};
use crate::Result;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Plane n.p + d = 0 with unit normal oriented toward world-up (+z).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundPlane {
    pub normal: Vec3,
    pub d: f64,
}

impl GroundPlane {
    /// Signed height of a point above the plane [m].
    pub fn residual(&self, p: Vec3) -> f64 {
        self.normal.dot(p) + self.d
    }

    /// In-plane orthonormal basis: e1 is the world x axis projected into the
    /// plane (world y when the normal is parallel to x), e2 = normal x e1.
    pub fn basis(&self) -> (Vec3, Vec3) {
        let n = self.normal;
        let px = Vec3::X - n * Vec3::X.dot(n);
        let e1 = if px.norm() > 1e-9 {
            px.normalized()
        } else {
            (Vec3::Y - n * Vec3::Y.dot(n)).normalized()
        };
        (e1, n.cross(e1))
    }

    /// Point of the plane closest to the world origin; anchor of the 2D chart.
    pub fn anchor(&self) -> Vec3 {
        self.normal * (-self.d)
    }

    /// 2D coordinates of (the projection of) `p` in the plane chart.
    pub fn to_plane_coords(&self, p: Vec3) -> (f64, f64) {
        let (e1, e2) = self.basis();
        let rel = p - self.anchor();
        (rel.dot(e1), rel.dot(e2))
    }
}

fn pca_plane(points: &[Vec3]) -> Result<GroundPlane> {
    let n = points.len() as f64;
    let mut c = Vec3::ZERO;
    for p in points {
        c = c + *p;
    }
    c = c * (1.0 / n);
    let mut cov = [[0.0f64; 3]; 3];
    for p in points {
        let r = *p - c;
        let a = r.to_array();
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += a[i] * a[j];
            }
        }
    }
    let (vals, vecs) = sym_eigen(&Mat3(cov));
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
    let (lo, mid) = (order[0], order[1]);
    // collinear or coincident points leave two vanishing spreads
    if vals[mid] <= 1e-12 * vals[order[2]].max(1e-9) {
        return Err(Error::degenerate(
            "plane fit needs at least 3 non-collinear points",
        ));
    }
    let normal = Vec3::new(vecs.0[0][lo], vecs.0[1][lo], vecs.0[2][lo]).normalized();
    let normal = if normal.z < 0.0 { -normal } else { normal };
    Ok(GroundPlane { normal, d: -normal.dot(c) })
}

/// Least-squares (orthogonal-distance) plane through the points, refined by
/// one trimming pass that discards points whose residual falls outside the
/// 2%-98% residual quantiles.
pub fn fit_ground_plane(points: &[Vec3]) -> Result<GroundPlane> {
    if points.len() < 3 {
        return Err(Error::degenerate(format!(
            "plane fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if let Some(p) = points.iter().find(|p| !p.is_finite()) {
        return Err(Error::invalid(format!("non-finite point {p:?}")));
    }
    let first = pca_plane(points)?;
    let mut residuals: Vec<f64> = points.iter().map(|p| first.residual(*p)).collect();
    residuals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = quantile_sorted(&residuals, 0.02);
    let hi = quantile_sorted(&residuals, 0.98);
    let kept: Vec<Vec3> = points
        .iter()
        .copied()
        .filter(|p| {
            let r = first.residual(*p);
            r >= lo && r <= hi
        })
        .collect();
    if kept.len() < 3 {
        return Ok(first);
    }
    pca_plane(&kept)
}

/// Per-cell accumulation rule: protrusions keep the maximum residual,
/// depressions the minimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccumMode {
    Max,
    Min,
}

/// Regular grid of signed height residuals in plane coordinates.
/// Unoccupied cells carry residual 0.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightField {
    /// Plane coordinates of the grid corner (cell (0,0) spans origin..origin+cell).
    pub origin: (f64, f64),
    /// Cell edge length [m].
    pub cell: f64,
    /// Cells along the first plane axis.
    pub width: usize,
    /// Cells along the second plane axis.
    pub height: usize,
    /// Row-major residuals [m], row = second-axis index.
    pub data: Vec<f64>,
    pub occupied: Vec<bool>,
    pub mode: AccumMode,
}

/// Projects every point into the plane and accumulates residuals per cell.
/// The grid covers the point footprint plus one cell of margin.
pub fn build_heightfield(
    points: &[Vec3],
    plane: &GroundPlane,
    cell_size: f64,
    mode: AccumMode,
) -> Result<HeightField> {
    if points.is_empty() {
        return Err(Error::invalid("height field needs at least one point"));
    }
    if !(cell_size > 0.0) || !cell_size.is_finite() {
        return Err(Error::invalid(format!("cell size must be positive, got {cell_size}")));
    }
    let projected: Vec<(f64, f64, f64)> = points
        .iter()
        .map(|p| {
            let (u, v) = plane.to_plane_coords(*p);
            (u, v, plane.residual(*p))
        })
        .collect();
    let (mut min_u, mut max_u) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_v, mut max_v) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(u, v, _) in &projected {
        min_u = min_u.min(u);
        max_u = max_u.max(u);
        min_v = min_v.min(v);
        max_v = max_v.max(v);
    }
    let origin = (min_u - cell_size, min_v - cell_size);
    let width = ((max_u - origin.0 + cell_size) / cell_size).ceil() as usize;
    let height = ((max_v - origin.1 + cell_size) / cell_size).ceil() as usize;
    let mut data = vec![0.0; width * height];
    let mut occupied = vec![false; width * height];
    for &(u, v, r) in &projected {
        let i = (((u - origin.0) / cell_size).floor() as usize).min(width - 1);
        let j = (((v - origin.1) / cell_size).floor() as usize).min(height - 1);
        let idx = j * width + i;
        if !occupied[idx] {
            data[idx] = r;
            occupied[idx] = true;
        } else {
            data[idx] = match mode {
                AccumMode::Max => data[idx].max(r),
                AccumMode::Min => data[idx].min(r),
            };
        }
    }
    Ok(HeightField { origin, cell: cell_size, width, height, data, occupied, mode })
}

impl HeightField {
    fn cell_value(&self, i: i64, j: i64) -> f64 {
        if i < 0 || j < 0 || i >= self.width as i64 || j >= self.height as i64 {
            return 0.0;
        }
        let idx = j as usize * self.width + i as usize;
        if self.occupied[idx] {
            self.data[idx]
        } else {
            0.0
        }
    }

    /// Bilinear interpolation over the four surrounding cell centers.
    /// Unoccupied cells and positions beyond the grid contribute 0.
    pub fn sample(&self, position: (f64, f64)) -> f64 {
        let gx = (position.0 - self.origin.0) / self.cell - 0.5;
        let gy = (position.1 - self.origin.1) / self.cell - 0.5;
        let i0 = gx.floor();
        let j0 = gy.floor();
        let fx = gx - i0;
        let fy = gy - j0;
        let (i0, j0) = (i0 as i64, j0 as i64);
        let v00 = self.cell_value(i0, j0);
        let v10 = self.cell_value(i0 + 1, j0);
        let v01 = self.cell_value(i0, j0 + 1);
        let v11 = self.cell_value(i0 + 1, j0 + 1);
        (v00 * (1.0 - fx) + v10 * fx) * (1.0 - fy) + (v01 * (1.0 - fx) + v11 * fx) * fy
    }

    /// Largest and smallest residual over occupied cells; (0, 0) when empty.
    pub fn residual_range(&self) -> (f64, f64) {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for (v, occ) in self.data.iter().zip(&self.occupied) {
            if *occ {
                min = min.min(*v);
                max = max.max(*v);
            }
        }
        if min > max {
            (0.0, 0.0)
        } else {
            (min, max)
        }
    }
}

const HF_MAGIC: &[u8; 12] = b"ROVESHFIELD1";
const HF_VERSION: u8 = 1;

impl HeightField {
    /// Binary layout: 12-byte magic, version u8, mode u8, two reserved bytes,
    /// origin and cell size as little-endian f64, dims as u32, row-major f32
    /// residuals, then the occupancy bitmap packed LSB-first.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut buf = Vec::with_capacity(16 + 24 + 8 + self.data.len() * 4);
        buf.extend_from_slice(HF_MAGIC);
        buf.push(HF_VERSION);
        buf.push(match self.mode {
            AccumMode::Max => 0,
            AccumMode::Min => 1,
        });
        buf.extend_from_slice(&[0u8; 2]);
        buf.extend_from_slice(&self.origin.0.to_le_bytes());
        buf.extend_from_slice(&self.origin.1.to_le_bytes());
        buf.extend_from_slice(&self.cell.to_le_bytes());
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        let mut bitmap = vec![0u8; self.occupied.len().div_ceil(8)];
        for (i, occ) in self.occupied.iter().enumerate() {
            if *occ {
                bitmap[i / 8] |= 1 << (i % 8);
            }
        }
        buf.extend_from_slice(&bitmap);
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<HeightField> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let need = |n: usize, off: usize, what: &str| -> Result<()> {
            if bytes.len() < off + n {
                Err(Error::format(
                    path,
                    format!("truncated while reading {what}"),
                    Some(bytes.len() as u64),
                ))
            } else {
                Ok(())
            }
        };
        need(16, 0, "header")?;
        if &bytes[0..12] != HF_MAGIC {
            return Err(Error::format(path, "bad magic", Some(0)));
        }
        if bytes[12] != HF_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported version {}", bytes[12]),
                Some(12),
            ));
        }
        let mode = match bytes[13] {
            0 => AccumMode::Max,
            1 => AccumMode::Min,
            m => return Err(Error::format(path, format!("bad accumulation mode {m}"), Some(13))),
        };
        let f64_at = |off: usize| f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        need(24 + 8, 16, "grid geometry")?;
        let origin = (f64_at(16), f64_at(24));
        let cell = f64_at(32);
        let width = u32::from_le_bytes(bytes[40..44].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(bytes[44..48].try_into().unwrap()) as usize;
        if !(cell > 0.0) || !cell.is_finite() {
            return Err(Error::format(path, format!("bad cell size {cell}"), Some(32)));
        }
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Error::format(path, "dimension overflow", Some(40)))?;
        need(n * 4, 48, "residuals")?;
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let off = 48 + i * 4;
            data.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64);
        }
        let bm_off = 48 + n * 4;
        let bm_len = n.div_ceil(8);
        need(bm_len, bm_off, "occupancy bitmap")?;
        let mut occupied = Vec::with_capacity(n);
        for i in 0..n {
            occupied.push(bytes[bm_off + i / 8] & (1 << (i % 8)) != 0);
        }
        Ok(HeightField { origin, cell, width, height, data, occupied, mode })
    }

    /// Debug view: residuals linearly mapped onto 16-bit gray, binary PGM.
    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let (min, max) = {
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for v in &self.data {
                min = min.min(*v);
                max = max.max(*v);
            }
            (min, max)
        };
        let span = max - min;
        let mut out = format!("P5\n{} {}\n65535\n", self.width, self.height).into_bytes();
        for v in &self.data {
            let g = if span > 0.0 {
                ((v - min) / span * 65535.0).round() as u16
            } else {
                0
            };
            out.extend_from_slice(&g.to_be_bytes());
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// One trajectory sample: where the vehicle CoM sits on the plane and which
/// way it points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajFrame {
    /// Timestamp [s].
    pub t: f64,
    /// CoM ground position in plane coordinates [m].
    pub pos: [f64; 2],
    /// Unit heading in plane coordinates.
    pub heading: [f64; 2],
}

/// Timestamped CoM path over the ground plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub frames: Vec<TrajFrame>,
}

impl Trajectory {
    /// Validates monotone timestamps and normalizes headings.
    pub fn new(mut frames: Vec<TrajFrame>) -> Result<Trajectory> {
        if frames.is_empty() {
            return Err(Error::invalid("trajectory has no frames"));
        }
        for w in frames.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(Error::invalid(format!(
                    "trajectory timestamps must strictly increase ({} then {})",
                    w[0].t, w[1].t
                )));
            }
        }
        for f in frames.iter_mut() {
            let n = (f.heading[0] * f.heading[0] + f.heading[1] * f.heading[1]).sqrt();
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::invalid(format!("zero-length heading at t = {}", f.t)));
            }
            if (n - 1.0).abs() > 1e-6 {
                log::warn!("normalizing trajectory heading at t = {} (norm {n})", f.t);
            }
            f.heading = [f.heading[0] / n, f.heading[1] / n];
        }
        Ok(Trajectory { frames })
    }

    pub fn t_start(&self) -> f64 {
        self.frames[0].t
    }

    pub fn t_end(&self) -> f64 {
        self.frames.last().unwrap().t
    }

    /// Linear position interpolation; headings are interpolated and
    /// renormalized. `t` must lie within the spanned interval.
    pub fn interpolate(&self, t: f64) -> Result<([f64; 2], [f64; 2])> {
        let eps = 1e-9;
        if t < self.t_start() - eps || t > self.t_end() + eps {
            return Err(Error::invalid(format!(
                "time {t} outside trajectory span [{}, {}]",
                self.t_start(),
                self.t_end()
            )));
        }
        let t = t.clamp(self.t_start(), self.t_end());
        let idx = match self
            .frames
            .binary_search_by(|f| f.t.partial_cmp(&t).unwrap())
        {
            Ok(i) => return Ok((self.frames[i].pos, self.frames[i].heading)),
            Err(i) => i,
        };
        let (a, b) = (&self.frames[idx - 1], &self.frames[idx]);
        let frac = (t - a.t) / (b.t - a.t);
        let pos = [
            a.pos[0] + (b.pos[0] - a.pos[0]) * frac,
            a.pos[1] + (b.pos[1] - a.pos[1]) * frac,
        ];
        let mut hd = [
            a.heading[0] + (b.heading[0] - a.heading[0]) * frac,
            a.heading[1] + (b.heading[1] - a.heading[1]) * frac,
        ];
        let n = (hd[0] * hd[0] + hd[1] * hd[1]).sqrt();
        if n > 0.0 {
            hd = [hd[0] / n, hd[1] / n];
        }
        Ok((pos, hd))
    }

    pub fn load_json(path: &Path) -> Result<Trajectory> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: Trajectory = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        Trajectory::new(raw.frames)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("trajectory serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Samples front and rear contact heights along the trajectory on a uniform
/// `dt` grid spanning the trajectory's own time range. Contacts sit at
/// CoM + l_f * heading and CoM - l_r * heading.
pub fn excitation_along(
    field: &HeightField,
    traj: &Trajectory,
    params: &VehicleParams,
    dt: f64,
) -> Result<SampledExcitation> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("sample step must be positive, got {dt}")));
    }
    let t0 = traj.t_start();
    let span = traj.t_end() - t0;
    let n = (span / dt).floor() as usize + 1;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = t0 + i as f64 * dt;
        let (pos, hd) = traj.interpolate(t)?;
        let front = (pos[0] + params.l_f * hd[0], pos[1] + params.l_f * hd[1]);
        let rear = (pos[0] - params.l_r * hd[0], pos[1] - params.l_r * hd[1]);
        samples.push((field.sample(front), field.sample(rear)));
    }
    SampledExcitation::new(t0, dt, samples)
}
