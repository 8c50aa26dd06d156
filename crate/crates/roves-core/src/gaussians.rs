//! Gaussian-splat primitive construction, scene merging, and the de-facto
//! binary PLY layout used by 3DGS renderers.

use crate::error::Error;
use crate::lift::PointCloud;
use crate::math::{Quat, Vec3};
use crate::Result;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Degree-0 spherical-harmonic basis constant; color = DC * C0 + 0.5.
pub const C0: f64 = 0.28209479177387814;
/// Higher-order SH coefficients per primitive (degrees 1..3, three channels).
pub const SH_REST: usize = 45;
pub const DEFAULT_OPACITY: f64 = 0.95;

/// A 3DGS point cloud. Opacity is stored pre-activation (logit domain) and
/// scales in log domain, matching the on-disk convention.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    pub positions: Vec<Vec3>,
    pub dc: Vec<[f64; 3]>,
    pub rest: Vec<[f64; SH_REST]>,
    pub opacities: Vec<f64>,
    pub scales: Vec<[f64; 3]>,
    pub rotations: Vec<Quat>,
}

impl GaussianCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if self.dc.len() != n
            || self.rest.len() != n
            || self.opacities.len() != n
            || self.scales.len() != n
            || self.rotations.len() != n
        {
            return Err(Error::invalid("attribute arrays disagree on primitive count"));
        }
        for (i, q) in self.rotations.iter().enumerate() {
            if (q.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!(
                    "rotation {i} has norm {}, expected unit",
                    q.norm()
                )));
            }
        }
        for (i, s) in self.scales.iter().enumerate() {
            if !s.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid(format!("non-finite log-scale at primitive {i}")));
            }
        }
        Ok(())
    }

    pub fn empty() -> Self {
        GaussianCloud {
            positions: Vec::new(),
            dc: Vec::new(),
            rest: Vec::new(),
            opacities: Vec::new(),
            scales: Vec::new(),
            rotations: Vec::new(),
        }
    }
}

/// Parameters of the adaptive-scale initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleConfig {
    /// Global tightening factor, in (0, 1].
    pub sigma: f64,
    /// Distance regularizer.
    pub epsilon: f64,
    /// Neighbor count for the distance statistic.
    pub k: usize,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        ScaleConfig { sigma: 0.01, epsilon: 1e-7, k: 1 }
    }
}

impl ScaleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma <= 1.0) {
            return Err(Error::invalid(format!(
                "sigma must lie in (0, 1], got {}",
                self.sigma
            )));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.k < 1 {
            return Err(Error::invalid("neighbor count k must be at least 1"));
        }
        Ok(())
    }
}

fn d2(a: Vec3, b: Vec3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

/// Keeps the k smallest squared distances seen so far, ascending.
struct Nearest {
    k: usize,
    d2s: Vec<f64>,
}

impl Nearest {
    fn new(k: usize) -> Self {
        Nearest { k, d2s: Vec::with_capacity(k + 1) }
    }

    fn offer(&mut self, d2: f64) {
        let pos = self.d2s.partition_point(|v| *v <= d2);
        if pos < self.k {
            self.d2s.insert(pos, d2);
            self.d2s.truncate(self.k);
        }
    }

    fn full(&self) -> bool {
        self.d2s.len() == self.k
    }

    fn worst(&self) -> f64 {
        *self.d2s.last().unwrap_or(&f64::INFINITY)
    }

    fn mean_distance(&self) -> f64 {
        self.d2s.iter().map(|d| d.sqrt()).sum::<f64>() / self.d2s.len() as f64
    }
}

fn nn_brute(points: &[Vec3], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let mut near = Nearest::new(k);
        for (j, q) in points.iter().enumerate() {
            if i != j {
                near.offer(d2(*p, *q));
            }
        }
        out.push(near.mean_distance());
    }
    out
}

struct KdNode {
    point: Vec3,
    idx: u32,
    dim: u8,
    left: u32,
    right: u32,
}

const KD_NONE: u32 = u32::MAX;

struct KdTree {
    nodes: Vec<KdNode>,
    root: u32,
}

impl KdTree {
    fn build(points: &[Vec3]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = Self::build_rec(points, &mut order[..], 0, &mut nodes);
        KdTree { nodes, root }
    }

    fn build_rec(points: &[Vec3], order: &mut [u32], depth: usize, nodes: &mut Vec<KdNode>) -> u32 {
        if order.is_empty() {
            return KD_NONE;
        }
        let dim = (depth % 3) as u8;
        let coord = |i: u32| points[i as usize].to_array()[dim as usize];
        let mid = order.len() / 2;
        // index tiebreak keeps the split total and deterministic
        order.select_nth_unstable_by(mid, |a, b| {
            coord(*a).partial_cmp(&coord(*b)).unwrap().then(a.cmp(b))
        });
        let pivot = order[mid];
        let id = nodes.len() as u32;
        nodes.push(KdNode {
            point: points[pivot as usize],
            idx: pivot,
            dim,
            left: KD_NONE,
            right: KD_NONE,
        });
        let (lo, rest) = order.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = Self::build_rec(points, lo, depth + 1, nodes);
        let right = Self::build_rec(points, hi, depth + 1, nodes);
        nodes[id as usize].left = left;
        nodes[id as usize].right = right;
        id
    }

    fn knn(&self, node: u32, query: Vec3, query_idx: u32, near: &mut Nearest) {
        if node == KD_NONE {
            return;
        }
        let n = &self.nodes[node as usize];
        // skip only the query point itself; coincident points still count
        if n.idx != query_idx {
            near.offer(d2(query, n.point));
        }
        let delta = query.to_array()[n.dim as usize] - n.point.to_array()[n.dim as usize];
        let (first, second) = if delta < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        self.knn(first, query, query_idx, near);
        if !near.full() || delta * delta < near.worst() {
            self.knn(second, query, query_idx, near);
        }
    }
}

fn nn_kdtree(points: &[Vec3], k: usize) -> Vec<f64> {
    let tree = KdTree::build(points);
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut near = Nearest::new(k);
            tree.knn(tree.root, *p, i as u32, &mut near);
            near.mean_distance()
        })
        .collect()
}

const BRUTE_FORCE_LIMIT: usize = 4096;

/// Mean Euclidean distance from each point to its k nearest distinct
/// neighbors (k = 1 gives the plain nearest-neighbor distance). Exact for
/// any size; a spatial index takes over beyond a few thousand points.
///
/// Coincident points count as distinct neighbors at distance 0, except that
/// each point never pairs with itself.
pub fn nn_distance(points: &[Vec3], k: usize) -> Result<Vec<f64>> {
    if points.len() < 2 {
        return Err(Error::invalid(format!(
            "nearest-neighbor distance needs at least 2 points, got {}",
            points.len()
        )));
    }
    if k < 1 || k > points.len() - 1 {
        return Err(Error::invalid(format!(
            "neighbor count {k} out of range for {} points",
            points.len()
        )));
    }
    if let Some(p) = points.iter().find(|p| !p.is_finite()) {
        return Err(Error::invalid(format!("non-finite point {p:?}")));
    }
    if points.len() <= BRUTE_FORCE_LIMIT {
        Ok(nn_brute(points, k))
    } else {
        Ok(nn_kdtree(points, k))
    }
}

/// Isotropic log-scale per point: s = ln(sqrt(d^2 + eps)) + ln(sigma),
/// identical on all three axes. The sigma term is added last, so changing
/// sigma shifts every scale by exactly ln(sigma) at the bit level.
pub fn init_scales(distances: &[f64], cfg: &ScaleConfig) -> Result<Vec<[f64; 3]>> {
    cfg.validate()?;
    if let Some(d) = distances.iter().find(|d| !d.is_finite() || **d < 0.0) {
        return Err(Error::invalid(format!("distances must be finite and >= 0, got {d}")));
    }
    let log_sigma = cfg.sigma.ln();
    Ok(distances
        .iter()
        .map(|d| {
            let s = (d * d + cfg.epsilon).sqrt().ln() + log_sigma;
            [s, s, s]
        })
        .collect())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Builds Gaussian primitives from a colored world point cloud: DC color
/// from the point color, zero higher-order SH, uniform opacity (stored as
/// its logit), adaptive isotropic scales, identity rotations.
pub fn make_primitives(
    cloud: &PointCloud,
    cfg: &ScaleConfig,
    opacity: f64,
) -> Result<GaussianCloud> {
    if cloud.points.len() < 2 {
        return Err(Error::invalid(
            "primitive initialization needs at least 2 points for the neighbor statistic",
        ));
    }
    if cloud.colors.len() != cloud.points.len() {
        return Err(Error::invalid("point/color count mismatch"));
    }
    if !(opacity > 0.0 && opacity < 1.0) {
        return Err(Error::invalid(format!("opacity must lie in (0, 1), got {opacity}")));
    }
    let distances = nn_distance(&cloud.points, cfg.k)?;
    let scales = init_scales(&distances, cfg)?;
    let mut clamped = 0usize;
    let dc = cloud
        .colors
        .iter()
        .map(|c| {
            c.map(|v| {
                let u = v.clamp(0.0, 1.0);
                if u != v {
                    clamped += 1;
                }
                (u - 0.5) / C0
            })
        })
        .collect();
    if clamped > 0 {
        log::warn!("clamped {clamped} out-of-range color channels into [0, 1]");
    }
    let n = cloud.points.len();
    Ok(GaussianCloud {
        positions: cloud.points.clone(),
        dc,
        rest: vec![[0.0; SH_REST]; n],
        opacities: vec![logit(opacity); n],
        scales,
        rotations: vec![Quat::IDENTITY; n],
    })
}

/// DC coefficient triple for an RGB color in [0, 1].
pub fn encode_dc(rgb: [f64; 3]) -> [f64; 3] {
    rgb.map(|v| (v - 0.5) / C0)
}

/// RGB color in [0, 1] (unclamped) for a DC coefficient triple.
pub fn decode_dc(dc: [f64; 3]) -> [f64; 3] {
    dc.map(|v| v * C0 + 0.5)
}

/// Replaces background primitives under the inserted cloud's footprint and
/// appends the insertion. The footprint is the inserted positions'
/// axis-aligned x/y bounding box grown by `margin`; `height_band`, when
/// given, restricts removal to background primitives whose z lies inside it.
/// Returns the merged cloud and the number of removed background primitives.
pub fn merge(
    background: &GaussianCloud,
    inserted: &GaussianCloud,
    margin: f64,
    height_band: Option<(f64, f64)>,
) -> Result<(GaussianCloud, usize)> {
    background.validate()?;
    inserted.validate()?;
    if !(margin >= 0.0) || !margin.is_finite() {
        return Err(Error::invalid(format!("margin must be >= 0, got {margin}")));
    }
    if inserted.is_empty() {
        return Ok((background.clone(), 0));
    }
    let mut min = (f64::INFINITY, f64::INFINITY);
    let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in &inserted.positions {
        min.0 = min.0.min(p.x);
        min.1 = min.1.min(p.y);
        max.0 = max.0.max(p.x);
        max.1 = max.1.max(p.y);
    }
    let rect = (min.0 - margin, min.1 - margin, max.0 + margin, max.1 + margin);
    let replaced = |p: &Vec3| {
        let inside_xy = p.x >= rect.0 && p.x <= rect.2 && p.y >= rect.1 && p.y <= rect.3;
        match height_band {
            None => inside_xy,
            Some((lo, hi)) => inside_xy && p.z >= lo && p.z <= hi,
        }
    };
    let mut out = GaussianCloud::empty();
    let mut removed = 0usize;
    for i in 0..background.len() {
        if replaced(&background.positions[i]) {
            removed += 1;
            continue;
        }
        out.positions.push(background.positions[i]);
        out.dc.push(background.dc[i]);
        out.rest.push(background.rest[i]);
        out.opacities.push(background.opacities[i]);
        out.scales.push(background.scales[i]);
        out.rotations.push(background.rotations[i]);
    }
    out.positions.extend_from_slice(&inserted.positions);
    out.dc.extend_from_slice(&inserted.dc);
    out.rest.extend_from_slice(&inserted.rest);
    out.opacities.extend_from_slice(&inserted.opacities);
    out.scales.extend_from_slice(&inserted.scales);
    out.rotations.extend_from_slice(&inserted.rotations);
    Ok((out, removed))
}

const PROPS_PER_VERTEX: usize = 62;

fn expected_props() -> Vec<String> {
    let mut props: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for i in 0..SH_REST {
        props.push(format!("f_rest_{i}"));
    }
    props.extend(
        ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
            .iter()
            .map(|s| s.to_string()),
    );
    props
}

/// Writes the cloud as a little-endian binary PLY with the property layout
/// common 3DGS renderers expect: x y z, zero normals, f_dc_0..2,
/// f_rest_0..44, opacity, scale_0..2, rot_0..3 (rotation stored w,x,y,z),
/// every property a 32-bit float.
pub fn save_ply(cloud: &GaussianCloud, path: &Path) -> Result<()> {
    cloud.validate()?;
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", cloud.len()));
    for name in expected_props() {
        header.push_str(&format!("property float {name}\n"));
    }
    header.push_str("end_header\n");
    let mut buf = header.into_bytes();
    buf.reserve(cloud.len() * PROPS_PER_VERTEX * 4);
    let put = |v: f64, buf: &mut Vec<u8>| buf.extend_from_slice(&(v as f32).to_le_bytes());
    for i in 0..cloud.len() {
        let p = cloud.positions[i];
        for v in [p.x, p.y, p.z, 0.0, 0.0, 0.0] {
            put(v, &mut buf);
        }
        for v in cloud.dc[i] {
            put(v, &mut buf);
        }
        for v in cloud.rest[i] {
            put(v, &mut buf);
        }
        put(cloud.opacities[i], &mut buf);
        for v in cloud.scales[i] {
            put(v, &mut buf);
        }
        for v in cloud.rotations[i].to_array() {
            put(v, &mut buf);
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_ply(path: &Path) -> Result<GaussianCloud> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let marker = b"end_header\n";
    let header_end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::format(path, "no end_header line", Some(0)))?
        + marker.len();
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::format(path, "header is not ASCII", Some(0)))?;
    let mut lines = header.lines().filter(|l| !l.starts_with("comment"));
    if lines.next() != Some("ply") {
        return Err(Error::format(path, "missing ply signature", Some(0)));
    }
    if lines.next() != Some("format binary_little_endian 1.0") {
        return Err(Error::format(
            path,
            "expected format binary_little_endian 1.0",
            Some(4),
        ));
    }
    let element = lines
        .next()
        .ok_or_else(|| Error::format(path, "missing element line", Some(0)))?;
    let count: usize = element
        .strip_prefix("element vertex ")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| Error::format(path, format!("bad element line: {element}"), Some(0)))?;
    let mut found = Vec::new();
    for line in lines {
        if line == "end_header" {
            break;
        }
        match line.strip_prefix("property float ") {
            Some(name) => found.push(name.to_string()),
            None => {
                return Err(Error::format(
                    path,
                    format!("unsupported property line: {line}"),
                    Some(0),
                ))
            }
        }
    }
    let expected = expected_props();
    if found != expected {
        for e in &expected {
            if !found.contains(e) {
                return Err(Error::format(path, format!("missing property `{e}`"), Some(0)));
            }
        }
        for f in &found {
            if !expected.contains(f) {
                return Err(Error::format(path, format!("unexpected property `{f}`"), Some(0)));
            }
        }
        let first = expected.iter().zip(&found).find(|(e, f)| e != f).unwrap().0;
        return Err(Error::format(
            path,
            format!("property order mismatch starting at `{first}`"),
            Some(0),
        ));
    }
    let stride = PROPS_PER_VERTEX * 4;
    let want = count * stride;
    let have = bytes.len() - header_end;
    if have != want {
        return Err(Error::format(
            path,
            format!("payload holds {have} bytes, expected {want} for {count} vertices"),
            Some(header_end as u64 + have.min(want) as u64),
        ));
    }
    let mut cloud = GaussianCloud::empty();
    for v in 0..count {
        let base = header_end + v * stride;
        let at = |j: usize| {
            f32::from_le_bytes(bytes[base + j * 4..base + j * 4 + 4].try_into().unwrap()) as f64
        };
        cloud.positions.push(Vec3::new(at(0), at(1), at(2)));
        cloud.dc.push([at(6), at(7), at(8)]);
        let mut rest = [0.0; SH_REST];
        for (j, r) in rest.iter_mut().enumerate() {
            *r = at(9 + j);
        }
        cloud.rest.push(rest);
        cloud.opacities.push(at(54));
        cloud.scales.push([at(55), at(56), at(57)]);
        let q = Quat::new(at(58), at(59), at(60), at(61));
        let norm = q.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::format(
                path,
                format!("degenerate rotation quaternion at vertex {v}"),
                Some(base as u64 + 58 * 4),
            ));
        }
        // renormalize only when meaningfully off; keeps round trips bit-exact
        cloud.rotations.push(if (norm - 1.0).abs() > 1e-6 { q.normalized() } else { q });
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_points(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect()
    }

    fn random_cloud(n: usize, seed: u64) -> GaussianCloud {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut cloud = GaussianCloud::empty();
        for _ in 0..n {
            cloud.positions.push(Vec3::new(
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(-5.0..5.0),
            ));
            cloud.dc.push([
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ]);
            let mut rest = [0.0; SH_REST];
            for r in rest.iter_mut() {
                *r = rng.random_range(-1.0..1.0);
            }
            cloud.rest.push(rest);
            cloud.opacities.push(rng.random_range(-4.0..4.0));
            cloud.scales.push([
                rng.random_range(-10.0..0.0),
                rng.random_range(-10.0..0.0),
                rng.random_range(-10.0..0.0),
            ]);
            let q = Quat::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalized();
            cloud.rotations.push(q);
        }
        cloud
    }

    #[test]
    fn two_points_both_see_distance_one() {
        let pts = [Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)];
        assert_eq!(nn_distance(&pts, 1).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn unit_axis_grid_distances_are_one() {
        let pts: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let d = nn_distance(&pts, 1).unwrap();
        assert!(d.iter().all(|v| (*v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn matches_naive_pairwise_scan() {
        let pts = random_points(200, 21);
        let got = nn_distance(&pts, 1).unwrap();
        for (i, p) in pts.iter().enumerate() {
            let mut best = f64::INFINITY;
            for (j, q) in pts.iter().enumerate() {
                if i != j {
                    best = best.min((*p - *q).norm());
                }
            }
            assert_eq!(got[i], best, "point {i}");
        }
    }

    #[test]
    fn spatial_index_agrees_with_brute_force() {
        for k in [1usize, 3] {
            let pts = random_points(5000, 22 + k as u64);
            let brute = nn_brute(&pts, k);
            let tree = nn_kdtree(&pts, k);
            for (i, (a, b)) in brute.iter().zip(&tree).enumerate() {
                assert!((a - b).abs() <= 1e-12, "k={k} point {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn duplicate_points_count_as_zero_distance_neighbors() {
        let pts = [Vec3::ZERO, Vec3::ZERO, Vec3::new(5.0, 0.0, 0.0)];
        let d = nn_distance(&pts, 1).unwrap();
        assert_eq!(d[0], 0.0);
        assert_eq!(d[1], 0.0);
        assert_eq!(d[2], 5.0);
        // both lookup paths agree on duplicates
        assert_eq!(nn_kdtree(&pts, 1), d);
    }

    #[test]
    fn rejects_tiny_inputs_and_bad_k() {
        assert!(nn_distance(&[Vec3::ZERO], 1).is_err());
        let pts = [Vec3::ZERO, Vec3::X];
        assert!(nn_distance(&pts, 0).is_err());
        assert!(nn_distance(&pts, 2).is_err());
    }

    #[test]
    fn scale_formula_reference_values() {
        let one = ScaleConfig { sigma: 1.0, ..Default::default() };
        let s = init_scales(&[1.0], &one).unwrap()[0][0];
        assert!((s - 4.9999997557948133e-8).abs() < 1e-20);

        let default = ScaleConfig::default();
        assert_eq!(default.sigma, 0.01);
        let s = init_scales(&[1.0], &default).unwrap()[0][0];
        assert!((s - -4.605170135988093).abs() < 1e-12);

        let s = init_scales(&[0.0], &default).unwrap()[0][0];
        assert!((s - -12.664218011467252).abs() < 1e-12);
    }

    #[test]
    fn sigma_term_is_additive_at_the_bit_level() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let ds: Vec<f64> = (0..500).map(|_| rng.random_range(0.0..3.0)).collect();
        let s1 = init_scales(&ds, &ScaleConfig { sigma: 1.0, ..Default::default() }).unwrap();
        let s001 = init_scales(&ds, &ScaleConfig { sigma: 0.01, ..Default::default() }).unwrap();
        let ln001 = 0.01f64.ln();
        for (a, b) in s001.iter().zip(&s1) {
            for axis in 0..3 {
                assert_eq!(a[axis].to_bits(), (b[axis] + ln001).to_bits());
            }
        }
    }

    #[test]
    fn scales_grow_with_distance() {
        let cfg = ScaleConfig::default();
        let s = init_scales(&[0.0, 0.001, 0.01, 0.1, 1.0, 10.0], &cfg).unwrap();
        for w in s.windows(2) {
            assert!(w[1][0] > w[0][0]);
        }
    }

    #[test]
    fn scale_config_validation() {
        assert!(ScaleConfig { sigma: 0.0, ..Default::default() }.validate().is_err());
        assert!(ScaleConfig { sigma: 1.5, ..Default::default() }.validate().is_err());
        assert!(ScaleConfig { epsilon: 0.0, ..Default::default() }.validate().is_err());
        assert!(ScaleConfig { k: 0, ..Default::default() }.validate().is_err());
        assert!(ScaleConfig::default().validate().is_ok());
    }

    fn small_cloud() -> PointCloud {
        PointCloud {
            points: vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0)],
            colors: vec![[0.5, 0.5, 0.5], [1.0, 0.5, 0.5], [0.0, 1.0, 0.25]],
        }
    }

    #[test]
    fn primitive_initialization_constants() {
        let prims = make_primitives(&small_cloud(), &ScaleConfig::default(), 0.95).unwrap();
        assert_eq!(prims.dc[0], [0.0, 0.0, 0.0]);
        assert!((prims.dc[1][0] - 1.7724538509055161).abs() < 1e-12);
        assert_eq!(prims.dc[1][1], 0.0);
        for o in &prims.opacities {
            assert!((o - 2.9444389791664403).abs() < 1e-12);
        }
        assert!(prims.rest.iter().all(|r| r.iter().all(|v| *v == 0.0)));
        assert!(prims.rotations.iter().all(|q| *q == Quat::IDENTITY));
        // isotropic: all three axes share the value
        for s in &prims.scales {
            assert_eq!(s[0], s[1]);
            assert_eq!(s[1], s[2]);
        }
    }

    #[test]
    fn out_of_range_colors_are_clamped() {
        let cloud = PointCloud {
            points: vec![Vec3::ZERO, Vec3::X],
            colors: vec![[1.5, -0.5, 0.5], [0.5, 0.5, 0.5]],
        };
        let prims = make_primitives(&cloud, &ScaleConfig::default(), 0.95).unwrap();
        assert!((prims.dc[0][0] - (1.0 - 0.5) / C0).abs() < 1e-15);
        assert!((prims.dc[0][1] - (0.0 - 0.5) / C0).abs() < 1e-15);
    }

    #[test]
    fn dc_encoding_inverts_within_tolerance() {
        for rgb in [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.25, 0.5, 0.75]] {
            let back = decode_dc(encode_dc(rgb));
            for c in 0..3 {
                assert!((back[c] - rgb[c]).abs() < 1e-7);
            }
        }
    }

    fn grid_background() -> GaussianCloud {
        let mut cloud = GaussianCloud::empty();
        for i in 0..10 {
            for j in 0..10 {
                cloud.positions.push(Vec3::new(i as f64, j as f64, 0.0));
                cloud.dc.push([i as f64, j as f64, 0.0]);
                cloud.rest.push([0.0; SH_REST]);
                cloud.opacities.push(1.0);
                cloud.scales.push([-3.0; 3]);
                cloud.rotations.push(Quat::IDENTITY);
            }
        }
        cloud
    }

    #[test]
    fn empty_insertion_leaves_background_alone() {
        let bg = grid_background();
        let (out, removed) = merge(&bg, &GaussianCloud::empty(), 0.02, None).unwrap();
        assert_eq!(removed, 0);
        assert_eq!(out, bg);
    }

    #[test]
    fn disjoint_footprint_concatenates() {
        let bg = grid_background();
        let mut ins = GaussianCloud::empty();
        ins.positions.push(Vec3::new(100.0, 100.0, 0.0));
        ins.dc.push([0.0; 3]);
        ins.rest.push([0.0; SH_REST]);
        ins.opacities.push(1.0);
        ins.scales.push([-3.0; 3]);
        ins.rotations.push(Quat::IDENTITY);
        let (out, removed) = merge(&bg, &ins, 0.02, None).unwrap();
        assert_eq!(removed, 0);
        assert_eq!(out.len(), bg.len() + 1);
        assert_eq!(out.positions.last(), Some(&Vec3::new(100.0, 100.0, 0.0)));
    }

    #[test]
    fn footprint_removal_matches_rectangle_count() {
        let bg = grid_background();
        let mut ins = GaussianCloud::empty();
        for p in [Vec3::new(2.0, 1.0, 0.3), Vec3::new(3.0, 5.0, 0.3)] {
            ins.positions.push(p);
            ins.dc.push([0.0; 3]);
            ins.rest.push([0.0; SH_REST]);
            ins.opacities.push(0.5);
            ins.scales.push([-4.0; 3]);
            ins.rotations.push(Quat::IDENTITY);
        }
        let margin = 0.02;
        let (out, removed) = merge(&bg, &ins, margin, None).unwrap();
        // independent point-in-rectangle count over the background grid
        let rect = (2.0 - margin, 1.0 - margin, 3.0 + margin, 5.0 + margin);
        let expect = bg
            .positions
            .iter()
            .filter(|p| p.x >= rect.0 && p.x <= rect.2 && p.y >= rect.1 && p.y <= rect.3)
            .count();
        assert_eq!(expect, 10);
        assert_eq!(removed, expect);
        assert_eq!(out.len(), bg.len() - removed + ins.len());
        // survivors keep their attributes bit-for-bit
        for (i, p) in out.positions.iter().take(out.len() - ins.len()).enumerate() {
            let orig = bg.positions.iter().position(|q| q == p).unwrap();
            assert_eq!(out.dc[i], bg.dc[orig]);
        }
    }

    #[test]
    fn height_band_spares_overhead_structure() {
        let mut bg = grid_background();
        bg.positions.push(Vec3::new(2.5, 3.0, 5.0));
        bg.dc.push([9.0; 3]);
        bg.rest.push([0.0; SH_REST]);
        bg.opacities.push(1.0);
        bg.scales.push([-3.0; 3]);
        bg.rotations.push(Quat::IDENTITY);
        let mut ins = GaussianCloud::empty();
        for p in [Vec3::new(2.0, 2.0, 0.1), Vec3::new(3.0, 4.0, 0.1)] {
            ins.positions.push(p);
            ins.dc.push([0.0; 3]);
            ins.rest.push([0.0; SH_REST]);
            ins.opacities.push(0.5);
            ins.scales.push([-4.0; 3]);
            ins.rotations.push(Quat::IDENTITY);
        }
        let (banded, _) = merge(&bg, &ins, 0.02, Some((-1.0, 1.0))).unwrap();
        assert!(banded.positions.contains(&Vec3::new(2.5, 3.0, 5.0)));
        let (unbanded, _) = merge(&bg, &ins, 0.02, None).unwrap();
        assert!(!unbanded
            .positions
            .iter()
            .take(unbanded.len() - ins.len())
            .any(|p| *p == Vec3::new(2.5, 3.0, 5.0)));
    }

    #[test]
    fn three_primitive_round_trip_is_exact() {
        let cloud = random_cloud(3, 31);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ply");
        save_ply(&cloud, &p).unwrap();
        let loaded = load_ply(&p).unwrap();
        assert_eq!(loaded.len(), 3);
        for i in 0..3 {
            assert_eq!(loaded.positions[i].x, cloud.positions[i].x as f32 as f64);
            assert_eq!(loaded.opacities[i], cloud.opacities[i] as f32 as f64);
            for j in 0..SH_REST {
                assert_eq!(loaded.rest[i][j], cloud.rest[i][j] as f32 as f64);
            }
            assert_eq!(loaded.scales[i], cloud.scales[i].map(|v| v as f32 as f64));
            let q = cloud.rotations[i].to_array().map(|v| v as f32 as f64);
            assert_eq!(loaded.rotations[i].to_array(), q);
        }
    }

    #[test]
    fn thousand_primitive_double_round_trip_is_byte_identical() {
        let cloud = random_cloud(1000, 32);
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ply");
        let p2 = dir.path().join("b.ply");
        save_ply(&cloud, &p1).unwrap();
        let loaded = load_ply(&p1).unwrap();
        save_ply(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn missing_property_is_named_in_the_error() {
        let cloud = random_cloud(2, 33);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ply");
        save_ply(&cloud, &p).unwrap();
        let text = std::fs::read(&p).unwrap();
        let doctored: Vec<u8> = String::from_utf8_lossy(&text)
            .replacen("property float opacity\n", "", 1)
            .into_bytes();
        std::fs::write(&p, doctored).unwrap();
        match load_ply(&p) {
            Err(e) => assert!(e.to_string().contains("opacity"), "got {e}"),
            Ok(_) => panic!("expected failure"),
        }
    }

    #[test]
    fn truncated_payload_reports_an_offset() {
        let cloud = random_cloud(4, 34);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ply");
        save_ply(&cloud, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 10]).unwrap();
        match load_ply(&p) {
            Err(Error::Format { offset, .. }) => assert!(offset.unwrap() > 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn non_ply_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ply");
        std::fs::write(&p, b"not a ply at all").unwrap();
        assert!(matches!(load_ply(&p), Err(Error::Format { .. })));
    }
}
