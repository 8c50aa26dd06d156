//! Lifts a masked relative depth map into a metric local point cloud with
//! per-point color, and places it in world coordinates.

use crate::error::Error;
use crate::imageio::Rgb8Image;
use crate::math::{quantile_sorted, Mat3, Quat, Vec3};
use crate::Result;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Depth map with a foreground mask. Depth is in arbitrary relative units;
/// only masked pixels participate.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedDepth {
    pub width: usize,
    pub height: usize,
    /// Row-major depth values; ignored outside the mask.
    pub depth: Vec<f64>,
    /// Row-major foreground flags.
    pub mask: Vec<bool>,
}

impl MaskedDepth {
    pub fn new(width: usize, height: usize, depth: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if depth.len() != width * height || mask.len() != width * height {
            return Err(Error::invalid(format!(
                "depth/mask length must be {width}x{height}"
            )));
        }
        if !mask.iter().any(|m| *m) {
            return Err(Error::invalid("foreground mask is empty"));
        }
        for (i, (d, m)) in depth.iter().zip(&mask).enumerate() {
            if *m && !d.is_finite() {
                return Err(Error::invalid(format!(
                    "non-finite depth {d} at masked pixel {i}"
                )));
            }
        }
        Ok(MaskedDepth { width, height, depth, mask })
    }

    /// Flips the depth convention (larger value = nearer becomes larger =
    /// deeper) by negating all values; the affine normalization absorbs it.
    pub fn inverted(mut self) -> Self {
        for d in self.depth.iter_mut() {
            *d = -*d;
        }
        self
    }

    pub fn foreground_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Preset real-world length (x), width (y), and height (z) of the inserted
/// element, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetDims {
    pub l_x: f64,
    pub l_y: f64,
    pub l_z: f64,
}

impl TargetDims {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("l_x", self.l_x), ("l_y", self.l_y), ("l_z", self.l_z)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!(
                    "target dimension {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Metric point cloud in the element's local frame: x spans +-l_x/2 along
/// rows, y spans +-l_y/2 along columns, z in [0, l_z] along depth.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPointCloud {
    pub points: Vec<Vec3>,
    /// Per-point RGB in [0, 1].
    pub colors: Vec<[f64; 3]>,
    pub dims: TargetDims,
}

/// Point cloud in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub colors: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftOptions {
    /// Emit every `stride`-th row and column (1 = every masked pixel).
    pub stride: usize,
    /// Optional (low, high) quantiles applied to the foreground depths
    /// before normalization; depths beyond them clamp to the z range.
    pub clip: Option<(f64, f64)>,
}

impl Default for LiftOptions {
    fn default() -> Self {
        LiftOptions { stride: 1, clip: None }
    }
}

/// Back-projects masked pixels: x = (row/(h-1) - 0.5) l_x,
/// y = (col/(w-1) - 0.5) l_y, z = (d - d_min)/(d_max - d_min) l_z, with
/// d_min/d_max the foreground depth extremes (or clip quantiles). Colors
/// come from the matching texture pixel. Larger depth maps to larger z.
pub fn lift_depth(
    depth: &MaskedDepth,
    dims: TargetDims,
    texture: &Rgb8Image,
    opts: &LiftOptions,
) -> Result<LocalPointCloud> {
    dims.validate()?;
    if texture.width != depth.width || texture.height != depth.height {
        return Err(Error::invalid(format!(
            "texture is {}x{} but depth is {}x{}",
            texture.width, texture.height, depth.width, depth.height
        )));
    }
    if depth.width < 2 || depth.height < 2 {
        return Err(Error::invalid(format!(
            "depth map must be at least 2x2, got {}x{}",
            depth.width, depth.height
        )));
    }
    if opts.stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    let mut fg: Vec<f64> = depth
        .depth
        .iter()
        .zip(&depth.mask)
        .filter(|(_, m)| **m)
        .map(|(d, _)| *d)
        .collect();
    fg.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (d_min, d_max) = match opts.clip {
        None => (fg[0], fg[fg.len() - 1]),
        Some((lo, hi)) => {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
                return Err(Error::invalid(format!(
                    "clip quantiles must satisfy 0 <= lo < hi <= 1, got ({lo}, {hi})"
                )));
            }
            (quantile_sorted(&fg, lo), quantile_sorted(&fg, hi))
        }
    };
    if d_max == d_min {
        return Err(Error::degenerate(
            "constant foreground depth: normalization undefined",
        ));
    }
    let (w, h) = (depth.width, depth.height);
    let mut points = Vec::new();
    let mut colors = Vec::new();
    for row in (0..h).step_by(opts.stride) {
        for col in (0..w).step_by(opts.stride) {
            let idx = row * w + col;
            if !depth.mask[idx] {
                continue;
            }
            let x = (row as f64 / (h - 1) as f64 - 0.5) * dims.l_x;
            let y = (col as f64 / (w - 1) as f64 - 0.5) * dims.l_y;
            let z = ((depth.depth[idx] - d_min) / (d_max - d_min)).clamp(0.0, 1.0) * dims.l_z;
            points.push(Vec3::new(x, y, z));
            colors.push(texture.unit(idx));
        }
    }
    Ok(LocalPointCloud { points, colors, dims })
}

/// Rotation + translation with the rotation checked to be orthonormal and
/// orientation-preserving.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        if !rotation.is_rotation(1e-9) {
            return Err(Error::invalid(
                "transform matrix is not a rotation (orthonormality or determinant check failed)",
            ));
        }
        Ok(RigidTransform { rotation, translation })
    }

    pub fn from_quat(q: Quat, translation: Vec3) -> Self {
        RigidTransform { rotation: Mat3::from_quat(q.normalized()), translation }
    }

    pub fn identity() -> Self {
        RigidTransform { rotation: Mat3::IDENTITY, translation: Vec3::ZERO }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.rotation.mul_vec(p) + self.translation
    }
}

/// Rigidly places a local cloud in world coordinates; colors are untouched.
pub fn to_world(cloud: &LocalPointCloud, pose: &RigidTransform) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| pose.apply(*p)).collect(),
        colors: cloud.colors.clone(),
    }
}

/// Writes an ASCII PLY with positions and 8-bit colors.
pub fn save_ascii_ply(points: &[Vec3], colors: &[[f64; 3]], path: &Path) -> Result<()> {
    if points.len() != colors.len() {
        return Err(Error::invalid(format!(
            "{} points but {} colors",
            points.len(),
            colors.len()
        )));
    }
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {}\n", points.len()));
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    out.push_str("end_header\n");
    for (p, c) in points.iter().zip(colors) {
        let to8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        out.push_str(&format!(
            "{} {} {} {} {} {}\n",
            p.x,
            p.y,
            p.z,
            to8(c[0]),
            to8(c[1]),
            to8(c[2])
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn gray_texture(w: usize, h: usize) -> Rgb8Image {
        Rgb8Image::new(w, h, vec![[128, 128, 128]; w * h]).unwrap()
    }

    fn ramp_3x3() -> MaskedDepth {
        let depth: Vec<f64> = (0..9).map(|i| i as f64).collect();
        MaskedDepth::new(3, 3, depth, vec![true; 9]).unwrap()
    }

    const DIMS: TargetDims = TargetDims { l_x: 2.0, l_y: 4.0, l_z: 0.1 };

    #[test]
    fn corner_and_center_pixels() {
        let cloud = lift_depth(&ramp_3x3(), DIMS, &gray_texture(3, 3), &LiftOptions::default())
            .unwrap();
        // row 0, col 0 holds the minimum depth
        assert_eq!(cloud.points[0], Vec3::new(-1.0, -2.0, 0.0));
        // center pixel of the ramp: (row 1, col 1), d = 4
        assert!((cloud.points[4] - Vec3::new(0.0, 0.0, 0.05)).norm() < 1e-15);
        // bottom-right corner holds the maximum depth
        assert!((cloud.points[8] - Vec3::new(1.0, 2.0, 0.1)).norm() < 1e-15);
    }

    #[test]
    fn full_ramp_matches_hand_evaluated_table() {
        let cloud = lift_depth(&ramp_3x3(), DIMS, &gray_texture(3, 3), &LiftOptions::default())
            .unwrap();
        let expect = [
            (-1.0, -2.0, 0.0),
            (-1.0, 0.0, 0.0125),
            (-1.0, 2.0, 0.025),
            (0.0, -2.0, 0.0375),
            (0.0, 0.0, 0.05),
            (0.0, 2.0, 0.0625),
            (1.0, -2.0, 0.075),
            (1.0, 0.0, 0.0875),
            (1.0, 2.0, 0.1),
        ];
        assert_eq!(cloud.points.len(), 9);
        for (p, (x, y, z)) in cloud.points.iter().zip(expect) {
            assert!((p.x - x).abs() < 1e-15);
            assert!((p.y - y).abs() < 1e-15);
            assert!((p.z - z).abs() < 1e-15);
        }
        assert!(cloud.colors.iter().all(|c| (c[0] - 128.0 / 255.0).abs() < 1e-15));
    }

    #[test]
    fn bounding_box_equals_target_dims() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (w, h) = (7, 5);
        let mut depth: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.2..0.8)).collect();
        depth[0] = 0.0;
        depth[w * h - 1] = 1.0;
        let d = MaskedDepth::new(w, h, depth, vec![true; w * h]).unwrap();
        let cloud = lift_depth(&d, DIMS, &gray_texture(w, h), &LiftOptions::default()).unwrap();
        let mut min = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut max = -min;
        for p in &cloud.points {
            min = Vec3::new(min.x.min(p.x), min.y.min(p.y), min.z.min(p.z));
            max = Vec3::new(max.x.max(p.x), max.y.max(p.y), max.z.max(p.z));
        }
        assert!((max.x - min.x - DIMS.l_x).abs() < 1e-9);
        assert!((max.y - min.y - DIMS.l_y).abs() < 1e-9);
        assert!((max.z - min.z - DIMS.l_z).abs() < 1e-9);
        assert!((min.x + DIMS.l_x / 2.0).abs() < 1e-9);
        assert!(min.z.abs() < 1e-9);
    }

    #[test]
    fn point_count_equals_mask_population() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let (w, h) = (16, 9);
        let depth: Vec<f64> = (0..w * h).map(|i| i as f64).collect();
        let mask: Vec<bool> = (0..w * h).map(|_| rng.random_range(0.0..1.0) < 0.6).collect();
        let d = MaskedDepth::new(w, h, depth, mask.clone()).unwrap();
        let cloud = lift_depth(&d, DIMS, &gray_texture(w, h), &LiftOptions::default()).unwrap();
        assert_eq!(cloud.points.len(), mask.iter().filter(|m| **m).count());
    }

    #[test]
    fn deeper_pixels_land_higher_in_z() {
        let cloud = lift_depth(&ramp_3x3(), DIMS, &gray_texture(3, 3), &LiftOptions::default())
            .unwrap();
        for w in cloud.points.windows(2) {
            assert!(w[1].z > w[0].z);
        }
    }

    #[test]
    fn constant_depth_is_rejected() {
        let d = MaskedDepth::new(3, 3, vec![5.0; 9], vec![true; 9]).unwrap();
        let r = lift_depth(&d, DIMS, &gray_texture(3, 3), &LiftOptions::default());
        assert!(matches!(r, Err(Error::Degenerate(_))));
    }

    #[test]
    fn degenerate_and_mismatched_inputs_are_rejected() {
        assert!(MaskedDepth::new(3, 3, vec![0.0; 9], vec![false; 9]).is_err());
        assert!(MaskedDepth::new(2, 2, vec![f64::NAN; 4], vec![true; 4]).is_err());
        let thin = MaskedDepth::new(1, 4, vec![0.0, 1.0, 2.0, 3.0], vec![true; 4]).unwrap();
        assert!(lift_depth(&thin, DIMS, &gray_texture(1, 4), &LiftOptions::default()).is_err());
        let d = ramp_3x3();
        assert!(lift_depth(&d, DIMS, &gray_texture(4, 3), &LiftOptions::default()).is_err());
        let bad_dims = TargetDims { l_x: 0.0, ..DIMS };
        assert!(lift_depth(&d, bad_dims, &gray_texture(3, 3), &LiftOptions::default()).is_err());
    }

    #[test]
    fn inversion_flips_depth_ordering() {
        let d = ramp_3x3().inverted();
        let cloud = lift_depth(&d, DIMS, &gray_texture(3, 3), &LiftOptions::default()).unwrap();
        assert!((cloud.points[0].z - 0.1).abs() < 1e-15);
        assert!(cloud.points[8].z.abs() < 1e-15);
    }

    #[test]
    fn stride_thins_emission_but_keeps_normalization() {
        let (w, h) = (7, 5);
        let depth: Vec<f64> = (0..w * h).map(|i| i as f64).collect();
        let d = MaskedDepth::new(w, h, depth, vec![true; w * h]).unwrap();
        let opts = LiftOptions { stride: 2, ..Default::default() };
        let cloud = lift_depth(&d, DIMS, &gray_texture(w, h), &opts).unwrap();
        // rows {0,2,4} x cols {0,2,4,6}
        assert_eq!(cloud.points.len(), 12);
        // the global maximum depth (last pixel, row 4 col 6) is still emitted
        // and still normalizes against the full foreground extremes
        let top = cloud.points.last().unwrap();
        assert!((top.z - DIMS.l_z).abs() < 1e-15);
    }

    #[test]
    fn clip_quantiles_clamp_outliers_to_the_box() {
        let (w, h) = (101, 2);
        let mut depth = vec![0.0; w * h];
        let mut mask = vec![false; w * h];
        for i in 0..100 {
            depth[i] = i as f64;
            mask[i] = true;
        }
        depth[100] = 1000.0;
        mask[100] = true;
        let d = MaskedDepth::new(w, h, depth, mask).unwrap();
        let opts = LiftOptions { stride: 1, clip: Some((0.0, 0.98)) };
        let cloud = lift_depth(&d, DIMS, &gray_texture(w, h), &opts).unwrap();
        // 101 sorted foreground depths; the 98% quantile lands exactly on 98.0
        let z_out = cloud.points.last().unwrap().z;
        assert_eq!(z_out, DIMS.l_z);
        let z50 = cloud.points[50].z;
        assert!((z50 - 50.0 / 98.0 * DIMS.l_z).abs() < 1e-12);
        assert!(cloud.points.iter().all(|p| p.z >= 0.0 && p.z <= DIMS.l_z));
    }

    #[test]
    fn identity_and_translation_poses() {
        let cloud = lift_depth(&ramp_3x3(), DIMS, &gray_texture(3, 3), &LiftOptions::default())
            .unwrap();
        let same = to_world(&cloud, &RigidTransform::identity());
        assert_eq!(same.points, cloud.points);
        let shifted = to_world(
            &cloud,
            &RigidTransform::new(Mat3::IDENTITY, Vec3::new(10.0, 0.0, 0.0)).unwrap(),
        );
        for (a, b) in shifted.points.iter().zip(&cloud.points) {
            assert_eq!(a.x, b.x + 10.0);
            assert_eq!(a.y, b.y);
            assert_eq!(a.z, b.z);
        }
    }

    #[test]
    fn quarter_turn_yaw_matches_hand_rotation() {
        let local = LocalPointCloud {
            points: vec![
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 2.0, 0.5),
                Vec3::new(3.0, -1.0, 2.0),
            ],
            colors: vec![[0.0; 3]; 3],
            dims: DIMS,
        };
        let q = Quat::from_axis_angle(Vec3::Z, std::f64::consts::FRAC_PI_2);
        let world = to_world(&local, &RigidTransform::from_quat(q, Vec3::ZERO));
        let expect = [
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(-2.0, 0.0, 0.5),
            Vec3::new(1.0, 3.0, 2.0),
        ];
        for (a, b) in world.points.iter().zip(expect) {
            assert!((*a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn non_rigid_matrix_is_rejected() {
        let scaled = Mat3([[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(RigidTransform::new(scaled, Vec3::ZERO).is_err());
        let reflected = Mat3([[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(RigidTransform::new(reflected, Vec3::ZERO).is_err());
    }

    #[test]
    fn rigid_transform_preserves_pairwise_distances() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let cloud = lift_depth(&ramp_3x3(), DIMS, &gray_texture(3, 3), &LiftOptions::default())
            .unwrap();
        let axis = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalized();
        let q = Quat::from_axis_angle(axis, rng.random_range(0.0..std::f64::consts::TAU));
        let t = Vec3::new(4.0, -7.0, 2.5);
        let world = to_world(&cloud, &RigidTransform::from_quat(q, t));
        for i in 0..cloud.points.len() {
            for j in i + 1..cloud.points.len() {
                let before = cloud.points[i].dist(cloud.points[j]);
                let after = world.points[i].dist(world.points[j]);
                assert!((before - after).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ascii_ply_has_stable_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ply");
        save_ascii_ply(
            &[Vec3::new(1.0, -2.0, 0.5), Vec3::new(0.0125, 0.0, 0.1)],
            &[[1.0, 0.5, 0.0], [0.0, 0.0, 1.0]],
            &p,
        )
        .unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let expect = "ply\nformat ascii 1.0\nelement vertex 2\n\
                      property float x\nproperty float y\nproperty float z\n\
                      property uchar red\nproperty uchar green\nproperty uchar blue\n\
                      end_header\n1 -2 0.5 255 128 0\n0.0125 0 0.1 0 0 255\n";
        assert_eq!(text, expect);
    }
}
