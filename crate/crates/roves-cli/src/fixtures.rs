//! Deterministic synthetic fixtures: a half-sine road hump as a 16-bit depth
//! map with matching mask and checkerboard texture, a flat background
//! Gaussian grid, a straight constant-speed trajectory with matching ego
//! poses, a noisy road-toned reference patch, and a config wiring them up.

use crate::config::{ConfigPaths, PipelineConfig, Placement, SimSettings, TransferSettings};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roves_core::gaussians::{make_primitives, save_ply, DEFAULT_OPACITY};
use roves_core::heightfield::{TrajFrame, Trajectory};
use roves_core::imageio::{
    save_gray16_png, save_gray8_png, save_rgb8_png, Gray16Image, Gray8Image, Rgb8Image,
};
use roves_core::lift::PointCloud;
use roves_core::math::{Quat, Vec3};
use roves_core::pose::{PoseFrame, PoseSequence, PoseSet};
use roves_core::{GaussianCloud, Result, ScaleConfig, TargetDims};
use std::path::{Path, PathBuf};

/// Depth map width (columns, mapped to y).
pub const HUMP_W: usize = 64;
/// Depth map height (rows, mapped to x). Odd so the crest row hits the
/// exact center and the full 16-bit range is used.
pub const HUMP_H: usize = 33;
/// Metric size of the inserted hump.
pub const HUMP_DIMS: TargetDims = TargetDims { l_x: 0.4, l_y: 3.0, l_z: 0.07 };
/// World position of the hump center on the fixture road.
pub const HUMP_CENTER_X: f64 = 10.0;
/// Constant speed of the straight fixture pass [m/s].
pub const SPEED: f64 = 5.0;
/// Duration of the fixture pass [s].
pub const T_END: f64 = 4.0;

/// Half-sine hump running across the full image: depth rises from 0 at the
/// first row to the full 16-bit range at the center row and back.
pub fn hump_depth() -> Gray16Image {
    let mut pixels = Vec::with_capacity(HUMP_W * HUMP_H);
    for row in 0..HUMP_H {
        let d = (65535.0 * (std::f64::consts::PI * row as f64 / (HUMP_H - 1) as f64).sin())
            .round() as u16;
        pixels.extend(std::iter::repeat(d).take(HUMP_W));
    }
    Gray16Image { width: HUMP_W, height: HUMP_H, pixels }
}

pub fn full_mask() -> Gray8Image {
    Gray8Image { width: HUMP_W, height: HUMP_H, pixels: vec![255; HUMP_W * HUMP_H] }
}

/// 8-pixel checkerboard in asphalt gray and brick red.
pub fn checker_texture() -> Rgb8Image {
    let dark = [46, 46, 52];
    let red = [188, 74, 56];
    let mut pixels = Vec::with_capacity(HUMP_W * HUMP_H);
    for row in 0..HUMP_H {
        for col in 0..HUMP_W {
            pixels.push(if (row / 8 + col / 8) % 2 == 0 { dark } else { red });
        }
    }
    Rgb8Image::new(HUMP_W, HUMP_H, pixels).expect("checker dimensions agree")
}

/// Flat road as a 101x41 Gaussian grid over x in [5, 15], y in [-2, 2] at
/// z = 0, 0.1 m pitch, uniform asphalt color.
pub fn background_cloud() -> GaussianCloud {
    let mut points = Vec::with_capacity(101 * 41);
    for i in 0..101 {
        for j in 0..41 {
            points.push(Vec3::new(5.0 + 0.1 * i as f64, -2.0 + 0.1 * j as f64, 0.0));
        }
    }
    let colors = vec![[0.32, 0.32, 0.34]; points.len()];
    make_primitives(&PointCloud { points, colors }, &ScaleConfig::default(), DEFAULT_OPACITY)
        .expect("grid cloud is valid")
}

/// Straight pass along +x at constant speed, crossing the hump center.
pub fn straight_trajectory() -> Trajectory {
    let frames = (0..=4)
        .map(|i| TrajFrame {
            t: i as f64,
            pos: [SPEED * i as f64, 0.0],
            heading: [1.0, 0.0],
        })
        .collect();
    Trajectory::new(frames).expect("knots are strictly increasing")
}

/// Ego poses on the same straight pass at the default frame rate.
pub fn ego_poses() -> PoseSet {
    let frames = (0..41)
        .map(|i| {
            let t = i as f64 * 0.1;
            PoseFrame {
                t,
                rotation: Quat::IDENTITY,
                translation: Vec3::new(SPEED * t, 0.0, 0.6),
            }
        })
        .collect();
    let seq = PoseSequence::new("ego", frames).expect("timestamps increase");
    PoseSet::new(vec![seq], None)
}

/// Road-toned 32x32 patch with seeded per-channel noise.
pub fn reference_image() -> Rgb8Image {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let base = [170i32, 96, 60];
    let pixels = (0..32 * 32)
        .map(|_| {
            [0, 1, 2].map(|c| (base[c] + rng.random_range(-24..=24)).clamp(0, 255) as u8)
        })
        .collect();
    Rgb8Image::new(32, 32, pixels).expect("patch dimensions agree")
}

/// Config tying the fixture files together, with bare file names to be
/// resolved against the config's own directory.
pub fn default_config() -> PipelineConfig {
    PipelineConfig {
        paths: ConfigPaths {
            texture: PathBuf::from("texture.png"),
            mask: PathBuf::from("mask.png"),
            depth: PathBuf::from("depth.png"),
            background: PathBuf::from("background.ply"),
            trajectory: PathBuf::from("trajectory.json"),
            poses: PathBuf::from("poses.json"),
            reference: PathBuf::from("reference.png"),
        },
        dims: HUMP_DIMS,
        scale: ScaleConfig::default(),
        transfer: TransferSettings::default(),
        placement: Placement { q: [1.0, 0.0, 0.0, 0.0], p: [HUMP_CENTER_X, 0.0, 0.0] },
        merge_margin: 0.02,
        cell_size: 0.1,
        sim: SimSettings { dt: 1e-3, t_end: T_END, preset: Some(String::from("ego")), vehicle: None },
        frame_rate_hz: 10.0,
    }
}

/// Writes the whole fixture set into `out_dir` and returns the paths.
pub fn generate_all(out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| roves_core::Error::io(out_dir, e))?;
    let file = |name: &str| out_dir.join(name);

    save_rgb8_png(&checker_texture(), &file("texture.png"))?;
    save_gray8_png(&full_mask(), &file("mask.png"))?;
    save_gray16_png(&hump_depth(), &file("depth.png"))?;
    save_rgb8_png(&reference_image(), &file("reference.png"))?;
    save_ply(&background_cloud(), &file("background.ply"))?;
    straight_trajectory().save_json(&file("trajectory.json"))?;
    ego_poses().save_json(&file("poses.json"))?;

    let cfg_path = file("config.json");
    let text = serde_json::to_string_pretty(&default_config()).expect("config serializes");
    std::fs::write(&cfg_path, text).map_err(|e| roves_core::Error::io(&cfg_path, e))?;

    Ok(vec![
        file("texture.png"),
        file("mask.png"),
        file("depth.png"),
        file("reference.png"),
        file("background.ply"),
        file("trajectory.json"),
        file("poses.json"),
        cfg_path,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use roves_core::gaussians::load_ply;

    #[test]
    fn depth_spans_the_full_16_bit_range() {
        let d = hump_depth();
        assert_eq!(*d.pixels.iter().min().unwrap(), 0);
        assert_eq!(*d.pixels.iter().max().unwrap(), 65535);
        assert_eq!(d.pixels[(HUMP_H / 2) * HUMP_W], 65535);
    }

    #[test]
    fn background_counts_and_footprint() {
        let bg = background_cloud();
        assert_eq!(bg.len(), 101 * 41);
        let xs: Vec<f64> = bg.positions.iter().map(|p| p.x).collect();
        assert_eq!(xs.iter().cloned().fold(f64::INFINITY, f64::min), 5.0);
        assert_eq!(xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 15.0);
        assert!(bg.positions.iter().all(|p| p.z == 0.0));
    }

    #[test]
    fn generation_is_reproducible_and_loadable() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let files = generate_all(d1.path()).unwrap();
        generate_all(d2.path()).unwrap();
        assert_eq!(files.len(), 8);
        for f in &files {
            let name = f.file_name().unwrap();
            let a = std::fs::read(f).unwrap();
            let b = std::fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name:?} differs between runs");
        }
        let bg = load_ply(&d1.path().join("background.ply")).unwrap();
        assert_eq!(bg.len(), 4141);
    }
}
