//! Subcommand implementations. Each command declares its own inputs by
//! loading exactly the files it needs, so unrelated missing files never
//! affect a run. File outputs are byte-deterministic for a fixed config;
//! timing lines go to stdout only.

use crate::config::{hex_digest, Overrides, PipelineConfig};
use roves_core::colorxfer::{rgb_to_lab, transfer_colors};
use roves_core::gaussians::{load_ply, make_primitives, merge, save_ply, DEFAULT_OPACITY};
use roves_core::halfcar::{read_csv, simulate, write_csv, HalfCarState, SimulationResult};
use roves_core::heightfield::{
    build_heightfield, excitation_along, fit_ground_plane, AccumMode, GroundPlane, Trajectory,
};
use roves_core::imageio::{load_gray16_png, load_gray8_png, load_rgb8_png, RawDepth, Rgb8Image};
use roves_core::lift::{lift_depth, save_ascii_ply, to_world, LiftOptions, LocalPointCloud, MaskedDepth};
use roves_core::metrics::{extrema_error, laplacian_variance, mean_delta_e, region_delta_e, rmse, tenengrad, GrayImage};
use roves_core::pose::{apply_correction, sample_correction, PoseSet, Provenance};
use roves_core::{Error, HeightField, Result, Vec3};
use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

pub const STAGE_TEXTURE: &str = "Texture extraction";
pub const STAGE_DEPTH: &str = "Depth estimation";
pub const STAGE_POINTS: &str = "Point cloud generation";
pub const STAGE_TRANSFER: &str = "Statistical Lab color transfer (optional)";
pub const STAGE_MERGE: &str = "Gaussian primitive initialization and scene merging";
pub const STAGE_DYNAMICS: &str = "Vehicle-dynamics solving and pose correction";

enum StageOutcome {
    External,
    Skipped,
    Ran(Duration),
}

/// Per-stage wall-clock breakdown of one pipeline run. Stages handled by
/// upstream models outside this tool are listed as "(external)".
pub struct StageReport {
    rows: Vec<(&'static str, StageOutcome)>,
}

impl StageReport {
    pub fn new() -> Self {
        StageReport { rows: Vec::new() }
    }

    pub fn external(&mut self, name: &'static str) {
        self.rows.push((name, StageOutcome::External));
    }

    pub fn skipped(&mut self, name: &'static str) {
        self.rows.push((name, StageOutcome::Skipped));
    }

    pub fn time<T>(&mut self, name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let value = f().map_err(|e| match e {
            Error::Diverged { .. } => e,
            other => Error::invalid(format!("{name}: {other}")),
        })?;
        self.rows.push((name, StageOutcome::Ran(start.elapsed())));
        Ok(value)
    }

    pub fn render(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|(n, _)| n.len())
            .chain(std::iter::once("Total".len()))
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        let mut total = Duration::ZERO;
        for (name, outcome) in &self.rows {
            let value = match outcome {
                StageOutcome::External => String::from("(external)"),
                StageOutcome::Skipped => String::from("skipped"),
                StageOutcome::Ran(d) => {
                    total += *d;
                    format!("{:.3} s", d.as_secs_f64())
                }
            };
            out.push_str(&format!("{name:width$}  {value}\n"));
        }
        out.push_str(&format!("{:width$}  {:.3} s\n", "Total", total.as_secs_f64()));
        out
    }
}

impl Default for StageReport {
    fn default() -> Self {
        Self::new()
    }
}

/// A loaded config plus the output directory and the provenance digest of
/// the effective settings (file bytes, extended by any flag overrides).
pub struct CommandCtx {
    pub cfg: PipelineConfig,
    pub sha: String,
    pub out_dir: PathBuf,
}

impl CommandCtx {
    pub fn new(config_path: &Path, overrides: &Overrides, out: Option<PathBuf>) -> Result<Self> {
        let (mut cfg, mut sha) = PipelineConfig::load(config_path)?;
        if *overrides != Overrides::default() {
            cfg.apply(overrides)?;
            sha = hex_digest(format!("{sha}+{overrides:?}").as_bytes());
        }
        let out_dir = out.unwrap_or_else(|| {
            config_path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf()
        });
        std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        Ok(CommandCtx { cfg, sha, out_dir })
    }

    pub fn out_file(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

/// Reads the mask and the depth map (16-bit PNG, or the raw f32 format for
/// any other extension) into a masked depth image.
pub fn load_masked_depth(cfg: &PipelineConfig) -> Result<MaskedDepth> {
    let mask_img = load_gray8_png(&cfg.paths.mask)?;
    let mask: Vec<bool> = mask_img.pixels.iter().map(|p| *p != 0).collect();
    let is_png = cfg.paths.depth.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let (w, h, depth): (usize, usize, Vec<f64>) = if is_png {
        let img = load_gray16_png(&cfg.paths.depth)?;
        (img.width, img.height, img.pixels.iter().map(|p| *p as f64).collect())
    } else {
        let raw = RawDepth::load(&cfg.paths.depth)?;
        (raw.width, raw.height, raw.values.iter().map(|v| *v as f64).collect())
    };
    if (w, h) != (mask_img.width, mask_img.height) {
        return Err(Error::invalid(format!(
            "depth is {w}x{h} but mask is {}x{}",
            mask_img.width, mask_img.height
        )));
    }
    MaskedDepth::new(w, h, depth, mask)
}

fn lift_local(cfg: &PipelineConfig) -> Result<LocalPointCloud> {
    let depth = load_masked_depth(cfg)?;
    let texture = load_rgb8_png(&cfg.paths.texture)?;
    lift_depth(&depth, cfg.dims, &texture, &LiftOptions::default())
}

fn reference_colors(cfg: &PipelineConfig) -> Result<Vec<[f64; 3]>> {
    let img = load_rgb8_png(&cfg.paths.reference)?;
    Ok((0..img.pixels.len()).map(|i| img.unit(i)).collect())
}

pub fn cmd_fixtures(out_dir: &Path) -> Result<String> {
    let files = crate::fixtures::generate_all(out_dir)?;
    let mut s = String::new();
    for f in &files {
        s.push_str(&format!("wrote {}\n", f.display()));
    }
    Ok(s)
}

pub fn cmd_lift(ctx: &CommandCtx) -> Result<String> {
    let cloud = lift_local(&ctx.cfg)?;
    let out = ctx.out_file("lifted.ply");
    save_ascii_ply(&cloud.points, &cloud.colors, &out)?;
    Ok(format!("wrote {} ({} points)\n", out.display(), cloud.points.len()))
}

pub fn cmd_transfer(ctx: &CommandCtx) -> Result<String> {
    let cloud = lift_local(&ctx.cfg)?;
    let reference = reference_colors(&ctx.cfg)?;
    let t = &ctx.cfg.transfer;
    let colors = transfer_colors(&cloud.colors, &reference, &t.config, t.clip_source)?;
    let out = ctx.out_file("transferred.ply");
    save_ascii_ply(&cloud.points, &colors, &out)?;
    Ok(format!("wrote {} ({} points)\n", out.display(), cloud.points.len()))
}

/// Static branch: lift, place, optionally color-transfer, initialize
/// primitives, and merge into the background scene.
pub fn cmd_insert(ctx: &CommandCtx) -> Result<String> {
    let cfg = &ctx.cfg;
    let mut report = StageReport::new();
    report.external(STAGE_TEXTURE);
    report.external(STAGE_DEPTH);

    let mut world = report.time(STAGE_POINTS, || {
        let local = lift_local(cfg)?;
        Ok(to_world(&local, &cfg.placement.transform()?))
    })?;

    if cfg.transfer.enabled {
        let colors = report.time(STAGE_TRANSFER, || {
            let reference = reference_colors(cfg)?;
            transfer_colors(&world.colors, &reference, &cfg.transfer.config, cfg.transfer.clip_source)
        })?;
        world.colors = colors;
    } else {
        report.skipped(STAGE_TRANSFER);
    }

    let (merged, removed) = report.time(STAGE_MERGE, || {
        let inserted = make_primitives(&world, &cfg.scale, DEFAULT_OPACITY)?;
        let background = load_ply(&cfg.paths.background)?;
        merge(&background, &inserted, cfg.merge_margin, None)
    })?;

    let out = ctx.out_file("merged.ply");
    save_ply(&merged, &out)?;
    Ok(format!(
        "{}wrote {} ({} primitives, {} replaced)\n",
        report.render(),
        out.display(),
        merged.len(),
        removed
    ))
}

/// Edited scene geometry as a signed-residual field over the road plane
/// fitted to the background cloud.
pub fn build_edited_field(cfg: &PipelineConfig) -> Result<(HeightField, GroundPlane)> {
    let background = load_ply(&cfg.paths.background)?;
    let local = lift_local(cfg)?;
    let world = to_world(&local, &cfg.placement.transform()?);
    let inserted = make_primitives(&world, &cfg.scale, DEFAULT_OPACITY)?;
    let (merged, _) = merge(&background, &inserted, cfg.merge_margin, None)?;
    let plane = fit_ground_plane(&background.positions)?;
    let field = build_heightfield(&merged.positions, &plane, cfg.cell_size, AccumMode::Max)?;
    Ok((field, plane))
}

pub fn cmd_heightfield(ctx: &CommandCtx) -> Result<String> {
    let (field, plane) = build_edited_field(&ctx.cfg)?;
    let bin = ctx.out_file("field.bin");
    let pgm = ctx.out_file("field.pgm");
    field.save(&bin)?;
    field.save_pgm(&pgm)?;
    let (lo, hi) = field.residual_range();
    Ok(format!(
        "wrote {} and {} ({}x{} cells, residuals [{lo:.4}, {hi:.4}] m, plane normal ({:.3}, {:.3}, {:.3}))\n",
        bin.display(),
        pgm.display(),
        field.width,
        field.height,
        plane.normal.x,
        plane.normal.y,
        plane.normal.z,
    ))
}

fn corrected_pose_set(
    sim: &SimulationResult,
    poses: &PoseSet,
    source: &str,
    sha: &str,
) -> Result<(PoseSet, Vec<(String, Vec<f64>, Vec<f64>, Vec<f64>)>)> {
    let mut sequences = Vec::with_capacity(poses.sequences.len());
    let mut series = Vec::with_capacity(poses.sequences.len());
    for seq in &poses.sequences {
        let stamps = seq.timestamps();
        let corr = sample_correction(sim, &stamps)?;
        sequences.push(apply_correction(seq, &corr, Vec3::Z, Vec3::ZERO)?);
        series.push((seq.vehicle_id.clone(), stamps, corr.dz, corr.dtheta));
    }
    let provenance = Provenance {
        source: source.to_string(),
        simulation_config_sha256: sha.to_string(),
    };
    Ok((PoseSet::new(sequences, Some(provenance)), series))
}

fn write_correction_csv(
    path: &Path,
    series: &[(String, Vec<f64>, Vec<f64>, Vec<f64>)],
) -> Result<()> {
    use std::io::Write;
    let mut out = String::from("vehicle,t,dz,dtheta\n");
    for (id, t, dz, dtheta) in series {
        for i in 0..t.len() {
            out.push_str(&format!("{id},{:.16e},{:.16e},{:.16e}\n", t[i], dz[i], dtheta[i]));
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Dynamic branch: height field, excitation along the trajectory, half-car
/// integration, and per-frame pose correction.
pub fn cmd_simulate(ctx: &CommandCtx) -> Result<String> {
    let cfg = &ctx.cfg;
    let mut report = StageReport::new();
    let summary = report.time(STAGE_DYNAMICS, || {
        let (field, _) = build_edited_field(cfg)?;
        let traj = Trajectory::load_json(&cfg.paths.trajectory)?;
        let params = cfg.vehicle_params()?;
        let excitation = excitation_along(&field, &traj, &params, cfg.sim.dt)?;
        let mut sim =
            simulate(&HalfCarState::default(), &excitation, &params, cfg.sim.t_end, cfg.sim.dt)?;
        sim.excitation_desc = format!(
            "height-field pass, {} samples at dt = {}",
            excitation.samples.len(),
            excitation.dt
        );

        let csv_path = ctx.out_file("sim.csv");
        let f = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        write_csv(&sim, BufWriter::new(f)).map_err(|e| Error::io(&csv_path, e))?;

        let poses = PoseSet::load_json(&cfg.paths.poses)?;
        let (corrected, series) = corrected_pose_set(&sim, &poses, "roves simulate", &ctx.sha)?;
        write_correction_csv(&ctx.out_file("correction.csv"), &series)?;
        corrected.save_json(&ctx.out_file("corrected_poses.json"))?;

        let peak_z = sim.states.iter().fold(0.0f64, |m, s| m.max(s.z_s.abs()));
        let peak_theta = sim.states.iter().fold(0.0f64, |m, s| m.max(s.theta.abs()));
        Ok(format!(
            "{} steps, peak |z_s| {peak_z:.4} m, peak |theta| {peak_theta:.5} rad\n",
            sim.states.len() - 1
        ))
    })?;
    Ok(format!("{}{summary}", report.render()))
}

/// Re-applies corrections from a stored simulation CSV to the pose file.
pub fn cmd_correct_poses(ctx: &CommandCtx) -> Result<String> {
    let csv_path = ctx.out_file("sim.csv");
    let f = std::fs::File::open(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let csv = read_csv(BufReader::new(f), &csv_path)?;
    let sim = SimulationResult {
        dt: csv.dt,
        states: csv.states,
        params: ctx.cfg.vehicle_params()?,
        excitation_desc: String::new(),
    };
    let poses = PoseSet::load_json(&ctx.cfg.paths.poses)?;
    let (corrected, _) = corrected_pose_set(&sim, &poses, "roves correct-poses", &ctx.sha)?;
    let out = ctx.out_file("corrected_poses.json");
    corrected.save_json(&out)?;
    Ok(format!("wrote {} ({} vehicles)\n", out.display(), corrected.sequences.len()))
}

fn read_series(path: &Path, column: Option<usize>) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen_data = false;
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let token = match column {
            Some(c) => fields.get(c).copied().ok_or_else(|| {
                Error::format(path, format!("line {}: no column {c}", ln + 1), None)
            })?,
            None => *fields.last().expect("split yields at least one field"),
        };
        match token.parse::<f64>() {
            Ok(v) => {
                out.push(v);
                seen_data = true;
            }
            Err(_) if !seen_data && out.is_empty() => continue, // header line
            Err(_) => {
                return Err(Error::format(
                    path,
                    format!("line {}: cannot parse {token:?} as a number", ln + 1),
                    None,
                ));
            }
        }
    }
    if out.is_empty() {
        return Err(Error::format(path, "no numeric rows", None));
    }
    Ok(out)
}

fn masked_labs(img: &Rgb8Image, mask_path: Option<&Path>) -> Result<Vec<[f64; 3]>> {
    let keep: Vec<bool> = match mask_path {
        Some(p) => {
            let m = load_gray8_png(p)?;
            if (m.width, m.height) != (img.width, img.height) {
                return Err(Error::invalid(format!(
                    "mask {} is {}x{} but image is {}x{}",
                    p.display(),
                    m.width,
                    m.height,
                    img.width,
                    img.height
                )));
            }
            m.pixels.iter().map(|p| *p != 0).collect()
        }
        None => vec![true; img.pixels.len()],
    };
    Ok((0..img.pixels.len())
        .filter(|i| keep[*i])
        .map(|i| rgb_to_lab(img.unit(i)))
        .collect())
}

fn ext_of(path: &Path) -> String {
    path.extension().map(|e| e.to_string_lossy().to_lowercase()).unwrap_or_default()
}

/// Compares two series CSVs or two images and reports a JSON object of
/// metric values with stable key order.
pub fn cmd_metrics(
    a: &Path,
    b: &Path,
    mask_a: Option<&Path>,
    mask_b: Option<&Path>,
    column: Option<usize>,
) -> Result<String> {
    let mut values: BTreeMap<&'static str, f64> = BTreeMap::new();
    match (ext_of(a).as_str(), ext_of(b).as_str()) {
        ("csv", "csv") => {
            let sa = read_series(a, column)?;
            let sb = read_series(b, column)?;
            let ex = extrema_error(&sa, &sb)?;
            values.insert("rmse", rmse(&sa, &sb)?);
            values.insert("peak_error", ex.peak);
            values.insert("trough_error", ex.trough);
            values.insert("extrema_error", ex.value());
        }
        ("png", "png") => {
            let img_a = load_rgb8_png(a)?;
            let img_b = load_rgb8_png(b)?;
            let gray_a = GrayImage::from_rgb8(&img_a);
            let gray_b = GrayImage::from_rgb8(&img_b);
            values.insert("laplacian_variance_a", laplacian_variance(&gray_a)?);
            values.insert("laplacian_variance_b", laplacian_variance(&gray_b)?);
            values.insert("tenengrad_a", tenengrad(&gray_a)?);
            values.insert("tenengrad_b", tenengrad(&gray_b)?);
            let labs_a = masked_labs(&img_a, mask_a)?;
            let labs_b = masked_labs(&img_b, mask_b)?;
            let paired = mask_a.is_none()
                && mask_b.is_none()
                && (img_a.width, img_a.height) == (img_b.width, img_b.height);
            if paired {
                values.insert("mean_delta_e00", mean_delta_e(&labs_a, &labs_b)?);
            } else {
                values.insert("region_delta_e00", region_delta_e(&labs_a, &labs_b)?);
            }
        }
        (ea, eb) => {
            return Err(Error::invalid(format!(
                "expected two .csv or two .png inputs, got .{ea} and .{eb}"
            )));
        }
    }
    let mut s = serde_json::to_string_pretty(&values).expect("metric map serializes");
    s.push('\n');
    Ok(s)
}
