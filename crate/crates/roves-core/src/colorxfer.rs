//! Statistical color transfer in CIE Lab: affine matching of the chroma
//! channels, a weighted mean shift of lightness, and an RGB-space blend of
//! source and transferred colors.

use crate::error::Error;
use crate::math::quantile_sorted;
use crate::Result;
use serde::{Deserialize, Serialize};

// sRGB <-> XYZ (D65) matrices and white point
const M: [[f64; 3]; 3] = [
    [0.4124564390896921, 0.357576077643909, 0.18043748326639894],
    [0.21267285140562253, 0.715152155287818, 0.07217499330655958],
    [0.019333895582329317, 0.11919202588130297, 0.9503040785363677],
];
const M_INV: [[f64; 3]; 3] = [
    [3.2404541621141045, -1.5371385127977166, -0.498531409556016],
    [-0.9692660305051868, 1.8760108454466942, 0.04155601753034984],
    [0.05564343095911469, -0.20402591351675387, 1.0572251882231791],
];
const WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];
const DELTA: f64 = 6.0 / 29.0;

/// sRGB transfer function, encoded [0,1] to linear.
pub fn srgb_decode(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Linear to encoded sRGB.
pub fn srgb_encode(v: f64) -> f64 {
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

/// Encoded sRGB in [0,1] to CIE Lab under D65.
pub fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_decode);
    let mut xyz = [0.0; 3];
    for (i, row) in M.iter().enumerate() {
        xyz[i] = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
    }
    let fx = lab_f(xyz[0] / WHITE[0]);
    let fy = lab_f(xyz[1] / WHITE[1]);
    let fz = lab_f(xyz[2] / WHITE[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// CIE Lab to encoded sRGB, clamped into [0,1] for out-of-gamut colors.
pub fn lab_to_rgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [
        WHITE[0] * lab_f_inv(fx),
        WHITE[1] * lab_f_inv(fy),
        WHITE[2] * lab_f_inv(fz),
    ];
    let mut out = [0.0; 3];
    for (i, row) in M_INV.iter().enumerate() {
        let lin = row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2];
        out[i] = srgb_encode(lin.max(0.0)).clamp(0.0, 1.0);
    }
    out
}

/// Per-channel mean and population standard deviation of a color set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

/// Default trim window for statistics.
pub const CLIP_RANGE: (f64, f64) = (0.02, 0.98);
/// Trim window that keeps everything.
pub const NO_CLIP: (f64, f64) = (0.0, 1.0);

/// Per-channel statistics after discarding values outside the channel's own
/// [lo, hi] quantiles (inclusive).
pub fn compute_stats(colors: &[[f64; 3]], clip: (f64, f64)) -> Result<LabStats> {
    if colors.len() < 2 {
        return Err(Error::invalid(format!(
            "statistics need at least 2 colors, got {}",
            colors.len()
        )));
    }
    if !(0.0 <= clip.0 && clip.0 < clip.1 && clip.1 <= 1.0) {
        return Err(Error::invalid(format!(
            "clip quantiles must satisfy 0 <= lo < hi <= 1, got {clip:?}"
        )));
    }
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for ch in 0..3 {
        let mut vals: Vec<f64> = colors.iter().map(|c| c[ch]).collect();
        if let Some(v) = vals.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value {v} in channel {ch}")));
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lo = quantile_sorted(&vals, clip.0);
        let hi = quantile_sorted(&vals, clip.1);
        let kept: Vec<f64> = vals.iter().copied().filter(|v| *v >= lo && *v <= hi).collect();
        if kept.len() < 2 {
            return Err(Error::degenerate(format!(
                "channel {ch}: fewer than 2 values remain after clipping"
            )));
        }
        let m = kept.iter().sum::<f64>() / kept.len() as f64;
        let var = kept.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / kept.len() as f64;
        mean[ch] = m;
        std[ch] = var.sqrt();
    }
    Ok(LabStats { mean, std })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferConfig {
    /// Lightness mean-shift weight.
    pub lambda: f64,
    /// RGB blend weight toward the transferred color.
    pub beta: f64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig { lambda: 0.2, beta: 0.75 }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!("lambda must lie in [0,1], got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::invalid(format!("beta must lie in [0,1], got {}", self.beta)));
        }
        Ok(())
    }
}

/// Maps Lab colors so the chroma statistics match the reference:
/// a' = (a - mu_a_src)/sigma_a_src * sigma_a_ref + mu_a_ref (same for b),
/// L' = L + lambda (mu_L_ref - mu_L_src). A zero source sigma degrades that
/// channel to a pure mean shift.
pub fn transfer(
    src: &[[f64; 3]],
    src_stats: &LabStats,
    ref_stats: &LabStats,
    cfg: &TransferConfig,
) -> Result<Vec<[f64; 3]>> {
    cfg.validate()?;
    for ch in [1usize, 2] {
        if src_stats.std[ch] == 0.0 {
            log::warn!(
                "source channel {ch} has zero spread; falling back to a mean shift"
            );
        }
    }
    let shift_l = cfg.lambda * (ref_stats.mean[0] - src_stats.mean[0]);
    Ok(src
        .iter()
        .map(|c| {
            let mut out = [c[0] + shift_l, 0.0, 0.0];
            for ch in [1usize, 2] {
                out[ch] = if src_stats.std[ch] > 0.0 {
                    (c[ch] - src_stats.mean[ch]) / src_stats.std[ch] * ref_stats.std[ch]
                        + ref_stats.mean[ch]
                } else {
                    c[ch] - src_stats.mean[ch] + ref_stats.mean[ch]
                };
            }
            out
        })
        .collect())
}

/// Eq-8-style convex combination, per RGB channel.
pub fn blend(src_rgb: [f64; 3], transferred_rgb: [f64; 3], beta: f64) -> [f64; 3] {
    [
        (1.0 - beta) * src_rgb[0] + beta * transferred_rgb[0],
        (1.0 - beta) * src_rgb[1] + beta * transferred_rgb[1],
        (1.0 - beta) * src_rgb[2] + beta * transferred_rgb[2],
    ]
}

/// Full pipeline over RGB colors: convert both sets to Lab, compute the
/// reference statistics over the trimmed reference set (and optionally the
/// trimmed source set), transfer, convert back, then blend in RGB.
pub fn transfer_colors(
    src_rgb: &[[f64; 3]],
    ref_rgb: &[[f64; 3]],
    cfg: &TransferConfig,
    clip_source: bool,
) -> Result<Vec<[f64; 3]>> {
    cfg.validate()?;
    let src_lab: Vec<[f64; 3]> = src_rgb.iter().map(|c| rgb_to_lab(*c)).collect();
    let ref_lab: Vec<[f64; 3]> = ref_rgb.iter().map(|c| rgb_to_lab(*c)).collect();
    let src_clip = if clip_source { CLIP_RANGE } else { NO_CLIP };
    let src_stats = compute_stats(&src_lab, src_clip)?;
    let ref_stats = compute_stats(&ref_lab, CLIP_RANGE)?;
    let transferred = transfer(&src_lab, &src_stats, &ref_stats, cfg)?;
    Ok(src_rgb
        .iter()
        .zip(&transferred)
        .map(|(s, t)| blend(*s, lab_to_rgb(*t), cfg.beta))
        .collect())
}

/// Ablation variant: the same affine matching applied directly to the raw
/// RGB channels (all three treated like chroma; lambda plays no role), with
/// the same trim convention and final blend.
pub fn transfer_colors_rgb_space(
    src_rgb: &[[f64; 3]],
    ref_rgb: &[[f64; 3]],
    cfg: &TransferConfig,
    clip_source: bool,
) -> Result<Vec<[f64; 3]>> {
    cfg.validate()?;
    let src_clip = if clip_source { CLIP_RANGE } else { NO_CLIP };
    let src_stats = compute_stats(src_rgb, src_clip)?;
    let ref_stats = compute_stats(ref_rgb, CLIP_RANGE)?;
    Ok(src_rgb
        .iter()
        .map(|c| {
            let mut t = [0.0; 3];
            for ch in 0..3 {
                t[ch] = if src_stats.std[ch] > 0.0 {
                    (c[ch] - src_stats.mean[ch]) / src_stats.std[ch] * ref_stats.std[ch]
                        + ref_stats.mean[ch]
                } else {
                    c[ch] - src_stats.mean[ch] + ref_stats.mean[ch]
                };
                t[ch] = t[ch].clamp(0.0, 1.0);
            }
            blend(*c, t, cfg.beta)
        })
        .collect())
}
