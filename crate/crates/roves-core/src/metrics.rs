//! Evaluation metrics: series agreement (RMSE, extrema error), image
//! sharpness (Laplacian variance, Tenengrad), and CIEDE2000 color difference.

use crate::colorxfer::srgb_decode;
use crate::error::Error;
use crate::imageio::Rgb8Image;
use crate::Result;

/// Root-mean-square difference of two equal-length series.
pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!(
            "series lengths must match and be nonzero, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// Peak and trough discrepancies of two series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtremaError {
    /// |max(a) - max(b)|
    pub peak: f64,
    /// |min(a) - min(b)|
    pub trough: f64,
}

impl ExtremaError {
    /// The reported aggregate: the worse of the two discrepancies.
    pub fn value(&self) -> f64 {
        self.peak.max(self.trough)
    }
}

pub fn extrema_error(a: &[f64], b: &[f64]) -> Result<ExtremaError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!(
            "series lengths must match and be nonzero, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let fold = |s: &[f64]| {
        s.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
    };
    let (min_a, max_a) = fold(a);
    let (min_b, max_b) = fold(b);
    Ok(ExtremaError { peak: (max_a - max_b).abs(), trough: (min_a - min_b).abs() })
}

/// Grayscale image with luminance in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "pixel count {} does not match {width}x{height}",
                pixels.len()
            )));
        }
        Ok(GrayImage { width, height, pixels })
    }

    /// BT.709 luma computed from linear RGB (the sRGB encoding is undone
    /// before weighting).
    pub fn from_rgb8(img: &Rgb8Image) -> Self {
        let pixels = img
            .pixels
            .iter()
            .map(|p| {
                let r = srgb_decode(p[0] as f64 / 255.0);
                let g = srgb_decode(p[1] as f64 / 255.0);
                let b = srgb_decode(p[2] as f64 / 255.0);
                0.2126 * r + 0.7152 * g + 0.0722 * b
            })
            .collect();
        GrayImage { width: img.width, height: img.height, pixels }
    }

    fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    fn check_kernel_fit(&self) -> Result<()> {
        if self.width < 3 || self.height < 3 {
            return Err(Error::invalid(format!(
                "image must be at least 3x3 for a 3x3 kernel, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Population variance of the 4-neighbor Laplacian response
/// [[0,1,0],[1,-4,1],[0,1,0]] over interior pixels.
pub fn laplacian_variance(img: &GrayImage) -> Result<f64> {
    img.check_kernel_fit()?;
    let mut responses = Vec::with_capacity((img.width - 2) * (img.height - 2));
    for r in 1..img.height - 1 {
        for c in 1..img.width - 1 {
            let vertical = img.at(r - 1, c) + img.at(r + 1, c);
            let horizontal = img.at(r, c - 1) + img.at(r, c + 1);
            responses.push(vertical + horizontal - 4.0 * img.at(r, c));
        }
    }
    let n = responses.len() as f64;
    let mean = responses.iter().sum::<f64>() / n;
    Ok(responses.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
}

/// Mean squared Sobel gradient magnitude (Gx^2 + Gy^2) over interior pixels.
pub fn tenengrad(img: &GrayImage) -> Result<f64> {
    img.check_kernel_fit()?;
    let mut sum = 0.0;
    for r in 1..img.height - 1 {
        for c in 1..img.width - 1 {
            let col = |cc: usize| img.at(r - 1, cc) + 2.0 * img.at(r, cc) + img.at(r + 1, cc);
            let row = |rr: usize| img.at(rr, c - 1) + 2.0 * img.at(rr, c) + img.at(rr, c + 1);
            let gx = col(c + 1) - col(c - 1);
            let gy = row(r + 1) - row(r - 1);
            sum += gx * gx + gy * gy;
        }
    }
    Ok(sum / ((img.width - 2) * (img.height - 2)) as f64)
}

const POW7_25: f64 = 6103515625.0; // 25^7

/// CIEDE2000 color difference with k_L = k_C = k_H = 1, including the
/// hue-rotation correction term.
pub fn ciede2000(lab1: [f64; 3], lab2: [f64; 3]) -> f64 {
    let (l1, a1, b1) = (lab1[0], lab1[1], lab1[2]);
    let (l2, a2, b2) = (lab2[0], lab2[1], lab2[2]);
    let c1 = a1.hypot(b1);
    let c2 = a2.hypot(b2);
    let cbar = (c1 + c2) / 2.0;
    let cbar7 = cbar.powi(7);
    let g = 0.5 * (1.0 - (cbar7 / (cbar7 + POW7_25)).sqrt());
    let ap1 = (1.0 + g) * a1;
    let ap2 = (1.0 + g) * a2;
    let cp1 = ap1.hypot(b1);
    let cp2 = ap2.hypot(b2);
    let hp = |b: f64, ap: f64| {
        if b == 0.0 && ap == 0.0 {
            0.0
        } else {
            let h = b.atan2(ap).to_degrees();
            if h < 0.0 {
                h + 360.0
            } else {
                h
            }
        }
    };
    let hp1 = hp(b1, ap1);
    let hp2 = hp(b2, ap2);
    let dlp = l2 - l1;
    let dcp = cp2 - cp1;
    let dhp_angle = if cp1 * cp2 == 0.0 {
        0.0
    } else {
        let d = hp2 - hp1;
        if d.abs() <= 180.0 {
            d
        } else if d > 180.0 {
            d - 360.0
        } else {
            d + 360.0
        }
    };
    let dhp = 2.0 * (cp1 * cp2).sqrt() * (dhp_angle.to_radians() / 2.0).sin();
    let lbar = (l1 + l2) / 2.0;
    let cpbar = (cp1 + cp2) / 2.0;
    let hbar = if cp1 * cp2 == 0.0 {
        hp1 + hp2
    } else if (hp1 - hp2).abs() <= 180.0 {
        (hp1 + hp2) / 2.0
    } else if hp1 + hp2 < 360.0 {
        (hp1 + hp2 + 360.0) / 2.0
    } else {
        (hp1 + hp2 - 360.0) / 2.0
    };
    let t = 1.0 - 0.17 * (hbar - 30.0).to_radians().cos()
        + 0.24 * (2.0 * hbar).to_radians().cos()
        + 0.32 * (3.0 * hbar + 6.0).to_radians().cos()
        - 0.20 * (4.0 * hbar - 63.0).to_radians().cos();
    let dtheta = 30.0 * (-((hbar - 275.0) / 25.0) * ((hbar - 275.0) / 25.0)).exp();
    let cpbar7 = cpbar.powi(7);
    let rc = 2.0 * (cpbar7 / (cpbar7 + POW7_25)).sqrt();
    let sl = 1.0 + 0.015 * (lbar - 50.0) * (lbar - 50.0)
        / (20.0 + (lbar - 50.0) * (lbar - 50.0)).sqrt();
    let sc = 1.0 + 0.045 * cpbar;
    let sh = 1.0 + 0.015 * cpbar * t;
    let rt = -(2.0 * dtheta).to_radians().sin() * rc;
    ((dlp / sl) * (dlp / sl)
        + (dcp / sc) * (dcp / sc)
        + (dhp / sh) * (dhp / sh)
        + rt * (dcp / sc) * (dhp / sh))
        .sqrt()
}

/// CIEDE2000 between the mean Lab of two color sets.
pub fn region_delta_e(labs_a: &[[f64; 3]], labs_b: &[[f64; 3]]) -> Result<f64> {
    let mean = |set: &[[f64; 3]]| -> Result<[f64; 3]> {
        if set.is_empty() {
            return Err(Error::invalid("region has no colors"));
        }
        let mut m = [0.0; 3];
        for c in set {
            for ch in 0..3 {
                m[ch] += c[ch];
            }
        }
        Ok(m.map(|v| v / set.len() as f64))
    };
    Ok(ciede2000(mean(labs_a)?, mean(labs_b)?))
}

/// Mean per-pixel CIEDE2000 over paired color sets.
pub fn mean_delta_e(labs_a: &[[f64; 3]], labs_b: &[[f64; 3]]) -> Result<f64> {
    if labs_a.len() != labs_b.len() || labs_a.is_empty() {
        return Err(Error::invalid(format!(
            "color sets must pair up, got {} and {}",
            labs_a.len(),
            labs_b.len()
        )));
    }
    let sum: f64 = labs_a.iter().zip(labs_b).map(|(x, y)| ciede2000(*x, *y)).sum();
    Ok(sum / labs_a.len() as f64)
}
