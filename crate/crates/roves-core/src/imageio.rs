//! PNG and raw-grid image I/O used by the pipeline: 8-bit RGB textures,
//! 8-bit gray masks, 16-bit gray depth maps, and a raw f32 depth grid.

use crate::error::Error;
use crate::Result;
use image::ImageReader;
use std::io::{Read, Write};
use std::path::Path;

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb8Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl Rgb8Image {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "pixel count {} does not match {width}x{height}",
                pixels.len()
            )));
        }
        Ok(Rgb8Image { width, height, pixels })
    }

    /// Channel values mapped to [0, 1].
    pub fn unit(&self, idx: usize) -> [f64; 3] {
        let p = self.pixels[idx];
        [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0]
    }
}

/// 8-bit grayscale image, row-major. Nonzero pixels mark the foreground
/// when used as a mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray8Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// 16-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray16Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u16>,
}

pub fn load_rgb8_png(path: &Path) -> Result<Rgb8Image> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Image { path: path.into(), source: e })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = img.pixels().map(|p| p.0).collect();
    Rgb8Image::new(w, h, pixels)
}

pub fn save_rgb8_png(img: &Rgb8Image, path: &Path) -> Result<()> {
    let buf: Vec<u8> = img.pixels.iter().flatten().copied().collect();
    let out = image::RgbImage::from_raw(img.width as u32, img.height as u32, buf)
        .expect("dimensions validated at construction");
    out.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image { path: path.into(), source: e })
}

pub fn load_gray8_png(path: &Path) -> Result<Gray8Image> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Image { path: path.into(), source: e })?
        .to_luma8();
    Ok(Gray8Image {
        width: img.width() as usize,
        height: img.height() as usize,
        pixels: img.into_raw(),
    })
}

pub fn save_gray8_png(img: &Gray8Image, path: &Path) -> Result<()> {
    let out =
        image::GrayImage::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
            .ok_or_else(|| Error::invalid("pixel count does not match dimensions"))?;
    out.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image { path: path.into(), source: e })
}

pub fn load_gray16_png(path: &Path) -> Result<Gray16Image> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Image { path: path.into(), source: e })?
        .to_luma16();
    Ok(Gray16Image {
        width: img.width() as usize,
        height: img.height() as usize,
        pixels: img.into_raw(),
    })
}

pub fn save_gray16_png(img: &Gray16Image, path: &Path) -> Result<()> {
    let out = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(
        img.width as u32,
        img.height as u32,
        img.pixels.clone(),
    )
    .ok_or_else(|| Error::invalid("pixel count does not match dimensions"))?;
    out.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image { path: path.into(), source: e })
}

const DEPTH_MAGIC: &[u8; 4] = b"RVDP";

/// Raw depth grid: 12-byte header (magic, width u32, height u32, little
/// endian) followed by row-major little-endian f32 values.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDepth {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl RawDepth {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut buf = Vec::with_capacity(12 + self.values.len() * 4);
        buf.extend_from_slice(DEPTH_MAGIC);
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<RawDepth> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 12 {
            return Err(Error::format(path, "truncated header", Some(bytes.len() as u64)));
        }
        if &bytes[0..4] != DEPTH_MAGIC {
            return Err(Error::format(path, "bad magic", Some(0)));
        }
        let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Error::format(path, "dimension overflow", Some(4)))?;
        if bytes.len() != 12 + n * 4 {
            return Err(Error::format(
                path,
                format!("expected {} payload bytes, found {}", n * 4, bytes.len() - 12),
                Some(12),
            ));
        }
        let values = (0..n)
            .map(|i| f32::from_le_bytes(bytes[12 + i * 4..16 + i * 4].try_into().unwrap()))
            .collect();
        Ok(RawDepth { width, height, values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_png_round_trip() {
        let img = Rgb8Image::new(
            3,
            2,
            vec![[0, 0, 0], [255, 0, 0], [0, 255, 0], [0, 0, 255], [128, 128, 128], [255, 255, 255]],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.png");
        save_rgb8_png(&img, &p).unwrap();
        assert_eq!(load_rgb8_png(&p).unwrap(), img);
    }

    #[test]
    fn gray16_png_round_trip() {
        let img = Gray16Image { width: 2, height: 2, pixels: vec![0, 1, 32768, 65535] };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        save_gray16_png(&img, &p).unwrap();
        assert_eq!(load_gray16_png(&p).unwrap(), img);
    }

    #[test]
    fn gray8_png_round_trip() {
        let img = Gray8Image { width: 2, height: 1, pixels: vec![0, 200] };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        save_gray8_png(&img, &p).unwrap();
        assert_eq!(load_gray8_png(&p).unwrap(), img);
    }

    #[test]
    fn raw_depth_round_trip_and_validation() {
        let d = RawDepth { width: 3, height: 2, values: vec![0.0, 0.5, 1.0, -2.0, 1e7, 0.25] };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.raw");
        d.save(&p).unwrap();
        assert_eq!(RawDepth::load(&p).unwrap(), d);

        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 1);
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(RawDepth::load(&p), Err(Error::Format { .. })));

        bytes[0] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(RawDepth::load(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let r = load_rgb8_png(Path::new("/nonexistent/file.png"));
        assert!(matches!(r, Err(Error::Io { .. })));
    }
}
