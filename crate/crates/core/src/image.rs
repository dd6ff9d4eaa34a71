//! RGB images on the 8-bit scale stored as `f64`, plus PNG and float-container I/O.
//!
//! The float container ("FIMG") is little-endian:
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 4    | magic `FIMG`                           |
//! | 4      | 4    | format version, `u32` = 1              |
//! | 8      | 4    | height, `u32`                          |
//! | 12     | 4    | width, `u32`                           |
//! | 16     | 4    | channels, `u32` = 3                    |
//! | 20     | …    | `f32` samples, row-major, RGB interleaved |

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const FIMG_MAGIC: &[u8; 4] = b"FIMG";
pub const FIMG_VERSION: u32 = 1;

/// `H × W × 3` image with channels stored as separate planes (r, g, b).
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ColorImage {
    /// Build from planar data: channel `c`, row `r`, column `x` at `c·H·W + r·W + x`.
    pub fn from_planar(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput("image dimensions must be positive".into()));
        }
        if data.len() != 3 * height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for a {height}x{width}x3 image",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("image contains non-finite samples".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            for r in 0..height {
                for x in 0..width {
                    data.push(f(r, x, c));
                }
            }
        }
        Self::from_planar(height, width, data)
    }

    pub fn constant(height: usize, width: usize, value: [f64; 3]) -> Result<Self> {
        Self::from_fn(height, width, |_, _, c| value[c])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[channel * self.height * self.width + row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, v: f64) {
        let idx = channel * self.height * self.width + row * self.width + col;
        self.data[idx] = v;
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.pixel_count();
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn as_planar(&self) -> &[f64] {
        &self.data
    }

    pub fn as_planar_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Vectorize the `d × d` patch with top-left `(row, col)` into `out`:
    /// red block, then green, then blue, each row-major.
    pub fn extract_patch(&self, row: usize, col: usize, d: usize, out: &mut [f64]) {
        debug_assert!(row + d <= self.height && col + d <= self.width);
        debug_assert_eq!(out.len(), 3 * d * d);
        let n = self.pixel_count();
        let mut k = 0;
        for c in 0..3 {
            let plane = &self.data[c * n..(c + 1) * n];
            for r in row..row + d {
                let start = r * self.width + col;
                out[k..k + d].copy_from_slice(&plane[start..start + d]);
                k += d;
            }
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self + k·(other − self)` sample-wise.
    pub fn lerp(&self, other: &ColorImage, k: f64) -> Result<Self> {
        self.check_same_dims(other)?;
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + k * (b - a)).collect(),
        })
    }

    pub fn clamped(&self, lo: f64, hi: f64) -> Self {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if row + height > self.height || col + width > self.width {
            return Err(Error::InvalidInput(format!(
                "crop {height}x{width} at ({row}, {col}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        Self::from_fn(height, width, |r, x, c| self.get(row + r, col + x, c))
    }

    pub fn check_same_dims(&self, other: &ColorImage) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    /// Round every sample to the nearest `f32`.
    pub fn quantize_f32(&self) -> Self {
        self.map(|v| v as f32 as f64)
    }

    pub fn to_rgb8(&self) -> ::image::RgbImage {
        ::image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let px = |c| self.get(y as usize, x as usize, c).round().clamp(0.0, 255.0) as u8;
            ::image::Rgb([px(0), px(1), px(2)])
        })
    }

    /// The image after 8-bit PNG storage: clamped to `[0, 255]` and rounded.
    pub fn quantize_u8(&self) -> Self {
        self.map(|v| v.round().clamp(0.0, 255.0))
    }

    pub fn from_dynamic(img: &::image::DynamicImage) -> Result<Self> {
        use ::image::DynamicImage;
        match img {
            DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) | DynamicImage::ImageLuma16(_) => {
                let rgb = img.to_rgb16();
                let (w, h) = rgb.dimensions();
                Self::from_fn(h as usize, w as usize, |r, x, c| rgb.get_pixel(x as u32, r as u32)[c] as f64 / 257.0)
            }
            _ => {
                let rgb = img.to_rgb8();
                let (w, h) = rgb.dimensions();
                Self::from_fn(h as usize, w as usize, |r, x, c| rgb.get_pixel(x as u32, r as u32)[c] as f64)
            }
        }
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = ::image::open(path.as_ref())?;
        Self::from_dynamic(&img)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8().save(path.as_ref())?;
        Ok(())
    }

    pub fn write_fimg<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(FIMG_MAGIC)?;
        for v in [FIMG_VERSION, self.height as u32, self.width as u32, 3] {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(4 * self.data.len());
        for r in 0..self.height {
            for x in 0..self.width {
                for c in 0..3 {
                    buf.extend_from_slice(&(self.get(r, x, c) as f32).to_le_bytes());
                }
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_fimg<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 20];
        r.read_exact(&mut header).map_err(|e| Error::Format(format!("truncated header: {e}")))?;
        if &header[0..4] != FIMG_MAGIC {
            return Err(Error::Format("not a FIMG file (bad magic)".into()));
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        let (version, height, width, channels) = (word(4), word(8) as usize, word(12) as usize, word(16));
        if version != FIMG_VERSION {
            return Err(Error::Format(format!("unsupported FIMG version {version}")));
        }
        if channels != 3 {
            return Err(Error::Format(format!("expected 3 channels, found {channels}")));
        }
        let mut bytes = vec![0u8; 4 * 3 * height * width];
        r.read_exact(&mut bytes).map_err(|e| Error::Format(format!("truncated sample data: {e}")))?;
        let mut data = vec![0.0; 3 * height * width];
        let n = height * width;
        for (k, chunk) in bytes.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
            let (pix, c) = (k / 3, k % 3);
            data[c * n + pix] = v;
        }
        Self::from_planar(height, width, data)
    }

    pub fn save_fimg(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_fimg(std::io::BufWriter::new(f))
    }

    pub fn load_fimg(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_fimg(std::io::BufReader::new(f))
    }

    /// Load either container, chosen by extension (`.fimg` or anything the
    /// `image` crate decodes).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("fimg") => Self::load_fimg(path),
            _ => Self::load_png(path),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ColorImage {
        ColorImage::from_fn(4, 5, |r, x, c| (r * 10 + x) as f64 + 0.25 * c as f64).unwrap()
    }

    #[test]
    fn patch_vector_is_channel_blocked() {
        let img = sample();
        let mut v = vec![0.0; 12];
        img.extract_patch(1, 2, 2, &mut v);
        assert_eq!(&v[0..4], &[12.0, 13.0, 22.0, 23.0]);
        assert_eq!(&v[4..8], &[12.25, 13.25, 22.25, 23.25]);
        assert_eq!(&v[8..12], &[12.5, 13.5, 22.5, 23.5]);
    }

    #[test]
    fn fimg_round_trip_and_header() {
        let img = sample();
        let mut bytes = Vec::new();
        img.write_fimg(&mut bytes).unwrap();
        assert_eq!(&bytes[0..4], b"FIMG");
        assert_eq!(bytes.len(), 20 + 4 * 3 * 20);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 5);
        // first pixel, green sample
        assert_eq!(f32::from_le_bytes(bytes[24..28].try_into().unwrap()), 0.25);
        let back = ColorImage::read_fimg(&bytes[..]).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn fimg_rejects_garbage() {
        assert!(matches!(ColorImage::read_fimg(&b"PNG\0xxxxxxxxxxxxxxxxxxxxx"[..]), Err(Error::Format(_))));
        let mut bytes = Vec::new();
        sample().write_fimg(&mut bytes).unwrap();
        bytes.truncate(40);
        assert!(matches!(ColorImage::read_fimg(&bytes[..]), Err(Error::Format(_))));
    }

    #[test]
    fn png_round_trip_is_exact_for_8bit_values() {
        let img = ColorImage::from_fn(3, 7, |r, x, c| ((r * 37 + x * 11 + c * 5) % 256) as f64).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        img.save_png(&path).unwrap();
        assert_eq!(ColorImage::load(&path).unwrap(), img);
    }

    #[test]
    fn invalid_construction() {
        assert!(ColorImage::from_planar(0, 3, vec![]).is_err());
        assert!(ColorImage::from_planar(1, 1, vec![0.0; 2]).is_err());
        assert!(ColorImage::from_planar(1, 1, vec![0.0, f64::NAN, 0.0]).is_err());
    }
}
