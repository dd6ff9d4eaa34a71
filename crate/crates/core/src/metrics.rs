//! PSNR and single-scale SSIM on 8-bit-scale color images.

use crate::error::{Error, Result};
use crate::image::ColorImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const DYNAMIC_RANGE: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    pub psnr: f64,
    pub ssim: f64,
    pub per_channel_psnr: [f64; 3],
}

/// Formats a dB value; an infinite PSNR prints as `inf`.
pub fn format_db(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

fn sq_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `10·log10(peak²/MSE)` over all samples; `+∞` for identical images.
pub fn psnr(reference: &ColorImage, test: &ColorImage, peak: f64) -> Result<f64> {
    reference.check_same_dims(test)?;
    let mse = sq_err(reference.as_planar(), test.as_planar()) / reference.as_planar().len() as f64;
    Ok(psnr_from_mse(mse, peak))
}

pub fn per_channel_psnr(reference: &ColorImage, test: &ColorImage, peak: f64) -> Result<[f64; 3]> {
    reference.check_same_dims(test)?;
    let n = reference.pixel_count() as f64;
    Ok([0, 1, 2].map(|c| psnr_from_mse(sq_err(reference.plane(c), test.plane(c)) / n, peak)))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "valid" Gaussian filtering of an `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        let line = &plane[r * w..(r + 1) * w];
        for x in 0..ow {
            rows[r * ow + x] = k.iter().zip(&line[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for x in 0..ow {
            out[r * ow + x] = k.iter().enumerate().map(|(i, a)| a * rows[(r + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let k = gaussian_kernel();
    let c1 = (SSIM_K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (SSIM_K2 * DYNAMIC_RANGE).powi(2);
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, h, w, &k);
    let mu_b = filter_valid(b, h, w, &k);
    let aa = filter_valid(&prod(&|x, _| x * x), h, w, &k);
    let bb = filter_valid(&prod(&|_, y| y * y), h, w, &k);
    let ab = filter_valid(&prod(&|x, y| x * y), h, w, &k);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += num / den;
    }
    total / mu_a.len() as f64
}

/// SSIM with an 11×11 Gaussian window (σ = 1.5), `K1 = 0.01`, `K2 = 0.03`,
/// range 255, averaged over the valid region of each channel and then over
/// the three channels.
pub fn ssim(reference: &ColorImage, test: &ColorImage) -> Result<f64> {
    reference.check_same_dims(test)?;
    let (h, w) = reference.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let sum: f64 = (0..3).map(|c| ssim_plane(reference.plane(c), test.plane(c), h, w)).sum();
    Ok(sum / 3.0)
}

pub fn assess(reference: &ColorImage, test: &ColorImage) -> Result<QualityReport> {
    Ok(QualityReport {
        psnr: psnr(reference, test, DYNAMIC_RANGE)?,
        ssim: ssim(reference, test)?,
        per_channel_psnr: per_channel_psnr(reference, test, DYNAMIC_RANGE)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn textured(h: usize, w: usize) -> ColorImage {
        ColorImage::from_fn(h, w, |r, x, c| ((r * 13 + x * 7 + c * 29) % 97) as f64 + 80.0).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = textured(12, 12);
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), f64::INFINITY);
        assert_eq!(format_db(f64::INFINITY), "inf");
        assert_abs_diff_eq!(psnr(&a, &a.map(|v| v + 1.0), 255.0).unwrap(), 48.1308, epsilon = 1e-3);
        assert_abs_diff_eq!(psnr(&a, &a.map(|v| v + 16.0), 255.0).unwrap(), 48.1308 - 20.0 * 16f64.log10(), epsilon = 1e-3);
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = textured(20, 17);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ssim_inverted_is_lower() {
        let a = textured(16, 16);
        let inv = a.map(|v| 255.0 - v);
        assert!(ssim(&a, &inv).unwrap() < 1.0);
    }

    #[test]
    fn ssim_constant_offset_closed_form() {
        let a = ColorImage::constant(14, 14, [100.0, 50.0, 200.0]).unwrap();
        let b = a.map(|v| v + 10.0);
        let c1 = (0.01f64 * 255.0).powi(2);
        let lum = |m: f64| (2.0 * m * (m + 10.0) + c1) / (m * m + (m + 10.0) * (m + 10.0) + c1);
        let expected = (lum(100.0) + lum(50.0) + lum(200.0)) / 3.0;
        assert_abs_diff_eq!(ssim(&a, &b).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn small_images_rejected() {
        let a = textured(10, 30);
        assert!(ssim(&a, &a).is_err());
        assert!(psnr(&a, &textured(11, 30), 255.0).is_err());
    }

    #[test]
    fn symmetric() {
        let a = textured(15, 15);
        let b = a.map(|v| (v * 1.1 - 7.0).sin() * 40.0 + 120.0);
        assert_eq!(psnr(&a, &b, 255.0).unwrap(), psnr(&b, &a, 255.0).unwrap());
        assert_abs_diff_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap(), epsilon = 1e-15);
    }
}
