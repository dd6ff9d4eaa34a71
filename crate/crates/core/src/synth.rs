//! Synthetic Gaussian noise, spatially invariant or modulated by a map.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::ColorImage;

/// Recorded in run manifests so noise can be regenerated elsewhere.
pub const RNG_ALGORITHM: &str = "chacha20 (rand_chacha 0.9), seed_from_u64(seed), stream = row index; standard normal via rand_distr ziggurat; draws in column-major-within-row order (col, then r,g,b)";

/// Spatial modulation map with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl NoiseMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} map values for {height}x{width}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("map values must lie in [0, 1], found {v}")));
        }
        Ok(Self { height, width, values })
    }

    pub fn constant(height: usize, width: usize, v: f64) -> Result<Self> {
        Self::new(height, width, vec![v; height * width])
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Top-left `height × width` window.
    pub fn crop(&self, height: usize, width: usize) -> Result<Self> {
        if height > self.height || width > self.width {
            return Err(Error::DimensionMismatch(format!(
                "cannot crop {}x{} map to {height}x{width}",
                self.height, self.width
            )));
        }
        let values = (0..height)
            .flat_map(|r| self.values[r * self.width..r * self.width + width].iter().copied())
            .collect();
        Self::new(height, width, values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub sigma0: [f64; 3],
    pub map: Option<NoiseMap>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn uniform(sigma0: [f64; 3], seed: u64) -> Self {
        Self { sigma0, map: None, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.sigma0.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::InvalidInput(format!("noise sigma must be finite and >= 0, got {s}")));
        }
        Ok(())
    }
}

/// Add zero-mean Gaussian noise with std `m(row, col)·σ_c` to every sample.
/// The output is not clamped. Deterministic given the seed.
pub fn add_gaussian(image: &ColorImage, spec: &NoiseSpec) -> Result<ColorImage> {
    spec.validate()?;
    let (h, w) = image.dims();
    if let Some(map) = &spec.map {
        if (map.height, map.width) != (h, w) {
            return Err(Error::DimensionMismatch(format!(
                "noise map is {}x{} but image is {h}x{w}",
                map.height, map.width
            )));
        }
    }
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
            rng.set_stream(r as u64);
            let mut row = Vec::with_capacity(3 * w);
            for x in 0..w {
                let m = spec.map.as_ref().map_or(1.0, |map| map.at(r, x));
                for c in 0..3 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    row.push(m * spec.sigma0[c] * z);
                }
            }
            row
        })
        .collect();
    ColorImage::from_fn(h, w, |r, x, c| image.get(r, x, c) + rows[r][3 * x + c])
}

/// `3(1−x)²e^{−x²−(y+1)²} − 10(x/5 − x³ − y⁵)e^{−x²−y²} − ⅓e^{−(x+1)²−y²}`
pub fn peaks(x: f64, y: f64) -> f64 {
    3.0 * (1.0 - x).powi(2) * (-x * x - (y + 1.0).powi(2)).exp()
        - 10.0 * (x / 5.0 - x.powi(3) - y.powi(5)) * (-x * x - y * y).exp()
        - (1.0 / 3.0) * (-(x + 1.0).powi(2) - y * y).exp()
}

/// `|peaks|` on an `n × n` grid over `[−3, 3]²` (endpoints included), scaled so
/// the maximum is 1. Columns follow `x`, rows follow `y`.
pub fn peaks_map(n: usize) -> Result<NoiseMap> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("peaks map needs n >= 2, got {n}")));
    }
    let coord = |i: usize| -3.0 + 6.0 * i as f64 / (n - 1) as f64;
    let mut values = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            values.push(peaks(coord(c), coord(r)).abs());
        }
    }
    let max = values.iter().cloned().fold(0.0, f64::max);
    values.iter_mut().for_each(|v| *v /= max);
    NoiseMap::new(n, n, values)
}

/// RMS of the three channel levels.
pub fn equivalent_sigma(sigma0: [f64; 3]) -> f64 {
    (sigma0.iter().map(|s| s * s).sum::<f64>() / 3.0).sqrt()
}

/// Mean noise level of a channel under a spatial map: `σ_{c0}·mean(M)`.
pub fn map_mean_sigma(sigma_c0: f64, map: &NoiseMap) -> f64 {
    sigma_c0 * map.mean()
}
