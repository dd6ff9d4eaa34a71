//! Per-group noise statistics and the diagonal weights `C` and `S`.
//!
//! The noise level of patch `j` in channel `c` is modelled as
//! `σ_cj = σ_c^p · σ_j^{1−p}`. The weights factor it as `c_i·s_j = σ_cj^{−1}`
//! without ever forming the `3d² × N` matrix of levels.

use nalgebra::DMatrix;

use crate::admm::DiagonalWeights;
use crate::error::{Error, Result};

/// Lower bound applied to every σ estimate before exponentiation.
pub const SIGMA_FLOOR: f64 = 1e-4;
/// Default `ε` in the relative-weight formula.
pub const DEFAULT_EPS_P: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupNoiseStats {
    pub sigma_c: [f64; 3],
    pub sigma_j: Vec<f64>,
    pub p: f64,
    pub sigma0: [f64; 3],
}

/// Which weights the data term keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AblationMode {
    #[default]
    Full,
    /// `‖(Y − X)S‖²` with `S = Diag(σ_j^{−1})`.
    DropC,
    /// `‖C(Y − X)‖²` with `C` blocks `σ_c^{−1}`.
    DropS,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] = [AblationMode::Full, AblationMode::DropC, AblationMode::DropS];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::DropC => "drop_C",
            AblationMode::DropS => "drop_S",
        }
    }
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(AblationMode::Full),
            "drop_C" | "drop_c" | "drop-c" => Ok(AblationMode::DropC),
            "drop_S" | "drop_s" | "drop-s" => Ok(AblationMode::DropS),
            other => Err(Error::InvalidConfig(format!(
                "unknown ablation mode '{other}' (expected full, drop_C or drop_S)"
            ))),
        }
    }
}

impl std::fmt::Display for AblationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn channel_block(y: &DMatrix<f64>, xhat: &DMatrix<f64>) -> Result<usize> {
    if y.shape() != xhat.shape() {
        return Err(Error::DimensionMismatch(format!(
            "Y is {:?} but X̂ is {:?}",
            y.shape(),
            xhat.shape()
        )));
    }
    if y.nrows() == 0 || y.nrows() % 3 != 0 {
        return Err(Error::DimensionMismatch(format!(
            "patch matrix needs 3·d² rows, got {}",
            y.nrows()
        )));
    }
    Ok(y.nrows() / 3)
}

/// Per-patch σ: `sqrt(|mean(σ₀²) − ‖y_j − x̂_j‖²/(3d²)|)` for every column.
pub fn estimate_sigma_j(y: &DMatrix<f64>, xhat: &DMatrix<f64>, sigma0: [f64; 3]) -> Result<Vec<f64>> {
    channel_block(y, xhat)?;
    let base = sigma0.iter().map(|s| s * s).sum::<f64>() / 3.0;
    let rows = y.nrows() as f64;
    Ok(y.column_iter()
        .zip(xhat.column_iter())
        .map(|(yc, xc)| {
            let r2: f64 = yc.iter().zip(xc.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            (base - r2 / rows).abs().sqrt()
        })
        .collect())
}

/// Per-channel σ pooled over the group:
/// `sqrt(|σ_{c0}² − ‖Y^{(c)} − X̂^{(c)}‖_F²/(d²·N)|)`.
pub fn estimate_sigma_c(y: &DMatrix<f64>, xhat: &DMatrix<f64>, sigma0: [f64; 3]) -> Result<[f64; 3]> {
    let block = channel_block(y, xhat)?;
    let count = (block * y.ncols()) as f64;
    let mut out = [0.0; 3];
    for (c, slot) in out.iter_mut().enumerate() {
        let rows = y.rows(c * block, block);
        let xrows = xhat.rows(c * block, block);
        let r2: f64 = rows.iter().zip(xrows.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        *slot = (sigma0[c] * sigma0[c] - r2 / count).abs().sqrt();
    }
    Ok(out)
}

/// Coefficient of variation with the population standard deviation; 0 for a
/// zero-mean vector.
pub fn coefficient_of_variation(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if mean <= 0.0 {
        return 0.0;
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    var.sqrt() / mean
}

/// `p = (v_c + ε)/(v_c + v_s + 2ε)`; 0.5 when both vectors have zero mean.
pub fn relative_weight(sigma_c: &[f64; 3], sigma_j: &[f64], eps_p: f64) -> f64 {
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    if mean(sigma_c) <= 0.0 && mean(sigma_j) <= 0.0 {
        return 0.5;
    }
    let vc = coefficient_of_variation(sigma_c);
    let vs = coefficient_of_variation(sigma_j);
    ((vc + eps_p) / (vc + vs + 2.0 * eps_p)).clamp(0.0, 1.0)
}

impl GroupNoiseStats {
    /// Estimate σ_c, σ_j and p for one group. All σ are floored at [`SIGMA_FLOOR`];
    /// `p` is computed from the unfloored estimates.
    pub fn estimate(y: &DMatrix<f64>, xhat: &DMatrix<f64>, sigma0: [f64; 3], eps_p: f64) -> Result<Self> {
        let sigma_c = estimate_sigma_c(y, xhat, sigma0)?;
        let sigma_j = estimate_sigma_j(y, xhat, sigma0)?;
        let p = relative_weight(&sigma_c, &sigma_j, eps_p);
        Ok(Self {
            sigma_c: sigma_c.map(|s| s.max(SIGMA_FLOOR)),
            sigma_j: sigma_j.into_iter().map(|s| s.max(SIGMA_FLOOR)).collect(),
            p,
            sigma0,
        })
    }
}

/// `c` blocks `σ_c^{−p}` of length `block_len`, `s_j = σ_j^{−(1−p)}`.
pub fn build_weights(stats: &GroupNoiseStats, block_len: usize) -> Result<DiagonalWeights> {
    let p = stats.p;
    let channel = stats.sigma_c.map(|s| s.max(SIGMA_FLOOR).powf(-p));
    let s = stats.sigma_j.iter().map(|s| s.max(SIGMA_FLOOR).powf(-(1.0 - p))).collect();
    DiagonalWeights::channel_blocked(channel, block_len, s)
}

pub fn ablation_weights(stats: &GroupNoiseStats, block_len: usize, mode: AblationMode) -> Result<DiagonalWeights> {
    match mode {
        AblationMode::Full => build_weights(stats, block_len),
        AblationMode::DropC => DiagonalWeights::new(
            vec![1.0; 3 * block_len],
            stats.sigma_j.iter().map(|s| 1.0 / s.max(SIGMA_FLOOR)).collect(),
        ),
        AblationMode::DropS => DiagonalWeights::channel_blocked(
            stats.sigma_c.map(|s| 1.0 / s.max(SIGMA_FLOOR)),
            block_len,
            vec![1.0; stats.sigma_j.len()],
        ),
    }
}
