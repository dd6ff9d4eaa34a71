//! ADMM for `min_X ‖C(Y − X)S‖_F² + λ‖X‖_{t,*−F}` with diagonal `C`, `S`.
//!
//! Splitting `X = Z` gives a closed-form elementwise X-update and a Z-update
//! that is the tNF proximal map at `X + A/ρ` with weight `λ/ρ`. The penalty
//! grows geometrically, `ρ_k = ρ₀·μ^k`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::frobenius_distance;
use crate::prox::{tnf_prox_with, ShrinkRule, SpectralShrinkParams};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub lambda: f64,
    pub t: usize,
    pub alpha: f64,
    pub rho0: f64,
    pub mu: f64,
    pub max_iters: usize,
    /// Stopping tolerance. `None` scales with the matrix: `1e-4·sqrt(rows·cols)`.
    pub eps: Option<f64>,
    pub rule: ShrinkRule,
    /// Keep per-iteration residuals in [`SolveOutput::trace`].
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            t: 2,
            alpha: 1.8,
            rho0: 0.5,
            mu: 1.002,
            max_iters: 10,
            eps: None,
            rule: ShrinkRule::Exact,
            record_trace: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if !(self.rho0.is_finite() && self.rho0 > 0.0) {
            return bad(format!("rho0 must be positive, got {}", self.rho0));
        }
        if !(self.mu.is_finite() && self.mu > 1.0) {
            return bad(format!("mu must be > 1, got {}", self.mu));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive".into());
        }
        if let Some(eps) = self.eps {
            if !(eps.is_finite() && eps > 0.0) {
                return bad(format!("eps must be positive, got {eps}"));
            }
        }
        Ok(())
    }

    pub fn tolerance_for(&self, rows: usize, cols: usize) -> f64 {
        self.eps.unwrap_or_else(|| 1e-4 * ((rows * cols) as f64).sqrt())
    }
}

/// Diagonals of `C` (length `3d²`) and `S` (length `N`).
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalWeights {
    pub c: Vec<f64>,
    pub s: Vec<f64>,
}

impl DiagonalWeights {
    pub fn new(c: Vec<f64>, s: Vec<f64>) -> Result<Self> {
        if let Some(x) = c.iter().chain(&s).find(|x| !(x.is_finite() && **x > 0.0)) {
            return Err(Error::InvalidInput(format!("weights must be finite and positive, found {x}")));
        }
        Ok(Self { c, s })
    }

    /// Three constant channel blocks of length `block` each.
    pub fn channel_blocked(channel: [f64; 3], block: usize, s: Vec<f64>) -> Result<Self> {
        let c = channel.iter().flat_map(|&v| std::iter::repeat_n(v, block)).collect();
        Self::new(c, s)
    }

    pub fn identity(rows: usize, cols: usize) -> Self {
        Self { c: vec![1.0; rows], s: vec![1.0; cols] }
    }

    fn check_shape(&self, rows: usize, cols: usize) -> Result<()> {
        if self.c.len() != rows || self.s.len() != cols {
            return Err(Error::DimensionMismatch(format!(
                "weights ({}, {}) do not match matrix {rows}x{cols}",
                self.c.len(),
                self.s.len()
            )));
        }
        Ok(())
    }
}

fn check_same_shape(mats: &[(&str, &DMatrix<f64>)]) -> Result<()> {
    let shape = mats[0].1.shape();
    for (name, m) in &mats[1..] {
        if m.shape() != shape {
            return Err(Error::DimensionMismatch(format!("{name} is {:?}, expected {shape:?}", m.shape())));
        }
    }
    Ok(())
}

fn x_update_into(y: &DMatrix<f64>, z: &DMatrix<f64>, a: &DMatrix<f64>, w: &DiagonalWeights, rho: f64, out: &mut DMatrix<f64>) {
    let rows = y.nrows();
    for (j, &sj) in w.s.iter().enumerate() {
        let s2 = sj * sj;
        for (i, &ci) in w.c.iter().enumerate() {
            let k = j * rows + i;
            let data = 2.0 * ci * ci * s2;
            out[k] = (data * y[k] + rho * z[k] - a[k]) / (data + rho);
        }
    }
}

/// Closed-form X-update:
/// `X_ij = (2c_i²s_j²Y_ij + ρZ_ij − A_ij) / (2c_i²s_j² + ρ)`.
pub fn x_update(y: &DMatrix<f64>, z: &DMatrix<f64>, a: &DMatrix<f64>, w: &DiagonalWeights, rho: f64) -> Result<DMatrix<f64>> {
    check_same_shape(&[("Y", y), ("Z", z), ("A", a)])?;
    w.check_shape(y.nrows(), y.ncols())?;
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::InvalidInput(format!("rho must be positive, got {rho}")));
    }
    let mut out = DMatrix::zeros(y.nrows(), y.ncols());
    x_update_into(y, z, a, w, rho, &mut out);
    Ok(out)
}

/// Z-update: tNF prox at `X + A/ρ` with `τ = λ/ρ`.
pub fn z_update(x: &DMatrix<f64>, a: &DMatrix<f64>, rho: f64, cfg: &SolverConfig) -> Result<DMatrix<f64>> {
    check_same_shape(&[("X", x), ("A", a)])?;
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::InvalidInput(format!("rho must be positive, got {rho}")));
    }
    let b = x + a / rho;
    let params = SpectralShrinkParams::new(cfg.lambda / rho, cfg.t, cfg.alpha)?;
    tnf_prox_with(&b, &params, cfg.rule)
}

/// Residuals after one ADMM pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    /// `‖X_{k+1} − Z_{k+1}‖_F`
    pub primal: f64,
    /// `‖X_{k+1} − X_k‖_F`
    pub delta_x: f64,
    /// `‖Z_{k+1} − Z_k‖_F`
    pub delta_z: f64,
    /// Penalty used during the pass.
    pub rho: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.delta_x).max(self.delta_z)
    }
}

/// ADMM iterate. Starts from `X = Z = A = 0`, `ρ = ρ₀`.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub rho: f64,
    pub iter: usize,
    scratch: DMatrix<f64>,
}

impl SolverState {
    pub fn new(rows: usize, cols: usize, rho0: f64) -> Self {
        Self {
            x: DMatrix::zeros(rows, cols),
            z: DMatrix::zeros(rows, cols),
            a: DMatrix::zeros(rows, cols),
            rho: rho0,
            iter: 0,
            scratch: DMatrix::zeros(rows, cols),
        }
    }

    /// One pass: X-update, Z-update, multiplier and penalty updates.
    pub fn step(&mut self, y: &DMatrix<f64>, w: &DiagonalWeights, cfg: &SolverConfig) -> Result<Residuals> {
        let rho = self.rho;
        x_update_into(y, &self.z, &self.a, w, rho, &mut self.scratch);
        std::mem::swap(&mut self.x, &mut self.scratch);
        // scratch now holds X_k
        let delta_x = frobenius_distance(&self.x, &self.scratch);

        let z_next = z_update(&self.x, &self.a, rho, cfg).map_err(|_| Error::SolverDivergence {
            iteration: self.iter + 1,
            key: None,
        })?;
        let delta_z = frobenius_distance(&z_next, &self.z);
        self.z = z_next;

        let mut primal_sq = 0.0;
        for ((a, &x), &z) in self.a.iter_mut().zip(self.x.iter()).zip(self.z.iter()) {
            let r = x - z;
            primal_sq += r * r;
            *a += rho * r;
        }
        self.iter += 1;
        self.rho = cfg.rho0 * cfg.mu.powi(self.iter as i32);

        let res = Residuals { primal: primal_sq.sqrt(), delta_x, delta_z, rho };
        if !(res.primal.is_finite() && res.delta_x.is_finite() && res.delta_z.is_finite() && self.rho.is_finite()) {
            return Err(Error::SolverDivergence { iteration: self.iter, key: None });
        }
        Ok(res)
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub iterations: usize,
    /// All three stopping criteria held before the iteration cap.
    pub converged: bool,
    pub last: Option<Residuals>,
    /// Per-iteration residuals, kept only with `record_trace`.
    pub trace: Option<Vec<Residuals>>,
}

/// Run ADMM until `max_iters` passes or all three residuals are `≤ eps`.
pub fn solve(y: &DMatrix<f64>, w: &DiagonalWeights, cfg: &SolverConfig) -> Result<SolveOutput> {
    cfg.validate()?;
    crate::linalg::ensure_finite(y, "patch matrix")?;
    let (rows, cols) = y.shape();
    w.check_shape(rows, cols)?;
    let eps = cfg.tolerance_for(rows, cols);

    let mut state = SolverState::new(rows, cols, cfg.rho0);
    let mut trace = cfg.record_trace.then(|| Vec::with_capacity(cfg.max_iters));
    let mut last = None;
    let mut converged = false;
    while state.iter < cfg.max_iters {
        let res = state.step(y, w, cfg)?;
        if let Some(tr) = trace.as_mut() {
            tr.push(res);
        }
        last = Some(res);
        if res.primal <= eps && res.delta_x <= eps && res.delta_z <= eps {
            converged = true;
            break;
        }
    }
    Ok(SolveOutput {
        iterations: state.iter,
        x: state.x,
        z: state.z,
        converged,
        last,
        trace,
    })
}
