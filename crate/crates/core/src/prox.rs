//! The truncated nuclear-minus-Frobenius (tNF) regularizer and its proximal map.
//!
//! For singular values `σ₁ ≥ … ≥ σ_k` the regularizer is
//! `Σ_{i>t} σ_i − α·(Σ_{i>t} σ_i²)^{1/2}`. The proximal map
//! `argmin_Z ½‖Z − B‖_F² + τ‖Z‖_{t,*−F}` keeps the singular vectors of `B`
//! and acts on its spectrum only.
//!
//! Two spectral rules are provided:
//!
//! * [`closed_form_spectrum`] keeps the head, soft-thresholds the tail and
//!   scales it by `1 + ατ/‖S_τ(r)‖₂`. This is the minimizer whenever the result
//!   is still a valid (nonincreasing) spectrum and the shrunk tail is nonzero.
//! * [`shrink_spectrum`] returns the exact minimizer over nonincreasing
//!   spectra. It takes the closed form when that is admissible and otherwise
//!   solves the order-constrained problem exactly.
//!
//! [`tnf_prox`] uses the exact rule.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, singular_values, thin_svd};

/// Spectral shrinkage parameters: prox weight `tau`, truncation `t` and
/// Frobenius coefficient `alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralShrinkParams {
    pub tau: f64,
    pub t: usize,
    pub alpha: f64,
}

impl SpectralShrinkParams {
    pub fn new(tau: f64, t: usize, alpha: f64) -> Result<Self> {
        let p = Self { tau, t, alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::InvalidInput(format!("tau must be finite and >= 0, got {}", self.tau)));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidInput(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Which spectral rule a prox evaluation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShrinkRule {
    /// Exact minimizer over nonincreasing spectra.
    #[default]
    Exact,
    /// The closed-form tail scaling applied verbatim, without re-sorting.
    ClosedForm,
}

impl ShrinkRule {
    pub fn name(self) -> &'static str {
        match self {
            ShrinkRule::Exact => "exact",
            ShrinkRule::ClosedForm => "closed_form",
        }
    }
}

impl std::str::FromStr for ShrinkRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(ShrinkRule::Exact),
            "closed_form" | "closed-form" => Ok(ShrinkRule::ClosedForm),
            other => Err(Error::InvalidConfig(format!("unknown shrink rule '{other}'"))),
        }
    }
}

/// tNF value of a nonincreasing spectrum.
pub fn tnf_of_spectrum(sorted: &[f64], t: usize, alpha: f64) -> f64 {
    if t >= sorted.len() {
        return 0.0;
    }
    let tail = &sorted[t..];
    let l1: f64 = tail.iter().sum();
    let l2 = tail.iter().map(|s| s * s).sum::<f64>().sqrt();
    l1 - alpha * l2
}

/// `‖M‖_{t,*−F}`. Can be negative when `alpha > 1`.
pub fn tnf_norm(m: &DMatrix<f64>, t: usize, alpha: f64) -> Result<f64> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::InvalidInput(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    let sv = singular_values(m)?;
    Ok(tnf_of_spectrum(&sv, t, alpha))
}

/// `½‖Z − B‖_F² + τ‖Z‖_{t,*−F}`.
pub fn prox_objective(z: &DMatrix<f64>, b: &DMatrix<f64>, params: &SpectralShrinkParams) -> Result<f64> {
    if z.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", z.shape(), b.shape())));
    }
    let fit = 0.5 * (z - b).norm_squared();
    Ok(fit + params.tau * tnf_norm(z, params.t, params.alpha)?)
}

/// Spectral objective of a nonincreasing candidate `rho` paired with `sigma`.
fn spectral_objective(rho: &[f64], sigma: &[f64], params: &SpectralShrinkParams) -> f64 {
    let fit: f64 = rho.iter().zip(sigma).map(|(r, s)| 0.5 * (r - s) * (r - s)).sum();
    fit + params.tau * tnf_of_spectrum(rho, params.t, params.alpha)
}

fn is_nonincreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] >= w[1])
}

/// Tail scaling `1 + ατ/‖S_τ(r)‖₂`, or `None` when the shrunk tail vanishes.
pub fn tail_multiplier(sigma: &[f64], params: &SpectralShrinkParams) -> Option<f64> {
    let t = params.t.min(sigma.len());
    let norm = sigma[t..]
        .iter()
        .map(|&s| {
            let g = (s - params.tau).max(0.0);
            g * g
        })
        .sum::<f64>()
        .sqrt();
    (norm > 0.0).then(|| 1.0 + params.alpha * params.tau / norm)
}

/// Closed-form spectrum: head kept, tail soft-thresholded and scaled by
/// [`tail_multiplier`]. An all-zero shrunk tail stays zero.
///
/// The result is not re-sorted; a tail value may exceed the last head value.
pub fn closed_form_spectrum(sigma: &[f64], params: &SpectralShrinkParams) -> Vec<f64> {
    let t = params.t.min(sigma.len());
    let mut rho = sigma.to_vec();
    let mult = tail_multiplier(sigma, params).unwrap_or(0.0);
    for r in &mut rho[t..] {
        *r = mult * (*r - params.tau).max(0.0);
    }
    if t > 0 && t < rho.len() && rho[t] > rho[t - 1] {
        log::debug!(
            "closed-form tail value {} exceeds head value {} (alpha*tau/norm = {})",
            rho[t],
            rho[t - 1],
            mult - 1.0
        );
    }
    rho
}

/// Minimizer of the tail problem when the order coupling to the head is
/// ignored. Equals [`closed_form_spectrum`] except when the shrunk tail
/// vanishes, where the first tail value becomes `max(0, σ_{t+1} − τ + ατ)`.
fn relaxed_spectrum(sigma: &[f64], params: &SpectralShrinkParams) -> Vec<f64> {
    let t = params.t.min(sigma.len());
    let mut rho = closed_form_spectrum(sigma, params);
    if t < rho.len() && tail_multiplier(sigma, params).is_none() {
        rho[t] = (sigma[t] - params.tau + params.alpha * params.tau).max(0.0);
    }
    rho
}

/// Weighted isotonic (nonincreasing) regression followed by clamping at zero.
fn isotonic_nonincreasing(target: &[f64], weight: &[f64], out: &mut Vec<f64>) {
    // (weighted sum, total weight, count)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(target.len());
    for (&z, &w) in target.iter().zip(weight) {
        blocks.push((z * w, w, 1));
        while blocks.len() > 1 {
            let (s1, w1, _) = blocks[blocks.len() - 2];
            let (s2, w2, _) = blocks[blocks.len() - 1];
            if s1 / w1 < s2 / w2 {
                let (s, w, c) = blocks.pop().unwrap();
                let last = blocks.last_mut().unwrap();
                last.0 += s;
                last.1 += w;
                last.2 += c;
            } else {
                break;
            }
        }
    }
    out.clear();
    for (s, w, c) in blocks {
        let v = (s / w).max(0.0);
        out.extend(std::iter::repeat_n(v, c));
    }
}

/// Exact minimizer of `½‖ρ − σ‖² + τ·tNF(ρ)` over nonincreasing `ρ ≥ 0`.
///
/// `sigma` must be nonincreasing and nonnegative.
pub fn shrink_spectrum(sigma: &[f64], params: &SpectralShrinkParams) -> Vec<f64> {
    let n = sigma.len();
    let t = params.t.min(n);
    if t == n || params.tau == 0.0 {
        return sigma.to_vec();
    }
    let relaxed = relaxed_spectrum(sigma, params);
    if is_nonincreasing(&relaxed) {
        return relaxed;
    }
    ordered_spectrum(sigma, params)
}

/// Order-constrained solve, used when the relaxed tail overtakes the head.
///
/// With `γ = ατ` and `R` the tail norm at the optimum, the optimum is the
/// isotonic projection of `(σ_head, σ_tail − τ + (γ/R)·ρ_tail)`. For `R > γ`
/// this is a convex weighted isotonic regression in the single parameter
/// `η = γ/R`, and `η·R(η)` is increasing, so bisection finds the one
/// consistent `η`. For `R ≤ γ` the regularizer is concave on the tail and the
/// tail is flat: `v` on its first `k` entries and zero after, with head values
/// `max(σ_i, v)`. Each flat family is a convex 1-D problem in `v`.
fn ordered_spectrum(sigma: &[f64], params: &SpectralShrinkParams) -> Vec<f64> {
    let n = sigma.len();
    let t = params.t;
    let tau = params.tau;
    let gamma = params.alpha * tau;
    let shifted: Vec<f64> = sigma
        .iter()
        .enumerate()
        .map(|(i, &s)| if i < t { s } else { s - tau })
        .collect();

    let mut best: Vec<f64> = sigma[..t].iter().copied().chain(std::iter::repeat_n(0.0, n - t)).collect();
    let mut best_val = spectral_objective(&best, sigma, params);
    let consider = |cand: &[f64], best: &mut Vec<f64>, best_val: &mut f64| {
        if is_nonincreasing(cand) {
            let val = spectral_objective(cand, sigma, params);
            if val < *best_val {
                *best_val = val;
                best.clear();
                best.extend_from_slice(cand);
            }
        }
    };

    // Branch R > γ.
    let mut target = vec![0.0; n];
    let mut weight = vec![1.0; n];
    let mut cand = Vec::with_capacity(n);
    let mut solve_at = |eta: f64, cand: &mut Vec<f64>| -> f64 {
        for i in 0..n {
            if i < t {
                target[i] = shifted[i];
                weight[i] = 1.0;
            } else {
                target[i] = shifted[i] / (1.0 - eta);
                weight[i] = 1.0 - eta;
            }
        }
        isotonic_nonincreasing(&target, &weight, cand);
        cand[t..].iter().map(|x| x * x).sum::<f64>().sqrt()
    };
    if gamma == 0.0 {
        solve_at(0.0, &mut cand);
        consider(&cand, &mut best, &mut best_val);
    } else {
        let mut lo = 0.0_f64;
        let mut hi = 1.0 - 1e-12;
        if hi * solve_at(hi, &mut cand) > gamma {
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if mid * solve_at(mid, &mut cand) > gamma {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            solve_at(0.5 * (lo + hi), &mut cand);
            consider(&cand, &mut best, &mut best_val);
        }
    }

    // Branch R ≤ γ: flat tail families.
    let mut tail_sum = 0.0;
    for k in 1..=(n - t) {
        tail_sum += shifted[t + k - 1];
        let pull = tail_sum + gamma * (k as f64).sqrt();
        // j = number of head entries pooled with the tail block.
        let mut head_sum = 0.0;
        for j in 0..=t {
            if j > 0 {
                head_sum += sigma[t - j];
            }
            let v = ((head_sum + pull) / (j + k) as f64).max(0.0);
            cand.clear();
            cand.extend(sigma[..t].iter().map(|&s| s.max(v)));
            cand.extend(std::iter::repeat_n(v, k));
            cand.extend(std::iter::repeat_n(0.0, n - t - k));
            consider(&cand, &mut best, &mut best_val);
        }
    }
    best
}

/// Spectrum produced by `rule`.
pub fn apply_rule(sigma: &[f64], params: &SpectralShrinkParams, rule: ShrinkRule) -> Vec<f64> {
    match rule {
        ShrinkRule::Exact => shrink_spectrum(sigma, params),
        ShrinkRule::ClosedForm => closed_form_spectrum(sigma, params),
    }
}

/// Proximal map of `τ‖·‖_{t,*−F}` at `b` using `rule`.
pub fn tnf_prox_with(b: &DMatrix<f64>, params: &SpectralShrinkParams, rule: ShrinkRule) -> Result<DMatrix<f64>> {
    params.validate()?;
    ensure_finite(b, "prox argument")?;
    let k = b.nrows().min(b.ncols());
    if params.tau == 0.0 || params.t >= k {
        return Ok(b.clone());
    }
    let svd = thin_svd(b)?;
    let rho = apply_rule(svd.singular_values.as_slice(), params, rule);
    Ok(svd.reconstruct_with(&rho))
}

/// Global minimizer of `½‖Z − B‖_F² + τ‖Z‖_{t,*−F}`.
pub fn tnf_prox(b: &DMatrix<f64>, params: &SpectralShrinkParams) -> Result<DMatrix<f64>> {
    tnf_prox_with(b, params, ShrinkRule::Exact)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn diag(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(values))
    }

    fn params(tau: f64, t: usize, alpha: f64) -> SpectralShrinkParams {
        SpectralShrinkParams::new(tau, t, alpha).unwrap()
    }

    #[test]
    fn tnf_norm_examples() {
        assert_eq!(tnf_norm(&DMatrix::zeros(3, 2), 1, 1.0).unwrap(), 0.0);
        let d = diag(&[3.0, 2.0, 1.0]);
        assert_abs_diff_eq!(tnf_norm(&d, 1, 1.0).unwrap(), 3.0 - 5f64.sqrt(), epsilon = 1e-12);
        assert_eq!(tnf_norm(&d, 3, 1.0).unwrap(), 0.0);
        assert_eq!(tnf_norm(&d, 7, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn tnf_norm_rejects_non_finite() {
        let mut m = diag(&[1.0, 2.0]);
        m[(0, 1)] = f64::INFINITY;
        assert!(matches!(tnf_norm(&m, 0, 1.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn params_validation() {
        assert!(SpectralShrinkParams::new(-1.0, 0, 0.0).is_err());
        assert!(SpectralShrinkParams::new(1.0, 0, -0.5).is_err());
        assert!(SpectralShrinkParams::new(f64::NAN, 0, 0.0).is_err());
    }

    #[test]
    fn zero_tau_is_identity() {
        let b = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 4.0, 0.0, 2.0]);
        assert_eq!(tnf_prox(&b, &params(0.0, 0, 1.8)).unwrap(), b);
        assert_eq!(tnf_prox_with(&b, &params(0.0, 1, 1.0), ShrinkRule::ClosedForm).unwrap(), b);
    }

    #[test]
    fn truncation_covering_all_values_is_identity() {
        let b = diag(&[5.0, 3.0, 1.0]);
        assert_eq!(tnf_prox(&b, &params(1.0, 3, 1.0)).unwrap(), b);
    }

    #[test]
    fn soft_threshold_reduction() {
        let z = tnf_prox(&diag(&[5.0, 3.0, 1.0]), &params(1.0, 0, 0.0)).unwrap();
        assert!((z - diag(&[4.0, 2.0, 0.0])).abs().max() < 1e-12);
    }

    #[test]
    fn head_kept_tail_scaled() {
        // r = (0, 3, 1), S(r) = (0, 2, 0), multiplier 1.5.
        let p = params(1.0, 1, 1.0);
        assert_abs_diff_eq!(tail_multiplier(&[5.0, 3.0, 1.0], &p).unwrap(), 1.5, epsilon = 1e-15);
        let z = tnf_prox(&diag(&[5.0, 3.0, 1.0]), &p).unwrap();
        assert!((z - diag(&[5.0, 3.0, 0.0])).abs().max() < 1e-12);
    }

    #[test]
    fn vanishing_tail_closed_form_is_zero() {
        let p = params(2.0, 1, 0.5);
        assert_eq!(closed_form_spectrum(&[5.0, 1.0, 0.5], &p), vec![5.0, 0.0, 0.0]);
        assert!(tail_multiplier(&[5.0, 1.0, 0.5], &p).is_none());
    }

    #[test]
    fn vanishing_tail_exact_keeps_one_component() {
        // tail values 1.0, 0.5 are below tau = 2, but alpha*tau = 3 outweighs
        // the shrink: single-component tail of size 1 - 2 + 3 = 2.
        let p = params(2.0, 1, 1.5);
        let rho = shrink_spectrum(&[5.0, 1.0, 0.5], &p);
        assert_abs_diff_eq!(rho[0], 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rho[1], 2.0, epsilon = 1e-15);
        assert_eq!(rho[2], 0.0);
        let zero_tail = [5.0, 0.0, 0.0];
        assert!(spectral_objective(&rho, &[5.0, 1.0, 0.5], &p) < spectral_objective(&zero_tail, &[5.0, 1.0, 0.5], &p));
    }

    #[test]
    fn overtaking_tail_is_pooled_with_head() {
        // closed form gives tail 1.9 + 1.8 = 3.7 > 3; the ordered optimum pools both at 3.35.
        let sigma = [3.0, 2.9];
        let p = params(1.0, 1, 1.8);
        let cf = closed_form_spectrum(&sigma, &p);
        assert_abs_diff_eq!(cf[1], 3.7, epsilon = 1e-12);
        let rho = shrink_spectrum(&sigma, &p);
        assert_abs_diff_eq!(rho[0], 3.35, epsilon = 1e-9);
        assert_abs_diff_eq!(rho[1], 3.35, epsilon = 1e-9);
    }

    #[test]
    fn isotonic_pools_violators() {
        let mut out = Vec::new();
        isotonic_nonincreasing(&[1.0, 3.0, 2.0, -1.0], &[1.0, 1.0, 1.0, 1.0], &mut out);
        assert_eq!(out, vec![2.0, 2.0, 2.0, 0.0]);
        isotonic_nonincreasing(&[1.0, 4.0], &[3.0, 1.0], &mut out);
        assert_abs_diff_eq!(out[0], 1.75, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], 1.75, epsilon = 1e-15);
    }
}
