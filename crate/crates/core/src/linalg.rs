//! Thin SVD and small dense helpers shared by the prox and solver modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Thin singular value decomposition `U · Diag(σ) · Vᵀ` with `k = min(m, n)`.
///
/// Singular values are nonincreasing and nonnegative. Factors are whatever the
/// underlying routine returns; callers compare reconstructions, never factors.
#[derive(Debug, Clone)]
pub struct SvdTriple {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SvdTriple {
    pub fn rank_bound(&self) -> usize {
        self.singular_values.len()
    }

    /// `U · Diag(values) · Vᵀ` for an arbitrary spectrum of length `k`.
    pub fn reconstruct_with(&self, values: &[f64]) -> DMatrix<f64> {
        assert_eq!(values.len(), self.rank_bound(), "spectrum length must equal min(m, n)");
        let mut scaled = self.u.clone();
        for (j, &s) in values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(s);
        }
        scaled * self.v.transpose()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.reconstruct_with(self.singular_values.as_slice())
    }
}

pub fn ensure_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} contains non-finite entries")))
    }
}

/// Thin SVD of a finite matrix.
pub fn thin_svd(m: &DMatrix<f64>) -> Result<SvdTriple> {
    ensure_finite(m, "matrix")?;
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(SvdTriple {
            u: DMatrix::zeros(rows, 0),
            singular_values: DVector::zeros(0),
            v: DMatrix::zeros(cols, 0),
        });
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut singular_values = svd.singular_values;
    // The routine can return -0.0 or tiny negatives for rank-deficient inputs.
    singular_values.apply(|s| *s = s.max(0.0));
    Ok(SvdTriple {
        u,
        singular_values,
        v: v_t.transpose(),
    })
}

pub fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    ensure_finite(m, "matrix")?;
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let mut sv: Vec<f64> = m.singular_values().iter().map(|s| s.max(0.0)).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

pub fn frobenius_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
