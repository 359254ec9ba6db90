use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{AloError, Result};
use crate::linalg::cholesky_jitter;

/// Per-observation leverage quantities shared by all engines.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HatDiagnostics {
    /// Diagonal of the generalized hat matrix.
    pub h_diag: Vec<f64>,
    /// Coefficients `a_i` of the kinked-loss engine.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_coeffs: Option<Vec<f64>>,
    /// Loss subgradients `g_i` of the kinked-loss engine.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_sub: Option<Vec<f64>>,
    /// Smallest pivot met while factoring the inner matrix.
    pub conditioning: f64,
}

/// An unpenalized column `c` (the intercept) with observation weights `w`.
#[derive(Debug, Clone, Copy)]
pub struct FreeColumn<'a> {
    pub column: &'a DVector<f64>,
    pub weights: &'a DVector<f64>,
}

/// Diagonal of `H = X M^{-1} X^T` for symmetric positive definite `M`, computed as
/// squared column norms of `L^{-1} X^T` without forming `H`.
///
/// With a free column the hat matrix of the augmented design `[c, X]` (inner block
/// `[c, X]^T W [c, X] + diag(0, M - X^T W X)`) is obtained by the rank-one update
/// `H = H0 + r r^T / (c^T W c - c^T W H0 W c)` with `r = c - H0 W c`.
pub fn hat_from_woodbury(inner: &DMatrix<f64>, x: &DMatrix<f64>, free: Option<FreeColumn<'_>>) -> Result<HatDiagnostics> {
    let n = x.nrows();
    let q = x.ncols();
    if inner.nrows() != q || inner.ncols() != q {
        return Err(AloError::dim(format!("inner matrix is {}x{}, design has {q} columns", inner.nrows(), inner.ncols())));
    }
    let (mut h, pivot, factor) = if q == 0 {
        (DVector::zeros(n), f64::INFINITY, None)
    } else {
        let fac = cholesky_jitter(inner, "hat matrix inner block")?;
        let half = fac.half_solve(&x.transpose());
        let h = DVector::from_fn(n, |i, _| half.column(i).norm_squared());
        let pivot = fac.min_pivot;
        (h, pivot, Some(fac))
    };
    if let Some(fc) = free {
        let wc = fc.column.component_mul(fc.weights);
        let h0wc = match &factor {
            Some(fac) => x * fac.solve_vec(&x.tr_mul(&wc)),
            None => DVector::zeros(n),
        };
        add_free_column(&mut h, &h0wc, fc.column, &wc)?;
    }
    Ok(HatDiagnostics {
        h_diag: h.as_slice().to_vec(),
        a_coeffs: None,
        g_sub: None,
        conditioning: pivot,
    })
}

/// Adds the rank-one free-column term to `h` given `H0 W c` and `W c`.
pub(crate) fn add_free_column(h: &mut DVector<f64>, h0wc: &DVector<f64>, c: &DVector<f64>, wc: &DVector<f64>) -> Result<()> {
    let denom = c.dot(wc) - wc.dot(h0wc);
    let scale = c.dot(wc).abs().max(f64::MIN_POSITIVE);
    if !(denom > 1e-12 * scale) {
        return Err(AloError::Conditioning {
            context: "intercept column is (numerically) in the span of the active design".into(),
            pivot: denom,
        });
    }
    for i in 0..h.len() {
        let r = c[i] - h0wc[i];
        h[i] += r * r / denom;
    }
    Ok(())
}
