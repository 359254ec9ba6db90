//! Proximal engine: differentiate the fixed point `beta = prox_{lambda R}(beta - X^T l')`.
//!
//! With `J` the prox Jacobian at `z = beta - X^T l'`, the hat matrix is
//! `H = X (J X^T D X + I - J)^{-1} J X^T`, restricted to the rows where `J` is nonzero.

use nalgebra::{DMatrix, DVector};

use super::hat::{add_free_column, HatDiagnostics};
use super::{loss_derivatives, newton_predictions, require, Engine, EngineOutput};
use crate::data::{Dataset, FitResult, ModelSpec};
use crate::error::Result;
use crate::linalg::{lu_solve, select_columns, select_rows};

pub(crate) fn proximal(spec: &ModelSpec, data: &Dataset, fit: &FitResult) -> Result<EngineOutput> {
    let engine = Engine::Proximal;
    require(spec.loss.is_smooth(), engine, format!("{} loss", spec.loss.name()))?;
    require(spec.constraint.is_none(), engine, "constraints")?;
    require(spec.reg.has_prox_jacobian(), engine, format!("{} penalty", spec.reg.name()))?;
    let n = data.n();
    let x = data.x();
    let beta = fit.beta_vec();
    let eta = fit.linear_predictor(data);
    let (d1, d2) = loss_derivatives(spec, data, &eta);
    let z = &beta - x.tr_mul(&d1);
    let jac = spec.reg.prox_jacobian(&z, spec.lambda)?;
    let e: Vec<usize> = (0..jac.nrows()).filter(|&r| jac.row(r).iter().any(|&v| v != 0.0)).collect();

    let mut h = DVector::zeros(n);
    let mut pivot = f64::INFINITY;
    // Z = M^{-1} J_EE X_E^T, so that H0 = X_E Z.
    let zmat = if e.is_empty() {
        None
    } else {
        let x_e = select_columns(x, &e);
        let j_ee = select_rows(&select_columns(&jac, &e), &e);
        let mut xd = x_e.clone();
        for i in 0..n {
            xd.row_mut(i).scale_mut(d2[i]);
        }
        let q = e.len();
        let m = &j_ee * x_e.tr_mul(&xd) + DMatrix::identity(q, q) - &j_ee;
        let zm = lu_solve(&m, &(&j_ee * x_e.transpose()), "proximal Jacobian system")?;
        for i in 0..n {
            h[i] = x_e.row(i).transpose().dot(&zm.column(i));
        }
        pivot = m.clone().lu().u().diagonal().amin();
        Some((x_e, zm))
    };
    if spec.intercept {
        let ones = DVector::from_element(n, 1.0);
        let h0wc = match &zmat {
            Some((x_e, zm)) => x_e * (zm * &d2),
            None => DVector::zeros(n),
        };
        add_free_column(&mut h, &h0wc, &ones, &d2)?;
    }
    let mut warnings = Vec::new();
    let predictions = newton_predictions(&eta, &h, &d1, &d2, &mut warnings);
    Ok(EngineOutput {
        predictions,
        diagnostics: HatDiagnostics {
            h_diag: h.as_slice().to_vec(),
            a_coeffs: None,
            g_sub: None,
            conditioning: pivot,
        },
        active_set_size: e.len(),
        warnings,
    })
}
