//! Dual engine: ALO as a projection onto the local face of the dual feasible set.
//!
//! For squared loss `y~_i = y_i - theta_i / J_ii` with `J = I - H` and `H` the
//! projector onto the face. Other smooth losses are reduced to that case by the
//! rescaling `X_u = K^{-1} X`, `y_u`, and mapped back with `y~_i = K_ii y~_{u,i}`.

use nalgebra::{DMatrix, DVector};

use super::hat::{hat_from_woodbury, FreeColumn, HatDiagnostics};
use super::primal::weighted_gram;
use super::{require, Engine, EngineOutput, SATURATION_SKIP, SATURATION_WARN};
use crate::data::{Dataset, FitResult, ModelSpec};
use crate::error::{AloError, Result};
use crate::linalg::{projector_diag, select_columns};
use crate::losses::{dual_transform, Loss};
use crate::regularizers::{Regularizer, SUPPORT_TOL};

/// Relative singular-value cutoff for the generalized-lasso projector `A A^+`.
const PINV_CUTOFF: f64 = 1e-10;

pub(crate) fn dual(spec: &ModelSpec, data: &Dataset, fit: &FitResult) -> Result<EngineOutput> {
    let engine = Engine::Dual;
    require(spec.loss.is_smooth(), engine, format!("{} loss", spec.loss.name()))?;
    require(spec.constraint.is_none(), engine, "constraints")?;
    require(
        spec.reg.has_dual_face() || spec.reg.is_smooth(),
        engine,
        format!("{} penalty", spec.reg.name()),
    )?;
    let n = data.n();
    let eta = fit.linear_predictor(data);
    let theta = fit
        .theta_vec()
        .unwrap_or_else(|| crate::losses::smooth_dual(spec.loss, &eta, data.y()));

    // Squared loss needs no rescaling: K = I, y_u = y.
    let (k, y_u) = if spec.loss == Loss::Squared {
        (DVector::from_element(n, 1.0), data.y().clone())
    } else {
        let t = dual_transform(spec.loss, fit, data)?;
        (t.k, t.y_u)
    };
    let kinv = k.map(|v| 1.0 / v);
    let scale_rows = |m: &DMatrix<f64>| {
        let mut out = m.clone();
        for i in 0..out.nrows() {
            out.row_mut(i).scale_mut(kinv[i]);
        }
        out
    };
    let free_col = kinv.clone();
    let unit = DVector::from_element(n, 1.0);
    let free = spec.intercept.then_some(FreeColumn {
        column: &free_col,
        weights: &unit,
    });

    let beta = fit.beta_vec();
    let (diag, face_size) = match &spec.reg {
        Regularizer::Ridge | Regularizer::FrobSq { .. } => {
            let x_u = scale_rows(data.x());
            let inner = x_u.tr_mul(&x_u) + spec.reg.hessian(&beta)? * spec.lambda;
            (hat_from_woodbury(&inner, &x_u, free)?, data.p())
        }
        Regularizer::GenLasso { .. } => {
            let info = spec.reg.active_set(fit, data, SUPPORT_TOL)?;
            let b = info.face_basis.expect("generalized lasso reports a face basis");
            let a_u = scale_rows(&(data.x() * &b));
            let full = if spec.intercept { prepend(&free_col, &a_u) } else { a_u };
            let (h, rank) = projector_diag(&full, PINV_CUTOFF);
            (
                HatDiagnostics {
                    h_diag: h.as_slice().to_vec(),
                    a_coeffs: None,
                    g_sub: None,
                    conditioning: rank as f64,
                },
                b.ncols(),
            )
        }
        Regularizer::Lasso | Regularizer::Linf | Regularizer::Slope { .. } => {
            let info = spec.reg.active_set(fit, data, SUPPORT_TOL)?;
            let w = match &spec.reg {
                Regularizer::Lasso => select_columns(data.x(), &info.indices),
                _ => info.face_basis.expect("face basis for l-inf and SLOPE"),
            };
            let w_u = scale_rows(&w);
            let gram = weighted_gram(&w_u, &unit);
            (hat_from_woodbury(&gram, &w_u, free)?, w.ncols())
        }
        other => return Err(AloError::unsupported(engine.name(), format!("{} penalty", other.name()))),
    };

    let mut warnings = Vec::new();
    let mut predictions = Vec::with_capacity(n);
    for i in 0..n {
        let h = diag.h_diag[i];
        let j = 1.0 - h;
        if j <= SATURATION_SKIP {
            warnings.push(format!("observation {i}: leverage saturated (H_ii = {h:.12}), skipped"));
            predictions.push(None);
            continue;
        }
        if h > 1.0 - SATURATION_WARN {
            warnings.push(format!("observation {i}: leverage near saturation (H_ii = {h:.12})"));
        }
        predictions.push(Some(k[i] * (y_u[i] - k[i] * theta[i] / j)));
    }
    Ok(EngineOutput {
        predictions,
        diagnostics: diag,
        active_set_size: face_size,
        warnings,
    })
}

fn prepend(col: &DVector<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols() + 1);
    out.set_column(0, col);
    out.view_mut((0, 1), (m.nrows(), m.ncols())).copy_from(m);
    out
}
