//! Primal engines: one Newton step from the full-data fit.

use nalgebra::{DMatrix, DVector};

use super::hat::{hat_from_woodbury, FreeColumn, HatDiagnostics};
use super::{loss_derivatives, newton_predictions, require, Engine, EngineOutput, SATURATION_SKIP, SATURATION_WARN};
use crate::data::{Dataset, FitResult, ModelSpec};
use crate::error::{AloError, Result};
use crate::linalg::{cholesky_jitter, select_columns, select_rows};
use crate::losses::{partition_singular, SINGULARITY_TOL};
use crate::regularizers::{Regularizer, SUPPORT_TOL};
use crate::solvers::kink_subgradients;

/// `X^T diag(w) X`.
pub(crate) fn weighted_gram(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut xw = x.clone();
    for i in 0..x.nrows() {
        xw.row_mut(i).scale_mut(w[i]);
    }
    x.tr_mul(&xw)
}

/// Hat diagonal of `[1, X_A]` (or `X_A`) with inner block `X_A^T D X_A + lambda Hess_A`.
pub(crate) fn newton_hat(
    spec: &ModelSpec,
    x_a: &DMatrix<f64>,
    penalty_hess: &DMatrix<f64>,
    d2: &DVector<f64>,
) -> Result<HatDiagnostics> {
    let inner = weighted_gram(x_a, d2) + penalty_hess * spec.lambda;
    let ones = DVector::from_element(x_a.nrows(), 1.0);
    let free = spec.intercept.then_some(FreeColumn {
        column: &ones,
        weights: d2,
    });
    hat_from_woodbury(&inner, x_a, free)
}

pub(crate) fn smooth_primal(spec: &ModelSpec, data: &Dataset, fit: &FitResult) -> Result<EngineOutput> {
    let engine = Engine::SmoothPrimal;
    require(spec.loss.is_smooth(), engine, format!("{} loss", spec.loss.name()))?;
    require(spec.reg.is_smooth(), engine, format!("{} penalty", spec.reg.name()))?;
    require(spec.constraint.is_none(), engine, "constraints")?;
    let beta = fit.beta_vec();
    let eta = fit.linear_predictor(data);
    let (d1, d2) = loss_derivatives(spec, data, &eta);
    let diag = newton_hat(spec, data.x(), &spec.reg.hessian(&beta)?, &d2)?;
    let mut warnings = Vec::new();
    let h = DVector::from_column_slice(&diag.h_diag);
    let predictions = newton_predictions(&eta, &h, &d1, &d2, &mut warnings);
    Ok(EngineOutput {
        predictions,
        diagnostics: diag,
        active_set_size: data.p(),
        warnings,
    })
}

/// Active-set Newton step for separable (or block-separable) nonsmooth penalties.
pub(crate) fn nonsmooth_reg(spec: &ModelSpec, data: &Dataset, fit: &FitResult) -> Result<EngineOutput> {
    let engine = Engine::NonsmoothReg;
    require(spec.loss.is_smooth(), engine, format!("{} loss", spec.loss.name()))?;
    require(spec.constraint.is_none(), engine, "constraints")?;
    require(
        matches!(spec.reg, Regularizer::Lasso | Regularizer::GroupLasso { .. } | Regularizer::Ridge),
        engine,
        format!("{} penalty", spec.reg.name()),
    )?;
    let info = spec.reg.active_set(fit, data, SUPPORT_TOL)?;
    let a = &info.indices;
    let beta = fit.beta_vec();
    let eta = fit.linear_predictor(data);
    let (d1, d2) = loss_derivatives(spec, data, &eta);
    let x_a = select_columns(data.x(), a);
    let hess = spec.reg.hessian(&beta)?;
    let hess_a = select_rows(&select_columns(&hess, a), a);
    let diag = newton_hat(spec, &x_a, &hess_a, &d2)?;
    let mut warnings = Vec::new();
    let h = DVector::from_column_slice(&diag.h_diag);
    let predictions = newton_predictions(&eta, &h, &d1, &d2, &mut warnings);
    Ok(EngineOutput {
        predictions,
        diagnostics: diag,
        active_set_size: a.len(),
        warnings,
    })
}

/// Kinked loss (hinge) with a twice-differentiable penalty. Observations on the
/// kink (`V`) pin the fit; the rest (`S`) see the usual Newton update.
pub(crate) fn nonsmooth_loss(spec: &ModelSpec, data: &Dataset, fit: &FitResult) -> Result<EngineOutput> {
    let engine = Engine::NonsmoothLoss;
    require(spec.reg.is_smooth(), engine, format!("{} penalty", spec.reg.name()))?;
    require(spec.constraint.is_none(), engine, "constraints")?;
    let n = data.n();
    let x = data.x();
    let beta = fit.beta_vec();
    let eta = fit.linear_predictor(data);
    let (v, s) = partition_singular(spec.loss, fit, data, SINGULARITY_TOL);

    // l' and l'' on S; subgradients on V from stationarity.
    let mut g = DVector::zeros(n);
    let mut d2 = DVector::zeros(n);
    for &j in &s {
        g[j] = spec.loss.d1(eta[j], data.y()[j]);
        d2[j] = spec.loss.d2(eta[j], data.y()[j]);
    }
    let mut warnings = Vec::new();
    if !v.is_empty() {
        let gv = kink_subgradients(spec, data, fit, &v, &s)?;
        for (k, &j) in v.iter().enumerate() {
            g[j] = gv[k];
        }
        let (lo, hi) = (gv.min(), gv.max());
        if lo < -1.0 - 1e-6 || hi > 1.0 + 1e-6 {
            warnings.push(format!("kink subgradients outside the subdifferential: [{lo:.3e}, {hi:.3e}]"));
        }
    }

    let x_s = select_rows(x, &s);
    let d2_s = DVector::from_iterator(s.len(), s.iter().map(|&j| d2[j]));
    let y_mat = spec.reg.hessian(&beta)? * spec.lambda + weighted_gram(&x_s, &d2_s);
    let yf = cholesky_jitter(&y_mat, "kinked-loss inner matrix Y")?;
    // Columns of Q = L^{-1} X^T give x_i^T Y^{-1} x_k = q_i^T q_k.
    let q = yf.half_solve(&x.transpose());
    let x_v = select_rows(x, &v);
    let q_v = select_columns(&q, &v);
    let mut pivot = yf.min_pivot;

    let mut a_coef = DVector::zeros(n);
    let mut base_w = DVector::from_fn(n, |i, _| q.column(i).norm_squared());
    let mf = if v.is_empty() {
        None
    } else {
        let m = q_v.tr_mul(&q_v);
        let f = cholesky_jitter(&m, "X_V Y^{-1} X_V^T").map_err(|_| {
            AloError::Assumption("observations on the kink have linearly dependent features".into())
        })?;
        pivot = pivot.min(f.min_pivot);
        // Subtract x_i^T Y^{-1} X_V^T M^{-1} X_V Y^{-1} x_i.
        let cross = f.half_solve(&q_v.tr_mul(&q));
        for i in 0..n {
            base_w[i] -= cross.column(i).norm_squared();
        }
        Some((m, f))
    };

    if spec.intercept {
        let a = d2_s.sum();
        let b = x_s.tr_mul(&d2_s);
        let yinv_b = yf.solve_vec(&b);
        let c_v = DVector::from_element(v.len(), 1.0) - &x_v * &yinv_b;
        let minv_c = match &mf {
            Some((_, f)) => f.solve_vec(&c_v),
            None => DVector::zeros(0),
        };
        let denom = a - b.dot(&yinv_b) + c_v.dot(&minv_c);
        let scale = a.abs().max(c_v.norm_squared()).max(f64::MIN_POSITIVE);
        if !(denom > 1e-12 * scale) {
            return Err(AloError::Conditioning {
                context: "intercept is not identified by the margin set".into(),
                pivot: denom,
            });
        }
        // d = X_S Y^{-1} X_V^T M^{-1} c - (1 - X_S Y^{-1} b), over all observations.
        let yinv_xv_minv_c = if v.is_empty() {
            DVector::zeros(data.p())
        } else {
            yf.solve_vec(&x_v.tr_mul(&minv_c))
        };
        let d_all = x * &yinv_xv_minv_c - (DVector::from_element(n, 1.0) - x * &yinv_b);
        for &i in &s {
            base_w[i] += d_all[i] * d_all[i] / denom;
        }
        if let Some((m, _)) = &mf {
            // U = M^{-1} - M^{-1} c c^T M^{-1} / denom; a_i = 1 / U_ii on V.
            let minv = m.clone().try_inverse().ok_or_else(|| AloError::Conditioning {
                context: "X_V Y^{-1} X_V^T".into(),
                pivot,
            })?;
            for (k, &j) in v.iter().enumerate() {
                let u = minv[(k, k)] - minv_c[k] * minv_c[k] / denom;
                a_coef[j] = 1.0 / u;
            }
        }
    } else if let Some((_, f)) = &mf {
        let minv = f.solve(&DMatrix::identity(v.len(), v.len()));
        for (k, &j) in v.iter().enumerate() {
            a_coef[j] = 1.0 / minv[(k, k)];
        }
    }

    let mut predictions = vec![None; n];
    for &j in &v {
        predictions[j] = Some(eta[j] + a_coef[j] * g[j]);
    }
    for &i in &s {
        let sat = base_w[i] * d2[i];
        if 1.0 - sat <= SATURATION_SKIP {
            warnings.push(format!("observation {i}: leverage saturated (W_ii l'' = {sat:.12}), skipped"));
            continue;
        }
        if sat > 1.0 - SATURATION_WARN {
            warnings.push(format!("observation {i}: leverage near saturation (W_ii l'' = {sat:.12})"));
        }
        a_coef[i] = base_w[i] / (1.0 - sat);
        predictions[i] = Some(eta[i] + a_coef[i] * g[i]);
    }
    let h_diag = base_w.as_slice().to_vec();
    Ok(EngineOutput {
        predictions,
        diagnostics: HatDiagnostics {
            h_diag,
            a_coeffs: Some(a_coef.as_slice().to_vec()),
            g_sub: Some(g.as_slice().to_vec()),
            conditioning: pivot,
        },
        active_set_size: v.len(),
        warnings,
    })
}
