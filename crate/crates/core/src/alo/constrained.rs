//! Constrained engine: a Newton step projected back onto the constraint set.
//!
//! `G` is the derivative of the projected fixed point. For a polyhedron with face
//! basis `Gamma` it is `Gamma (Gamma^T V Gamma)^{-1} Gamma^T`; for the PSD cone
//! `(J V + I - J)^{-1} J`, with `V = X^T D X + lambda Hess R`.

use nalgebra::DMatrix;

use super::hat::HatDiagnostics;
use super::primal::weighted_gram;
use super::{loss_derivatives, require, Engine, EngineOutput, SATURATION_SKIP, SATURATION_WARN};
use crate::constraints::Constraint;
use crate::data::{Dataset, FitResult, ModelSpec};
use crate::error::{AloError, Result};
use crate::linalg::{cholesky_jitter, lu_solve};

pub(crate) fn constrained(spec: &ModelSpec, data: &Dataset, fit: &FitResult) -> Result<EngineOutput> {
    let engine = Engine::Constrained;
    let Some(constraint) = &spec.constraint else {
        return Err(AloError::unsupported(engine.name(), "models without a constraint"));
    };
    require(spec.loss.is_smooth(), engine, format!("{} loss", spec.loss.name()))?;
    require(spec.reg.is_smooth(), engine, format!("{} penalty", spec.reg.name()))?;
    let n = data.n();
    let p = data.p();
    let x = data.x();
    let beta = fit.beta_vec();
    let eta = fit.linear_predictor(data);
    let (d1, d2) = loss_derivatives(spec, data, &eta);
    let vmat = weighted_gram(x, &d2) + spec.reg.hessian(&beta)? * spec.lambda;
    let grad = x.tr_mul(&d1) + spec.reg.gradient(&beta)? * spec.lambda;
    let v = &beta - grad;

    let (g, pivot, face) = match constraint {
        Constraint::PsdCone { .. } => {
            let j = constraint.jacobian(&v)?;
            let m = &j * &vmat + DMatrix::identity(p, p) - &j;
            let g = lu_solve(&m, &j, "projected Newton system")?;
            // Symmetrize away rounding; G is symmetric in exact arithmetic.
            let g = (&g + g.transpose()) * 0.5;
            let rank = j.trace().round() as usize;
            (g, m.lu().u().diagonal().amin(), rank)
        }
        _ => {
            let (_, gamma) = constraint.polyhedron_jacobian(&v)?;
            if gamma.ncols() == 0 {
                (DMatrix::zeros(p, p), f64::INFINITY, 0)
            } else {
                let inner = gamma.tr_mul(&(&vmat * &gamma));
                let f = cholesky_jitter(&inner, "face-restricted Hessian")?;
                let g = &gamma * f.solve(&gamma.transpose());
                (g, f.min_pivot, gamma.ncols())
            }
        }
    };

    let gx = &g * x.transpose();
    // Intercept: a = sum l'', b = X^T l'', s = a - b^T G b.
    let icpt = if spec.intercept {
        let a = d2.sum();
        let b = x.tr_mul(&d2);
        let gb = &g * &b;
        let s = a - b.dot(&gb);
        if !(s > 1e-12 * a.abs().max(f64::MIN_POSITIVE)) {
            return Err(AloError::Conditioning {
                context: "intercept is not identified on the constraint face".into(),
                pivot: s,
            });
        }
        Some((gb, s))
    } else {
        None
    };

    let b0 = fit.intercept_value();
    let mut h = vec![0.0; n];
    let mut predictions = vec![None; n];
    let mut warnings = Vec::new();
    for i in 0..n {
        let xi = x.row(i).transpose();
        let gxi = gx.column(i).into_owned();
        let xgx = xi.dot(&gxi);
        let (q, dir, dir0) = match &icpt {
            None => (xgx, gxi, 0.0),
            Some((gb, s)) => {
                // bGx = xGb by symmetry of G.
                let xgb = xi.dot(gb);
                let top = (1.0 - xgb) / s;
                (xgx + (1.0 - xgb) * (1.0 - xgb) / s, gxi - gb * top, top)
            }
        };
        h[i] = q;
        let sat = q * d2[i];
        if 1.0 - sat <= SATURATION_SKIP {
            warnings.push(format!("observation {i}: leverage saturated (q_i l'' = {sat:.12}), skipped"));
            continue;
        }
        if sat > 1.0 - SATURATION_WARN {
            warnings.push(format!("observation {i}: leverage near saturation (q_i l'' = {sat:.12})"));
        }
        let step = d1[i] / (1.0 - sat);
        let b_loo = constraint.project(&(&beta + dir * step));
        predictions[i] = Some(xi.dot(&b_loo) + b0 + dir0 * step);
    }
    Ok(EngineOutput {
        predictions,
        diagnostics: HatDiagnostics {
            h_diag: h,
            a_coeffs: None,
            g_sub: None,
            conditioning: pivot,
        },
        active_set_size: face,
        warnings,
    })
}
