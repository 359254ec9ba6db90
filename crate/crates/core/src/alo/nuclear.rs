//! Nuclear-norm engine. The Newton step is taken in the singular bases of the
//! fitted matrix, where the penalty curvature is explicit on the tangent entries
//! `E = {(k, l) : k < m or l < m}` and `m` is the fitted rank.

use nalgebra::{DMatrix, DVector};

use super::hat::{hat_from_woodbury, FreeColumn, HatDiagnostics};
use super::primal::weighted_gram;
use super::{loss_derivatives, newton_predictions, require, Engine, EngineOutput};
use crate::data::{Dataset, FitResult, ModelSpec};
use crate::error::{AloError, Result};
use crate::linalg::{full_svd, orthogonal_complement, unvec};
use crate::regularizers::{Regularizer, RANK_TOL};

/// Repeated nonzero singular values closer than this (relative to the largest) are rejected.
const SPECTRUM_GAP: f64 = 1e-8;

/// Penalty curvature on the tangent entries of a rank-`m` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct NuclearCurvature {
    /// Tangent entries `(k, l)` in row-major order.
    pub entries: Vec<(usize, usize)>,
    /// Symmetric `|E| x |E|` curvature, indexed like `entries`.
    pub matrix: DMatrix<f64>,
}

/// Builds the curvature from the nonzero singular values `sigma` (length `m`) and the
/// singular values `g` of the subgradient's null block, where `g[l]` pairs with
/// the `l`-th rotated row and column (`g[l]` for `l < m` is ignored).
pub fn nuclear_curvature(sigma: &[f64], g: &[f64], m: usize, p1: usize, p2: usize) -> NuclearCurvature {
    let gl = |l: usize| g.get(l).copied().unwrap_or(0.0);
    let entries: Vec<(usize, usize)> = (0..p1)
        .flat_map(|k| (0..p2).map(move |l| (k, l)))
        .filter(|&(k, l)| k < m || l < m)
        .collect();
    let pos = |k: usize, l: usize| -> Option<usize> { entries.iter().position(|&e| e == (k, l)) };
    let mut matrix = DMatrix::zeros(entries.len(), entries.len());
    for (a, &(k, l)) in entries.iter().enumerate() {
        if k < m && l < m {
            if k == l {
                continue;
            }
            let c = 1.0 / (sigma[k] + sigma[l]);
            matrix[(a, a)] = c;
            if let Some(b) = pos(l, k) {
                matrix[(a, b)] = -c;
            }
        } else if k < m {
            matrix[(a, a)] = 1.0 / sigma[k];
            if let Some(b) = pos(l, k) {
                matrix[(a, b)] = -gl(l) / sigma[k];
            }
        } else {
            matrix[(a, a)] = 1.0 / sigma[l];
            if let Some(b) = pos(l, k) {
                matrix[(a, b)] = -gl(k) / sigma[l];
            }
        }
    }
    NuclearCurvature { entries, matrix }
}

pub(crate) fn nuclear(spec: &ModelSpec, data: &Dataset, fit: &FitResult) -> Result<EngineOutput> {
    let engine = Engine::Nuclear;
    let Regularizer::Nuclear { p1, p2 } = spec.reg else {
        return Err(AloError::unsupported(engine.name(), format!("{} penalty", spec.reg.name())));
    };
    require(spec.loss.is_smooth(), engine, format!("{} loss", spec.loss.name()))?;
    require(spec.constraint.is_none(), engine, "constraints")?;
    let n = data.n();
    let eta = fit.linear_predictor(data);
    let (d1, d2) = loss_derivatives(spec, data, &eta);
    let bmat = unvec(&fit.beta_vec(), p1, p2);
    let (u0, s, v0) = full_svd(&bmat);
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let m = s.iter().filter(|&&v| smax > 0.0 && v > RANK_TOL * smax).count();
    for k in 1..m {
        if s[k - 1] - s[k] <= SPECTRUM_GAP * smax {
            return Err(AloError::DegenerateSpectrum(format!(
                "singular values {} and {} coincide ({:.6e})",
                k - 1,
                k,
                s[k]
            )));
        }
    }

    let mut warnings = Vec::new();
    let ones = DVector::from_element(n, 1.0);
    let free = spec.intercept.then_some(FreeColumn {
        column: &ones,
        weights: &d2,
    });
    if m == 0 {
        let diag = hat_from_woodbury(&DMatrix::zeros(0, 0), &DMatrix::zeros(n, 0), free)?;
        let h = DVector::from_column_slice(&diag.h_diag);
        let predictions = newton_predictions(&eta, &h, &d1, &d2, &mut warnings);
        return Ok(EngineOutput {
            predictions,
            diagnostics: diag,
            active_set_size: 0,
            warnings,
        });
    }

    // Subgradient Z / lambda; its null block fixes the remaining singular vectors.
    let zsub = unvec(&(data.x().tr_mul(&d1) * (-1.0 / spec.lambda)), p1, p2);
    let u_m = u0.columns(0, m).into_owned();
    let v_m = v0.columns(0, m).into_owned();
    let u_c = orthogonal_complement(&u_m);
    let v_c = orthogonal_complement(&v_m);
    let mut g = vec![0.0; p1.max(p2)];
    let (u_perp, v_perp) = if u_c.ncols() > 0 && v_c.ncols() > 0 {
        let (ua, gs, va) = full_svd(&(u_c.transpose() * &zsub * &v_c));
        for (i, &gv) in gs.iter().enumerate() {
            g[m + i] = gv;
        }
        (&u_c * ua, &v_c * va)
    } else {
        (u_c, v_c)
    };
    let gmax = g.iter().cloned().fold(0.0, f64::max);
    if gmax > 1.0 + 1e-6 {
        warnings.push(format!("null-block subgradient has spectral norm {gmax:.6e} > 1"));
    }
    let u = hcat(&u_m, &u_perp);
    let v = hcat(&v_m, &v_perp);

    let sigma: Vec<f64> = s.iter().take(m).cloned().collect();
    let curv = nuclear_curvature(&sigma, &g, m, p1, p2);
    let mut xr = DMatrix::zeros(n, curv.entries.len());
    for j in 0..n {
        let xj = unvec(&data.x().row(j).transpose(), p1, p2);
        let rot = u.transpose() * xj * &v;
        for (a, &(k, l)) in curv.entries.iter().enumerate() {
            xr[(j, a)] = rot[(k, l)];
        }
    }
    let inner = weighted_gram(&xr, &d2) + &curv.matrix * spec.lambda;
    let diag: HatDiagnostics = hat_from_woodbury(&inner, &xr, free)?;
    let h = DVector::from_column_slice(&diag.h_diag);
    let predictions = newton_predictions(&eta, &h, &d1, &d2, &mut warnings);
    Ok(EngineOutput {
        predictions,
        diagnostics: diag,
        active_set_size: m,
        warnings,
    })
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}
