//! Approximate leave-one-out predictions from a single full-data fit.
//!
//! Every engine turns `(ModelSpec, Dataset, FitResult)` into per-observation
//! predictions `y~_i` that approximate the refit prediction `x_i^T beta^{-i}`.
//! [`estimate`] picks an engine from the model, or runs the one requested.

mod constrained;
mod dual;
mod hat;
mod nuclear;
mod primal;
mod proximal;

use std::fmt;
use web_time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FitResult, ModelSpec};
use crate::error::{AloError, Result};
use crate::losses::Loss;
use crate::regularizers::Regularizer;
use crate::risk::{eval_risk_partial, ErrorFn};
use crate::solvers::SolverConfig;

pub use hat::{hat_from_woodbury, FreeColumn, HatDiagnostics};
pub use nuclear::{nuclear_curvature, NuclearCurvature};

/// `1 - H_ii * l''` at or below this skips the observation.
pub const SATURATION_SKIP: f64 = 1e-10;
/// `H_ii * l''` above `1 - SATURATION_WARN` is reported as near-saturated.
pub const SATURATION_WARN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Newton step with twice-differentiable loss and regularizer.
    SmoothPrimal,
    /// Kinked loss (hinge) with a smooth regularizer.
    NonsmoothLoss,
    /// Separable nonsmooth regularizer restricted to its active set.
    NonsmoothReg,
    /// Projection onto the local face of the dual feasible set.
    Dual,
    /// Jacobian of the proximal map at the fixed point.
    Proximal,
    /// Jacobian of the projection onto a constraint set.
    Constrained,
    /// Nuclear-norm matrix regression in the rotated singular basis.
    Nuclear,
}

impl Engine {
    pub const ALL: [Engine; 7] = [
        Engine::SmoothPrimal,
        Engine::NonsmoothLoss,
        Engine::NonsmoothReg,
        Engine::Dual,
        Engine::Proximal,
        Engine::Constrained,
        Engine::Nuclear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Engine::SmoothPrimal => "smooth_primal",
            Engine::NonsmoothLoss => "nonsmooth_loss",
            Engine::NonsmoothReg => "nonsmooth_reg",
            Engine::Dual => "dual",
            Engine::Proximal => "proximal",
            Engine::Constrained => "constrained",
            Engine::Nuclear => "nuclear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let key = s.replace('-', "_");
        Engine::ALL
            .into_iter()
            .find(|e| e.name() == key)
            .ok_or_else(|| AloError::Config(format!("unknown engine '{s}'")))
    }

    /// The engine chosen when none is requested.
    pub fn auto(spec: &ModelSpec) -> Self {
        if spec.constraint.is_some() {
            return Engine::Constrained;
        }
        if !spec.loss.is_smooth() {
            return Engine::NonsmoothLoss;
        }
        match &spec.reg {
            Regularizer::Nuclear { .. } => Engine::Nuclear,
            Regularizer::Ridge | Regularizer::FrobSq { .. } => Engine::SmoothPrimal,
            Regularizer::GroupLasso { .. } => Engine::Proximal,
            Regularizer::Lasso if spec.loss != Loss::Squared => Engine::Proximal,
            _ => Engine::Dual,
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AloReport {
    pub engine: Engine,
    pub lambda: f64,
    /// `None` marks an observation skipped for leverage saturation.
    pub predictions: Vec<Option<f64>>,
    #[serde(flatten)]
    pub diagnostics: HatDiagnostics,
    /// Size of the active set, face or support used by the engine.
    pub active_set_size: usize,
    pub error_fn: ErrorFn,
    /// Mean error over the observations that were not skipped.
    pub risk: Option<f64>,
    pub warnings: Vec<String>,
}

impl AloReport {
    pub fn skipped(&self) -> usize {
        self.predictions.iter().filter(|p| p.is_none()).count()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| AloError::Parse(e.to_string()))
    }

    /// One row per observation: `index,y,prediction,h_diag`.
    pub fn write_csv<W: std::io::Write>(&self, data: &Dataset, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| AloError::Io {
            path: "<alo report>".into(),
            message: e.to_string(),
        };
        out.write_record(["index", "y", "prediction", "h_diag"]).map_err(io)?;
        for i in 0..data.n() {
            let pred = self.predictions[i].map(|v| v.to_string()).unwrap_or_default();
            let h = self.diagnostics.h_diag.get(i).map(|v| v.to_string()).unwrap_or_default();
            out.write_record([i.to_string(), data.y()[i].to_string(), pred, h]).map_err(io)?;
        }
        out.flush().map_err(|e| AloError::Io {
            path: "<alo report>".into(),
            message: e.to_string(),
        })
    }
}

/// Engine output before risk aggregation.
pub(crate) struct EngineOutput {
    pub predictions: Vec<Option<f64>>,
    pub diagnostics: HatDiagnostics,
    pub active_set_size: usize,
    pub warnings: Vec<String>,
}

/// Runs an ALO engine on a converged fit.
pub fn estimate(
    spec: &ModelSpec,
    data: &Dataset,
    fit: &FitResult,
    engine: Option<Engine>,
    error_fn: Option<ErrorFn>,
) -> Result<AloReport> {
    spec.validate(data)?;
    if fit.beta.len() != data.p() {
        return Err(AloError::dim(format!("fit has {} coefficients, data has {}", fit.beta.len(), data.p())));
    }
    if fit.intercept.is_some() != spec.intercept {
        return Err(AloError::Config("fit and model disagree about the intercept".into()));
    }
    if !fit.converged {
        return Err(AloError::StaleFit { residual: fit.grad_norm });
    }
    let engine = engine.unwrap_or_else(|| Engine::auto(spec));
    let out = match engine {
        Engine::SmoothPrimal => primal::smooth_primal(spec, data, fit)?,
        Engine::NonsmoothLoss => primal::nonsmooth_loss(spec, data, fit)?,
        Engine::NonsmoothReg => primal::nonsmooth_reg(spec, data, fit)?,
        Engine::Dual => dual::dual(spec, data, fit)?,
        Engine::Proximal => proximal::proximal(spec, data, fit)?,
        Engine::Constrained => constrained::constrained(spec, data, fit)?,
        Engine::Nuclear => nuclear::nuclear(spec, data, fit)?,
    };
    let error_fn = error_fn.unwrap_or_else(|| ErrorFn::default_for(data.kind()));
    let mut warnings = out.warnings;
    let risk = match eval_risk_partial(data.y(), &out.predictions, error_fn) {
        Ok(r) => Some(r),
        Err(e) => {
            warnings.push(format!("risk unavailable: {e}"));
            None
        }
    };
    Ok(AloReport {
        engine,
        lambda: spec.lambda,
        predictions: out.predictions,
        diagnostics: out.diagnostics,
        active_set_size: out.active_set_size,
        error_fn,
        risk,
        warnings,
    })
}

/// One grid point of an ALO sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub lambda: f64,
    pub fit: Result<FitResult>,
    pub report: Result<AloReport>,
    pub fit_seconds: f64,
    pub alo_seconds: f64,
}

/// Fits a descending, warm-started path, then runs ALO at every grid point.
/// Results follow the order of `lambdas`.
pub fn sweep(
    spec: &ModelSpec,
    data: &Dataset,
    lambdas: &[f64],
    cfg: &SolverConfig,
    engine: Option<Engine>,
    error_fn: Option<ErrorFn>,
) -> Vec<SweepPoint> {
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));
    let mut fits: Vec<Option<(Result<FitResult>, f64)>> = vec![None; lambdas.len()];
    let mut prev: Option<FitResult> = None;
    for k in order {
        let start = Instant::now();
        let res = crate::solvers::fit_warm(&spec.with_lambda(lambdas[k]), data, cfg, prev.as_ref());
        let secs = start.elapsed().as_secs_f64();
        if let Ok(f) = &res {
            prev = Some(f.clone());
        }
        fits[k] = Some((res, secs));
    }
    let run = |k: usize, fit: &(Result<FitResult>, f64)| -> SweepPoint {
        let start = Instant::now();
        let s = spec.with_lambda(lambdas[k]);
        let report = match &fit.0 {
            Ok(f) => estimate(&s, data, f, engine, error_fn),
            Err(e) => Err(e.clone()),
        };
        SweepPoint {
            lambda: lambdas[k],
            fit: fit.0.clone(),
            report,
            fit_seconds: fit.1,
            alo_seconds: start.elapsed().as_secs_f64(),
        }
    };
    let fits: Vec<(Result<FitResult>, f64)> = fits.into_iter().map(|f| f.expect("every slot filled")).collect();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        fits.par_iter().enumerate().map(|(k, f)| run(k, f)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        fits.iter().enumerate().map(|(k, f)| run(k, f)).collect()
    }
}

/// `y~_i = eta_i + h_i l'_i / (1 - h_i l''_i)`, skipping saturated observations.
pub(crate) fn newton_predictions(
    eta: &DVector<f64>,
    h: &DVector<f64>,
    d1: &DVector<f64>,
    d2: &DVector<f64>,
    warnings: &mut Vec<String>,
) -> Vec<Option<f64>> {
    (0..eta.len())
        .map(|i| {
            let sat = h[i] * d2[i];
            if 1.0 - sat <= SATURATION_SKIP {
                warnings.push(format!("observation {i}: leverage saturated (H_ii l'' = {sat:.12}), skipped"));
                return None;
            }
            if sat > 1.0 - SATURATION_WARN {
                warnings.push(format!("observation {i}: leverage near saturation (H_ii l'' = {sat:.12})"));
            }
            Some(eta[i] + h[i] * d1[i] / (1.0 - sat))
        })
        .collect()
}

pub(crate) fn loss_derivatives(spec: &ModelSpec, data: &Dataset, eta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let y = data.y();
    let d1 = DVector::from_fn(eta.len(), |j, _| spec.loss.d1(eta[j], y[j]));
    let d2 = DVector::from_fn(eta.len(), |j, _| spec.loss.d2(eta[j], y[j]));
    (d1, d2)
}

pub(crate) fn require(cond: bool, engine: Engine, what: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(AloError::unsupported(engine.name(), what))
    }
}

#[cfg(test)]
mod tests;
