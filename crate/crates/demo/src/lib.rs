//! Browser front end: simulate a problem, trace the ALO risk curve next to exact
//! leave-one-out, and inspect the leverages behind one grid point.
//!
//! The plain functions are usable natively; the `wasm_bindgen` wrappers take and
//! return JSON strings.

use alo_core::alo;
use alo_core::datagen::{generate, GenConfig, Scenario};
use alo_core::oracle::{cross_validate_path, CvPlan};
use alo_core::risk::lambda_grid;
use alo_core::solvers::fit;
use alo_core::{Dataset, Loss, ModelSpec, Regularizer, SolverConfig, TaskKind};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    pub scenario: String,
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub seed: u64,
    /// `lasso`, `ridge`, `fused` or `group_lasso`.
    pub model: String,
    pub grid: usize,
    /// Smallest lambda as a fraction of the largest.
    pub ratio: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            scenario: "iid_gauss_linear".into(),
            n: 80,
            p: 40,
            k: 8,
            seed: 1,
            model: "lasso".into(),
            grid: 15,
            ratio: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub method: String,
    pub lambdas: Vec<f64>,
    pub risk: Vec<Option<f64>>,
    /// Support or face size for ALO; failed refits for leave-one-out.
    pub active: Vec<usize>,
    pub warnings: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Leverage {
    pub lambda: f64,
    pub engine: String,
    pub y: Vec<f64>,
    pub fitted: Vec<f64>,
    pub alo: Vec<Option<f64>>,
    pub h: Vec<f64>,
    pub warnings: Vec<String>,
}

struct Problem {
    data: Dataset,
    spec: ModelSpec,
    grid: Vec<f64>,
}

fn problem(cfg: &DemoConfig) -> Result<Problem, String> {
    if cfg.n > 400 || cfg.p > 400 {
        return Err("the demo is limited to n, p <= 400".into());
    }
    let scenario = Scenario::parse(&cfg.scenario).map_err(|e| e.to_string())?;
    if scenario.is_matrix() {
        return Err(format!("scenario {} needs matrix observations; use the CLI", scenario.name()));
    }
    let gen = GenConfig::new(scenario, cfg.n, cfg.p, cfg.seed).with_k(cfg.k);
    let (data, _) = generate(&gen).map_err(|e| e.to_string())?;
    let reg = match cfg.model.as_str() {
        "lasso" => Regularizer::Lasso,
        "ridge" => Regularizer::Ridge,
        "fused" => Regularizer::fused(cfg.p),
        "group_lasso" => Regularizer::consecutive_groups(cfg.p, 5),
        other => return Err(format!("unknown model {other:?}")),
    };
    let loss = match data.kind() {
        TaskKind::Regression => Loss::Squared,
        TaskKind::Binary => Loss::Logistic,
    };
    // Largest useful lambda for l1-type penalties; a natural scale for the rest.
    let lmax = data.x().tr_mul(data.y()).amax().max(1e-8);
    let grid = lambda_grid(cfg.grid, lmax * cfg.ratio, lmax, true).map_err(|e| e.to_string())?;
    Ok(Problem {
        spec: ModelSpec::new(loss, reg, grid[0]),
        data,
        grid,
    })
}

pub fn alo_curve(cfg: &DemoConfig) -> Result<Curve, String> {
    let pb = problem(cfg)?;
    let points = alo::sweep(&pb.spec, &pb.data, &pb.grid, &SolverConfig::default(), None, None);
    let mut curve = Curve {
        method: "alo".into(),
        lambdas: pb.grid.clone(),
        risk: Vec::new(),
        active: Vec::new(),
        warnings: Vec::new(),
    };
    for pt in points {
        match pt.report {
            Ok(r) => {
                curve.risk.push(r.risk);
                curve.active.push(r.active_set_size);
                curve.warnings.push(r.warnings.len());
            }
            Err(_) => {
                curve.risk.push(None);
                curve.active.push(0);
                curve.warnings.push(1);
            }
        }
    }
    Ok(curve)
}

pub fn loocv_curve(cfg: &DemoConfig) -> Result<Curve, String> {
    let pb = problem(cfg)?;
    let plan = CvPlan::loocv(pb.data.n());
    let out = cross_validate_path(&pb.spec, &pb.data, &SolverConfig::default(), &plan, &pb.grid, None)
        .map_err(|e| e.to_string())?;
    Ok(Curve {
        method: "loocv".into(),
        lambdas: pb.grid,
        risk: out.iter().map(|o| o.risk).collect(),
        active: out.iter().map(|o| o.failed).collect(),
        warnings: out.iter().map(|o| o.warnings.len()).collect(),
    })
}

/// Per-observation view of grid point `index` (0 is the largest lambda).
pub fn leverage_profile(cfg: &DemoConfig, index: usize) -> Result<Leverage, String> {
    let pb = problem(cfg)?;
    let lambda = *pb
        .grid
        .get(index)
        .ok_or_else(|| format!("grid index {index} out of range (grid has {})", pb.grid.len()))?;
    let spec = pb.spec.with_lambda(lambda);
    let f = fit(&spec, &pb.data, &SolverConfig::default()).map_err(|e| e.to_string())?;
    let report = alo::estimate(&spec, &pb.data, &f, None, None).map_err(|e| e.to_string())?;
    Ok(Leverage {
        lambda,
        engine: report.engine.name().into(),
        y: pb.data.y().iter().cloned().collect(),
        fitted: f.linear_predictor(&pb.data).iter().cloned().collect(),
        alo: report.predictions,
        h: report.diagnostics.h_diag,
        warnings: report.warnings,
    })
}

fn parse(config: &str) -> Result<DemoConfig, JsValue> {
    if config.trim().is_empty() {
        return Ok(DemoConfig::default());
    }
    serde_json::from_str(config).map_err(|e| JsValue::from_str(&format!("bad config: {e}")))
}

fn to_json<T: Serialize>(v: Result<T, String>) -> Result<String, JsValue> {
    let v = v.map_err(|e| JsValue::from_str(&e))?;
    serde_json::to_string(&v).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = aloCurve)]
pub fn alo_curve_js(config: &str) -> Result<String, JsValue> {
    to_json(alo_curve(&parse(config)?))
}

#[wasm_bindgen(js_name = loocvCurve)]
pub fn loocv_curve_js(config: &str) -> Result<String, JsValue> {
    to_json(loocv_curve(&parse(config)?))
}

#[wasm_bindgen(js_name = leverageProfile)]
pub fn leverage_profile_js(config: &str, index: usize) -> Result<String, JsValue> {
    to_json(leverage_profile(&parse(config)?, index))
}
