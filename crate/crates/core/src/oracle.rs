//! Refit-based ground truth: exact leave-one-out and K-fold cross-validation.

use web_time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FitResult, ModelSpec};
use crate::error::{AloError, Result};
use crate::risk::{eval_risk_partial, ErrorFn};
use crate::solvers::{fit_path, fit_warm, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvMode {
    Loocv,
    KFold { k: usize, seed: u64 },
}

/// Held-out index sets; every observation is held out exactly once.
#[derive(Debug, Clone, PartialEq)]
pub struct CvPlan {
    pub mode: CvMode,
    pub folds: Vec<Vec<usize>>,
}

impl CvPlan {
    pub fn loocv(n: usize) -> Self {
        CvPlan {
            mode: CvMode::Loocv,
            folds: (0..n).map(|i| vec![i]).collect(),
        }
    }

    /// Seeded shuffle followed by contiguous blocks whose sizes differ by at most one.
    pub fn kfold(n: usize, k: usize, seed: u64) -> Result<Self> {
        if k < 2 || k > n {
            return Err(AloError::Config(format!("K-fold needs 2 <= k <= n, got k={k}, n={n}")));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (base, extra) = (n / k, n % k);
        let mut folds = Vec::with_capacity(k);
        let mut start = 0;
        for f in 0..k {
            let len = base + usize::from(f < extra);
            let mut fold = idx[start..start + len].to_vec();
            fold.sort_unstable();
            folds.push(fold);
            start += len;
        }
        Ok(CvPlan {
            mode: CvMode::KFold { k, seed },
            folds,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    /// Held-out prediction per observation; `None` where the refit did not converge.
    pub predictions: Vec<Option<f64>>,
    pub risk: Option<f64>,
    /// Number of folds whose refit did not converge.
    pub failed: usize,
    pub warnings: Vec<String>,
    pub seconds: f64,
}

/// Refits the model once per fold, warm-started from `full_fit` when given.
pub fn cross_validate(
    spec: &ModelSpec,
    data: &Dataset,
    cfg: &SolverConfig,
    plan: &CvPlan,
    full_fit: Option<&FitResult>,
    error_fn: Option<ErrorFn>,
) -> Result<CvOutcome> {
    let start = Instant::now();
    let n = data.n();
    let refit = |fold: &Vec<usize>| -> Result<(Vec<usize>, FitResult)> {
        let keep: Vec<usize> = {
            let mut held = vec![false; n];
            for &i in fold {
                held[i] = true;
            }
            (0..n).filter(|&i| !held[i]).collect()
        };
        let f = fit_warm(spec, &data.subset(&keep), cfg, full_fit)?;
        Ok((fold.clone(), f))
    };
    #[cfg(feature = "parallel")]
    let results: Vec<Result<(Vec<usize>, FitResult)>> = {
        use rayon::prelude::*;
        plan.folds.par_iter().map(refit).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<(Vec<usize>, FitResult)>> = plan.folds.iter().map(refit).collect();

    let mut predictions = vec![None; n];
    let mut warnings = Vec::new();
    let mut failed = 0;
    for (f, res) in results.into_iter().enumerate() {
        let (fold, fit) = res?;
        if !fit.converged {
            failed += 1;
            warnings.push(format!("fold {f}: refit did not converge (residual {:.3e})", fit.grad_norm));
            continue;
        }
        for i in fold {
            predictions[i] = Some(fit.predict_row(&data.row(i)));
        }
    }
    let error_fn = error_fn.unwrap_or_else(|| ErrorFn::default_for(data.kind()));
    let risk = match eval_risk_partial(data.y(), &predictions, error_fn) {
        Ok(r) => Some(r),
        Err(e) => {
            warnings.push(format!("risk unavailable: {e}"));
            None
        }
    };
    Ok(CvOutcome {
        predictions,
        risk,
        failed,
        warnings,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Cross-validation along a whole grid: each fold is refit on the descending,
/// warm-started path. Outcomes follow the order of `lambdas`; a fold that fails to
/// fit at some grid point is counted as not converged there.
pub fn cross_validate_path(
    spec: &ModelSpec,
    data: &Dataset,
    cfg: &SolverConfig,
    plan: &CvPlan,
    lambdas: &[f64],
    error_fn: Option<ErrorFn>,
) -> Result<Vec<CvOutcome>> {
    let start = Instant::now();
    let n = data.n();
    let refit = |fold: &Vec<usize>| -> Vec<Result<FitResult>> {
        let mut held = vec![false; n];
        for &i in fold {
            held[i] = true;
        }
        let keep: Vec<usize> = (0..n).filter(|&i| !held[i]).collect();
        fit_path(spec, &data.subset(&keep), lambdas, cfg)
    };
    #[cfg(feature = "parallel")]
    let paths: Vec<Vec<Result<FitResult>>> = {
        use rayon::prelude::*;
        plan.folds.par_iter().map(refit).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let paths: Vec<Vec<Result<FitResult>>> = plan.folds.iter().map(refit).collect();

    let error_fn = error_fn.unwrap_or_else(|| ErrorFn::default_for(data.kind()));
    let seconds = start.elapsed().as_secs_f64() / lambdas.len().max(1) as f64;
    let mut out = Vec::with_capacity(lambdas.len());
    for (g, &lambda) in lambdas.iter().enumerate() {
        let mut predictions = vec![None; n];
        let mut warnings = Vec::new();
        let mut failed = 0;
        for (f, (fold, path)) in plan.folds.iter().zip(&paths).enumerate() {
            match &path[g] {
                Ok(fit) if fit.converged => {
                    for &i in fold {
                        predictions[i] = Some(fit.predict_row(&data.row(i)));
                    }
                }
                Ok(fit) => {
                    failed += 1;
                    warnings.push(format!("fold {f}, lambda {lambda}: refit did not converge (residual {:.3e})", fit.grad_norm));
                }
                Err(e) => {
                    failed += 1;
                    warnings.push(format!("fold {f}, lambda {lambda}: {e}"));
                }
            }
        }
        let risk = match eval_risk_partial(data.y(), &predictions, error_fn) {
            Ok(r) => Some(r),
            Err(e) => {
                warnings.push(format!("risk unavailable: {e}"));
                None
            }
        };
        out.push(CvOutcome {
            predictions,
            risk,
            failed,
            warnings,
            seconds,
        });
    }
    Ok(out)
}

/// Exact leave-one-out: `n` refits.
pub fn exact_loocv(
    spec: &ModelSpec,
    data: &Dataset,
    cfg: &SolverConfig,
    full_fit: Option<&FitResult>,
    error_fn: Option<ErrorFn>,
) -> Result<CvOutcome> {
    cross_validate(spec, data, cfg, &CvPlan::loocv(data.n()), full_fit, error_fn)
}

pub fn kfold_cv(
    spec: &ModelSpec,
    data: &Dataset,
    cfg: &SolverConfig,
    k: usize,
    seed: u64,
    error_fn: Option<ErrorFn>,
) -> Result<CvOutcome> {
    cross_validate(spec, data, cfg, &CvPlan::kfold(data.n(), k, seed)?, None, error_fn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, GenConfig, Scenario};
    use crate::losses::Loss;
    use crate::regularizers::Regularizer;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn kfold_partitions_every_index_once() {
        for (n, k) in [(10, 3), (7, 7), (100, 5), (11, 2)] {
            let plan = CvPlan::kfold(n, k, 9).unwrap();
            let mut all: Vec<usize> = plan.folds.concat();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
            let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
        assert_eq!(CvPlan::kfold(20, 4, 1).unwrap(), CvPlan::kfold(20, 4, 1).unwrap());
        assert!(CvPlan::kfold(3, 4, 0).is_err());
        assert!(CvPlan::kfold(3, 1, 0).is_err());
    }

    #[test]
    fn path_cv_matches_pointwise_cv() {
        let (data, _) = generate(&GenConfig::new(Scenario::IidGaussLinear, 30, 8, 5)).unwrap();
        let spec = ModelSpec::new(Loss::Squared, Regularizer::Lasso, 1.0);
        let cfg = SolverConfig::default();
        let plan = CvPlan::kfold(30, 5, 2).unwrap();
        let grid = [0.02, 0.2, 0.05];
        let path = cross_validate_path(&spec, &data, &cfg, &plan, &grid, None).unwrap();
        for (out, &l) in path.iter().zip(&grid) {
            let single = cross_validate(&spec.with_lambda(l), &data, &cfg, &plan, None, None).unwrap();
            for (a, b) in out.predictions.iter().zip(&single.predictions) {
                assert!((a.unwrap() - b.unwrap()).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn ridge_loocv_matches_closed_form() {
        // Independent check: explicit normal equations with observation i removed.
        let (data, _) = generate(&GenConfig::new(Scenario::IidGaussLinear, 25, 6, 4)).unwrap();
        let lambda = 0.3;
        let spec = ModelSpec::new(Loss::Squared, Regularizer::Ridge, lambda);
        let cfg = SolverConfig::default();
        let out = exact_loocv(&spec, &data, &cfg, None, Some(ErrorFn::Squared)).unwrap();
        let x = data.x();
        for i in 0..data.n() {
            let keep: Vec<usize> = (0..data.n()).filter(|&j| j != i).collect();
            let xk = crate::linalg::select_rows(x, &keep);
            let yk = DVector::from_iterator(keep.len(), keep.iter().map(|&j| data.y()[j]));
            let a = xk.tr_mul(&xk) + DMatrix::identity(6, 6) * (2.0 * lambda);
            let b = a.lu().solve(&xk.tr_mul(&yk)).unwrap();
            let want = x.row(i).transpose().dot(&b);
            assert!((out.predictions[i].unwrap() - want).abs() < 1e-8);
        }
        assert_eq!(out.failed, 0);
        assert!(out.risk.unwrap() > 0.0);
    }
}
