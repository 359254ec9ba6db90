use nalgebra::{DMatrix, DVector};

use super::*;
use crate::constraints::Constraint;
use crate::data::TaskKind;
use crate::datagen::{generate, normal, GenConfig, Scenario};
use crate::oracle::exact_loocv;
use crate::solvers::fit;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gauss(n: usize, p: usize, seed: u64) -> Dataset {
    generate(&GenConfig::new(Scenario::IidGaussLinear, n, p, seed).with_k(p.min(5)))
        .unwrap()
        .0
}

fn run(spec: &ModelSpec, data: &Dataset, engine: Engine) -> AloReport {
    let f = fit(spec, data, &SolverConfig::default()).unwrap();
    assert!(f.converged, "{} did not converge", spec.reg.name());
    estimate(spec, data, &f, Some(engine), None).unwrap()
}

fn max_gap(a: &AloReport, b: &AloReport) -> f64 {
    a.predictions
        .iter()
        .zip(&b.predictions)
        .map(|(x, y)| (x.unwrap() - y.unwrap()).abs())
        .fold(0.0, f64::max)
}

fn loo(spec: &ModelSpec, data: &Dataset) -> Vec<f64> {
    let out = exact_loocv(spec, data, &SolverConfig::default(), None, None).unwrap();
    out.predictions.into_iter().map(|p| p.unwrap()).collect()
}

#[test]
fn ridge_is_exact_against_refits() {
    let data = gauss(30, 8, 1);
    for intercept in [false, true] {
        let spec = ModelSpec::new(Loss::Squared, Regularizer::Ridge, 0.4).with_intercept(intercept);
        let rep = run(&spec, &data, Engine::SmoothPrimal);
        for (a, b) in rep.predictions.iter().zip(loo(&spec, &data)) {
            assert!((a.unwrap() - b).abs() < 1e-8, "intercept={intercept}: {} vs {b}", a.unwrap());
        }
    }
}

#[test]
fn ridge_dual_matches_primal() {
    let data = gauss(25, 10, 2);
    let spec = ModelSpec::new(Loss::Squared, Regularizer::Ridge, 0.2).with_intercept(true);
    let a = run(&spec, &data, Engine::SmoothPrimal);
    let b = run(&spec, &data, Engine::Dual);
    assert!(max_gap(&a, &b) < 1e-8);
}

#[test]
fn lasso_engines_agree() {
    let data = gauss(40, 20, 3);
    for intercept in [false, true] {
        let spec = ModelSpec::new(Loss::Squared, Regularizer::Lasso, 0.2).with_intercept(intercept);
        let dual = run(&spec, &data, Engine::Dual);
        let prox = run(&spec, &data, Engine::Proximal);
        let reg = run(&spec, &data, Engine::NonsmoothReg);
        assert!(dual.active_set_size > 0 && dual.active_set_size < 20);
        assert!(max_gap(&dual, &prox) < 1e-8, "dual vs proximal: {}", max_gap(&dual, &prox));
        assert!(max_gap(&dual, &reg) < 1e-8, "dual vs primal: {}", max_gap(&dual, &reg));
    }
}

#[test]
fn logistic_lasso_engines_agree() {
    let data = generate(&GenConfig::new(Scenario::LogisticBinary, 60, 10, 4).with_k(3)).unwrap().0;
    for intercept in [false, true] {
        let spec = ModelSpec::new(Loss::Logistic, Regularizer::Lasso, 1.0).with_intercept(intercept);
        let prox = run(&spec, &data, Engine::Proximal);
        let reg = run(&spec, &data, Engine::NonsmoothReg);
        let dual = run(&spec, &data, Engine::Dual);
        assert!(max_gap(&prox, &reg) < 1e-7, "{}", max_gap(&prox, &reg));
        assert!(max_gap(&prox, &dual) < 1e-7, "{}", max_gap(&prox, &dual));
    }
}

#[test]
fn group_lasso_engines_agree() {
    let data = gauss(40, 12, 5);
    let spec = ModelSpec::new(Loss::Squared, Regularizer::consecutive_groups(12, 3), 0.1).with_intercept(true);
    let prox = run(&spec, &data, Engine::Proximal);
    let reg = run(&spec, &data, Engine::NonsmoothReg);
    assert!(max_gap(&prox, &reg) < 1e-7, "{}", max_gap(&prox, &reg));
}

#[test]
fn linf_engines_agree() {
    let data = gauss(30, 6, 6);
    let spec = ModelSpec::new(Loss::Squared, Regularizer::Linf, 0.5);
    let dual = run(&spec, &data, Engine::Dual);
    let prox = run(&spec, &data, Engine::Proximal);
    assert!(max_gap(&dual, &prox) < 1e-7, "{}", max_gap(&dual, &prox));
}

#[test]
fn slope_with_equal_weights_is_lasso() {
    let data = gauss(35, 10, 7);
    let lasso = ModelSpec::new(Loss::Squared, Regularizer::Lasso, 0.06);
    let slope = ModelSpec::new(Loss::Squared, Regularizer::Slope { weights: vec![1.0; 10] }, 0.06);
    let a = run(&lasso, &data, Engine::Dual);
    let b = run(&slope, &data, Engine::Dual);
    assert!(max_gap(&a, &b) < 1e-7, "{}", max_gap(&a, &b));
}

#[test]
fn orthonormal_lasso_leverage_is_row_mass_on_support() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let raw = DMatrix::from_fn(20, 5, |_, _| normal(&mut rng));
    let q = raw.qr().q();
    let y = &q * DVector::from_vec(vec![3.0, -2.0, 0.01, 1.5, 0.0]) + DVector::from_fn(20, |_, _| 0.01 * normal(&mut rng));
    let data = Dataset::new(q.clone(), y, TaskKind::Regression).unwrap();
    let spec = ModelSpec::new(Loss::Squared, Regularizer::Lasso, 0.2);
    let rep = run(&spec, &data, Engine::Dual);
    // With X^T X = I the lasso is coordinatewise soft thresholding of X^T y.
    let z = q.tr_mul(data.y());
    let support: Vec<usize> = (0..5).filter(|&j| z[j].abs() > 0.2).collect();
    assert_eq!(rep.active_set_size, support.len());
    for i in 0..20 {
        let want: f64 = support.iter().map(|&j| q[(i, j)] * q[(i, j)]).sum();
        assert!((rep.diagnostics.h_diag[i] - want).abs() < 1e-10);
    }
}

#[test]
fn fused_constant_fit_projects_onto_row_sums() {
    let data = generate(&GenConfig::new(Scenario::PiecewiseConstantFused, 30, 8, 9).with_k(2)).unwrap().0;
    let spec = ModelSpec::new(Loss::Squared, Regularizer::fused(8), 50.0);
    let f = fit(&spec, &data, &SolverConfig::default()).unwrap();
    let b = f.beta_vec();
    assert!(b.iter().all(|v| (v - b[0]).abs() < 1e-8), "expected a constant fit: {b}");
    let rep = estimate(&spec, &data, &f, Some(Engine::Dual), None).unwrap();
    let s = data.x() * DVector::from_element(8, 1.0);
    let ss = s.norm_squared();
    for i in 0..30 {
        assert!((rep.diagnostics.h_diag[i] - s[i] * s[i] / ss).abs() < 1e-8);
    }
}

#[test]
fn fused_lasso_tracks_refits() {
    let data = generate(&GenConfig::new(Scenario::PiecewiseConstantFused, 50, 10, 10).with_k(2)).unwrap().0;
    let spec = ModelSpec::new(Loss::Squared, Regularizer::fused(10), 0.2).with_intercept(true);
    let rep = run(&spec, &data, Engine::Dual);
    let refit = loo(&spec, &data);
    let y = data.y();
    let alo_risk = rep.risk.unwrap();
    let loo_risk: f64 = refit.iter().zip(y.iter()).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / 50.0;
    assert!((alo_risk - loo_risk).abs() / loo_risk < 0.1, "{alo_risk} vs {loo_risk}");
}

#[test]
fn svm_coefficients_match_closed_form() {
    let data = generate(&GenConfig::new(Scenario::LogisticBinary, 40, 5, 11).with_k(3)).unwrap().0;
    let lambda = 0.5;
    let spec = ModelSpec::new(Loss::Hinge, Regularizer::Ridge, lambda);
    let f = fit(&spec, &data, &SolverConfig::default()).unwrap();
    let rep = estimate(&spec, &data, &f, None, None).unwrap();
    assert_eq!(rep.engine, Engine::NonsmoothLoss);
    let eta = f.linear_predictor(&data);
    let v: Vec<usize> = (0..40).filter(|&j| (data.y()[j] * eta[j] - 1.0).abs() < 1e-5).collect();
    assert!(!v.is_empty() && v.len() < 5);
    // Hinge curvature vanishes off the margin, so Y = 2 lambda I and
    // a_i = 1 / (2 lambda [(X_V X_V^T)^{-1}]_ii) on the margin,
    // a_i = x_i^T (I - X_V^T (X_V X_V^T)^{-1} X_V) x_i / (2 lambda) elsewhere.
    let x_v = crate::linalg::select_rows(data.x(), &v);
    let m_inv = (&x_v * x_v.transpose()).try_inverse().unwrap();
    let proj = DMatrix::identity(5, 5) - x_v.transpose() * &m_inv * &x_v;
    let a = rep.diagnostics.a_coeffs.as_ref().unwrap();
    for i in 0..40 {
        let want = match v.iter().position(|&j| j == i) {
            Some(k) => 1.0 / (2.0 * lambda * m_inv[(k, k)]),
            None => {
                let xi = data.row(i);
                xi.dot(&(&proj * &xi)) / (2.0 * lambda)
            }
        };
        assert!((a[i] - want).abs() < 1e-8 * want.abs().max(1.0), "i={i}: {} vs {want}", a[i]);
    }
}

#[test]
fn nuclear_curvature_two_by_two() {
    let c = nuclear_curvature(&[2.0, 1.0], &[0.0, 0.0], 2, 2, 2);
    assert_eq!(c.entries, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    let third = 1.0 / 3.0;
    let want = DMatrix::from_row_slice(4, 4, &[
        0.0, 0.0, 0.0, 0.0,
        0.0, third, -third, 0.0,
        0.0, -third, third, 0.0,
        0.0, 0.0, 0.0, 0.0,
    ]);
    assert!((c.matrix - want).abs().max() < 1e-15);
}

#[test]
fn nuclear_curvature_rank_one_block() {
    // m = 1 in a 2 x 3 matrix: entries (0, *) and (1, 0); g pairs row/column 1.
    let c = nuclear_curvature(&[4.0], &[1.0, 0.5, 0.0], 1, 2, 3);
    assert_eq!(c.entries, vec![(0, 0), (0, 1), (0, 2), (1, 0)]);
    let m = &c.matrix;
    assert_eq!(m[(0, 0)], 0.0);
    assert_eq!(m[(1, 1)], 0.25);
    assert_eq!(m[(2, 2)], 0.25);
    assert_eq!(m[(3, 3)], 0.25);
    assert_eq!(m[(1, 3)], -0.125);
    assert_eq!(m[(3, 1)], -0.125);
    assert_eq!(m[(2, 3)], 0.0);
}

#[test]
fn nuclear_tracks_refits() {
    let data = generate(&GenConfig::matrix(Scenario::LowrankMatrix, 80, 4, 4, 12)).unwrap().0;
    let spec = ModelSpec::new(Loss::Squared, Regularizer::Nuclear { p1: 4, p2: 4 }, 0.5).with_intercept(true);
    let rep = run(&spec, &data, Engine::Nuclear);
    assert!(rep.active_set_size >= 1);
    let refit = loo(&spec, &data);
    let y = data.y();
    let loo_risk: f64 = refit.iter().zip(y.iter()).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / 80.0;
    let alo_risk = rep.risk.unwrap();
    assert!((alo_risk - loo_risk).abs() / loo_risk < 0.05, "{alo_risk} vs {loo_risk}");
}

#[test]
fn orthant_interior_is_ridge() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = DMatrix::from_fn(30, 4, |_, _| normal(&mut rng) / 30f64.sqrt());
    let y = &x * DVector::from_vec(vec![5.0, 4.0, 6.0, 3.0]) + DVector::from_fn(30, |_, _| 0.05 * normal(&mut rng));
    let data = Dataset::new(x, y, TaskKind::Regression).unwrap();
    let ridge = ModelSpec::new(Loss::Squared, Regularizer::Ridge, 0.01).with_intercept(true);
    let pos = ridge.clone().with_constraint(Constraint::PositiveOrthant);
    let a = run(&ridge, &data, Engine::SmoothPrimal);
    let b = run(&pos, &data, Engine::Constrained);
    assert_eq!(b.active_set_size, 4);
    assert!(max_gap(&a, &b) < 1e-8);
}

#[test]
fn orthant_with_zeros_matches_refits_on_stable_face() {
    let data = gauss(40, 8, 14);
    let spec = ModelSpec::new(Loss::Squared, Regularizer::Ridge, 0.05).with_constraint(Constraint::PositiveOrthant);
    let f = fit(&spec, &data, &SolverConfig::default()).unwrap();
    let rep = estimate(&spec, &data, &f, None, None).unwrap();
    assert!(rep.active_set_size < 8);
    // Where the held-out refit keeps the same face, one projected Newton step is exact.
    let full_face: Vec<bool> = f.beta.iter().map(|&b| b > 0.0).collect();
    let mut checked = 0;
    for i in 0..40 {
        let r = fit(&spec, &data.without(i), &SolverConfig::default()).unwrap();
        let face: Vec<bool> = r.beta.iter().map(|&b| b > 0.0).collect();
        if face == full_face {
            let want = r.predict_row(&data.row(i));
            assert!((rep.predictions[i].unwrap() - want).abs() < 1e-7);
            checked += 1;
        }
    }
    assert!(checked > 20);
}

#[test]
fn psd_cone_tracks_refits() {
    let data = generate(&GenConfig::matrix(Scenario::PsdQuadratic, 60, 3, 3, 15)).unwrap().0;
    let spec = ModelSpec::new(Loss::Squared, Regularizer::FrobSq { p1: 3, p2: 3 }, 0.5)
        .with_constraint(Constraint::PsdCone { p: 3 });
    let rep = run(&spec, &data, Engine::Constrained);
    let refit = loo(&spec, &data);
    let y = data.y();
    let loo_risk: f64 = refit.iter().zip(y.iter()).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / 60.0;
    let alo_risk = rep.risk.unwrap();
    assert!((alo_risk - loo_risk).abs() / loo_risk < 0.05, "{alo_risk} vs {loo_risk}");
}

#[test]
fn logistic_ridge_tracks_refits() {
    let data = generate(&GenConfig::new(Scenario::LogisticBinary, 80, 10, 16).with_k(4)).unwrap().0;
    let spec = ModelSpec::new(Loss::Logistic, Regularizer::Ridge, 0.5).with_intercept(true);
    let rep = run(&spec, &data, Engine::SmoothPrimal);
    let refit = loo(&spec, &data);
    let gap = rep
        .predictions
        .iter()
        .zip(&refit)
        .map(|(a, b)| (a.unwrap() - b).abs())
        .fold(0.0, f64::max);
    assert!(gap < 0.05, "{gap}");
}

#[test]
fn predictions_are_permutation_equivariant() {
    let data = gauss(30, 10, 17);
    let perm: Vec<usize> = (0..30).rev().collect();
    let shuffled = data.subset(&perm);
    for (reg, engine) in [
        (Regularizer::Lasso, Engine::Dual),
        (Regularizer::Ridge, Engine::SmoothPrimal),
        (Regularizer::consecutive_groups(10, 2), Engine::Proximal),
    ] {
        let spec = ModelSpec::new(Loss::Squared, reg, 0.05).with_intercept(true);
        let a = run(&spec, &data, engine);
        let b = run(&spec, &shuffled, engine);
        for (k, &i) in perm.iter().enumerate() {
            assert!((a.predictions[i].unwrap() - b.predictions[k].unwrap()).abs() < 1e-7);
        }
    }
}

#[test]
fn leverages_lie_in_unit_interval() {
    let data = gauss(30, 40, 18);
    let specs = [
        ModelSpec::new(Loss::Squared, Regularizer::Lasso, 0.02),
        ModelSpec::new(Loss::Squared, Regularizer::Lasso, 0.02).with_intercept(true),
        ModelSpec::new(Loss::Squared, Regularizer::Ridge, 0.01).with_intercept(true),
        ModelSpec::new(Loss::Squared, Regularizer::Linf, 0.1),
        ModelSpec::new(Loss::Squared, Regularizer::fused(40), 0.05).with_intercept(true),
    ];
    for spec in specs {
        let rep = run(&spec, &data, Engine::auto(&spec));
        for &h in &rep.diagnostics.h_diag {
            assert!((-1e-12..=1.0 + 1e-8).contains(&h), "{}: {h}", spec.reg.name());
        }
    }
}

#[test]
fn saturated_lasso_skips_observations() {
    // p > n with a tiny penalty interpolates: every leverage is one.
    let data = gauss(10, 30, 19);
    let spec = ModelSpec::new(Loss::Squared, Regularizer::Lasso, 1e-3);
    let rep = run(&spec, &data, Engine::Dual);
    assert_eq!(rep.active_set_size, 10);
    assert_eq!(rep.skipped(), 10);
    assert!(rep.risk.is_none());
    assert!(!rep.warnings.is_empty());
}

#[test]
fn unsupported_and_stale_inputs_are_rejected() {
    let data = gauss(20, 5, 20);
    let spec = ModelSpec::new(Loss::Squared, Regularizer::Lasso, 0.1);
    let mut f = fit(&spec, &data, &SolverConfig::default()).unwrap();
    assert!(matches!(
        estimate(&spec, &data, &f, Some(Engine::SmoothPrimal), None),
        Err(AloError::Unsupported { .. })
    ));
    assert!(matches!(
        estimate(&spec, &data, &f, Some(Engine::Nuclear), None),
        Err(AloError::Unsupported { .. })
    ));
    f.converged = false;
    assert!(matches!(estimate(&spec, &data, &f, None, None), Err(AloError::StaleFit { .. })));
}

#[test]
fn engine_names_round_trip() {
    for e in Engine::ALL {
        assert_eq!(Engine::parse(e.name()).unwrap(), e);
    }
    assert_eq!(Engine::parse("smooth-primal").unwrap(), Engine::SmoothPrimal);
    assert!(Engine::parse("magic").is_err());
}

#[test]
fn sweep_keeps_grid_order() {
    let data = gauss(30, 10, 21);
    let spec = ModelSpec::new(Loss::Squared, Regularizer::Lasso, 1.0);
    let grid = [0.01, 0.1, 0.05];
    let pts = sweep(&spec, &data, &grid, &SolverConfig::default(), None, None);
    for (p, &l) in pts.iter().zip(&grid) {
        assert_eq!(p.lambda, l);
        let direct = run(&spec.with_lambda(l), &data, Engine::Dual);
        assert!(max_gap(p.report.as_ref().unwrap(), &direct) < 1e-7);
    }
}
