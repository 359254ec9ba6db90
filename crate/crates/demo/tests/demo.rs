use alo_demo::{alo_curve, leverage_profile, loocv_curve, DemoConfig};

fn small(model: &str) -> DemoConfig {
    DemoConfig {
        n: 30,
        p: 10,
        k: 3,
        grid: 6,
        model: model.into(),
        ..DemoConfig::default()
    }
}

#[test]
fn ridge_curves_coincide() {
    let cfg = small("ridge");
    let a = alo_curve(&cfg).unwrap();
    let l = loocv_curve(&cfg).unwrap();
    assert_eq!(a.lambdas, l.lambdas);
    for (x, y) in a.risk.iter().zip(&l.risk) {
        let (x, y) = (x.unwrap(), y.unwrap());
        assert!((x - y).abs() <= 1e-8 * y, "alo {x} loocv {y}");
    }
}

#[test]
fn lasso_curve_spans_the_support() {
    let c = alo_curve(&small("lasso")).unwrap();
    assert_eq!(c.active[0], 0);
    assert!(*c.active.last().unwrap() > 3);
    assert!(c.lambdas.windows(2).all(|w| w[0] > w[1]));
}

#[test]
fn leverage_profile_is_consistent() {
    let cfg = small("lasso");
    let lev = leverage_profile(&cfg, 3).unwrap();
    assert_eq!(lev.y.len(), 30);
    assert_eq!(lev.engine, "dual");
    assert!(lev.h.iter().all(|&h| (-1e-12..=1.0 + 1e-8).contains(&h)));
    assert!(leverage_profile(&cfg, 99).is_err());
}

#[test]
fn bad_configs_are_reported() {
    assert!(alo_curve(&small("elastic")).is_err());
    let big = DemoConfig {
        n: 5000,
        ..DemoConfig::default()
    };
    assert!(alo_curve(&big).is_err());
    let matrix = DemoConfig {
        scenario: "lowrank_matrix".into(),
        ..DemoConfig::default()
    };
    assert!(alo_curve(&matrix).is_err());
}

#[test]
fn binary_scenarios_use_logistic_loss() {
    let cfg = DemoConfig {
        scenario: "logistic_binary".into(),
        ..small("lasso")
    };
    let lev = leverage_profile(&cfg, 2).unwrap();
    assert!(lev.y.iter().all(|&y| y == 1.0 || y == -1.0));
    assert_eq!(lev.engine, "proximal");
}
