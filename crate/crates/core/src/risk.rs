//! Error functions and risk curves.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::TaskKind;
use crate::error::{AloError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorFn {
    Squared,
    Absolute,
    /// Misclassification rate of `sign(yhat)` against labels in {-1, +1}; `sign(0)` counts as +1.
    ZeroOneSign,
}

impl ErrorFn {
    pub fn default_for(kind: TaskKind) -> Self {
        match kind {
            TaskKind::Regression => ErrorFn::Squared,
            TaskKind::Binary => ErrorFn::ZeroOneSign,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorFn::Squared => "squared",
            ErrorFn::Absolute => "absolute",
            ErrorFn::ZeroOneSign => "zero_one_sign",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(ErrorFn::Squared),
            "absolute" => Ok(ErrorFn::Absolute),
            "zero_one_sign" | "zero-one" | "01" => Ok(ErrorFn::ZeroOneSign),
            other => Err(AloError::Config(format!("unknown error function {other:?}"))),
        }
    }

    fn apply(self, y: f64, yhat: f64) -> f64 {
        match self {
            ErrorFn::Squared => (y - yhat).powi(2),
            ErrorFn::Absolute => (y - yhat).abs(),
            ErrorFn::ZeroOneSign => {
                let s = if yhat >= 0.0 { 1.0 } else { -1.0 };
                if s == y {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }
}

/// Mean of `d(y_i, yhat_i)`.
pub fn eval_risk(y: &[f64], yhat: &[f64], d: ErrorFn) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(AloError::dim(format!("y has {} entries, yhat has {}", y.len(), yhat.len())));
    }
    if y.is_empty() {
        return Err(AloError::dim("cannot evaluate risk on zero observations"));
    }
    if d == ErrorFn::ZeroOneSign && y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(AloError::InvalidTask("zero_one_sign needs labels in {-1, +1}".into()));
    }
    let total: f64 = y.iter().zip(yhat).map(|(&a, &b)| d.apply(a, b)).sum();
    Ok(total / y.len() as f64)
}

/// Risk over the observations that have a prediction; absent entries are skipped.
pub fn eval_risk_partial(y: &DVector<f64>, yhat: &[Option<f64>], d: ErrorFn) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(AloError::dim(format!("y has {} entries, yhat has {}", y.len(), yhat.len())));
    }
    let (ys, hs): (Vec<f64>, Vec<f64>) = y
        .iter()
        .zip(yhat)
        .filter_map(|(&a, b)| b.map(|b| (a, b)))
        .unzip();
    eval_risk(&ys, &hs, d)
}

/// One cell of a risk curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEntry {
    pub lambda: f64,
    pub method: String,
    pub risk: f64,
    pub seconds: f64,
    #[serde(default)]
    pub warnings: usize,
}

impl RiskEntry {
    pub fn new(lambda: f64, method: impl Into<String>, risk: f64, seconds: f64) -> Self {
        Self {
            lambda,
            method: method.into(),
            risk,
            seconds,
            warnings: 0,
        }
    }
}

/// Risk per method on a descending lambda grid. Missing cells stay `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve {
    pub lambdas: Vec<f64>,
    pub methods: Vec<String>,
    /// `risks[m][k]` is the risk of `methods[m]` at `lambdas[k]`.
    pub risks: Vec<Vec<Option<f64>>>,
    pub seconds: Vec<Vec<Option<f64>>>,
    pub warnings: Vec<Vec<usize>>,
}

impl RiskCurve {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn method_index(&self, method: &str) -> Option<usize> {
        self.methods.iter().position(|m| m == method)
    }

    pub fn risk_of(&self, method: &str) -> Option<&[Option<f64>]> {
        self.method_index(method).map(|m| self.risks[m].as_slice())
    }

    /// Lambda minimizing the given method's risk, ignoring missing cells.
    pub fn argmin(&self, method: &str) -> Option<f64> {
        let row = self.risk_of(method)?;
        row.iter()
            .enumerate()
            .filter_map(|(k, r)| r.map(|r| (k, r)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| self.lambdas[k])
    }

    /// Entries in canonical order: lambda descending, then method name.
    pub fn flatten(&self) -> Vec<RiskEntry> {
        let mut out = Vec::new();
        for (k, &lambda) in self.lambdas.iter().enumerate() {
            for (m, method) in self.methods.iter().enumerate() {
                if let Some(risk) = self.risks[m][k] {
                    out.push(RiskEntry {
                        lambda,
                        method: method.clone(),
                        risk,
                        seconds: self.seconds[m][k].unwrap_or(0.0),
                        warnings: self.warnings[m][k],
                    });
                }
            }
        }
        out
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let err = |e: csv::Error| AloError::Io {
            path: "<risk curve>".into(),
            message: e.to_string(),
        };
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["lambda", "method", "risk", "seconds", "warnings"]).map_err(err)?;
        for e in self.flatten() {
            wr.write_record([
                format!("{:e}", e.lambda),
                e.method,
                format!("{:e}", e.risk),
                format!("{:.6}", e.seconds),
                e.warnings.to_string(),
            ])
            .map_err(err)?;
        }
        wr.flush().map_err(|e| AloError::Io {
            path: "<risk curve>".into(),
            message: e.to_string(),
        })
    }
}

/// Builds a curve from loose entries; duplicates of a `(lambda, method)` pair are rejected.
pub fn assemble_risk_curve(entries: &[RiskEntry]) -> Result<RiskCurve> {
    if entries.is_empty() {
        return Err(AloError::Config("risk curve needs at least one entry".into()));
    }
    if let Some(e) = entries.iter().find(|e| !e.lambda.is_finite()) {
        return Err(AloError::Config(format!("non-finite lambda {}", e.lambda)));
    }
    let mut lambdas: Vec<f64> = entries.iter().map(|e| e.lambda).collect();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    lambdas.dedup();
    let methods: Vec<String> = entries
        .iter()
        .map(|e| e.method.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut cells: BTreeMap<(usize, usize), &RiskEntry> = BTreeMap::new();
    for e in entries {
        let k = lambdas.iter().position(|&l| l == e.lambda).expect("lambda present");
        let m = methods.iter().position(|x| x == &e.method).expect("method present");
        if cells.insert((m, k), e).is_some() {
            return Err(AloError::Conflict {
                lambda: e.lambda,
                method: e.method.clone(),
            });
        }
    }
    let mut risks = vec![vec![None; lambdas.len()]; methods.len()];
    let mut seconds = vec![vec![None; lambdas.len()]; methods.len()];
    let mut warnings = vec![vec![0; lambdas.len()]; methods.len()];
    for ((m, k), e) in cells {
        risks[m][k] = Some(e.risk);
        seconds[m][k] = Some(e.seconds);
        warnings[m][k] = e.warnings;
    }
    Ok(RiskCurve {
        lambdas,
        methods,
        risks,
        seconds,
        warnings,
    })
}

/// `count` values from `max` down to `min`, log- or linearly spaced.
pub fn lambda_grid(count: usize, min: f64, max: f64, log: bool) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(AloError::Config("lambda grid must have at least one value".into()));
    }
    if !(min > 0.0) || !(max >= min) || !max.is_finite() {
        return Err(AloError::Config(format!("invalid lambda range [{min}, {max}]")));
    }
    if count == 1 {
        return Ok(vec![max]);
    }
    let step = |k: usize| k as f64 / (count - 1) as f64;
    Ok((0..count)
        .map(|k| {
            if log {
                (max.ln() + (min.ln() - max.ln()) * step(k)).exp()
            } else {
                max + (min - max) * step(k)
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn eval_risk_examples() {
        assert_eq!(eval_risk(&[1.0, 2.0], &[1.0, 2.0], ErrorFn::Squared).unwrap(), 0.0);
        assert_eq!(eval_risk(&[1.0, -1.0], &[0.3, 0.2], ErrorFn::ZeroOneSign).unwrap(), 0.5);
        let r = eval_risk(&[0.0, 0.0, 3.0], &[1.0, 1.0, 0.0], ErrorFn::Squared).unwrap();
        assert!((r - 11.0 / 3.0).abs() < 1e-15);
        assert_eq!(eval_risk(&[1.0, 2.0], &[1.0, 2.0, 3.0], ErrorFn::Squared), Err(AloError::Dimension("y has 2 entries, yhat has 3".into())));
        assert!(matches!(eval_risk(&[0.5], &[1.0], ErrorFn::ZeroOneSign), Err(AloError::InvalidTask(_))));
    }

    #[test]
    fn sign_zero_is_positive() {
        assert_eq!(eval_risk(&[1.0], &[0.0], ErrorFn::ZeroOneSign).unwrap(), 0.0);
        assert_eq!(eval_risk(&[-1.0], &[0.0], ErrorFn::ZeroOneSign).unwrap(), 1.0);
    }

    #[test]
    fn assemble_examples() {
        assert!(assemble_risk_curve(&[]).is_err());
        let c = assemble_risk_curve(&[RiskEntry::new(1.0, "alo", 0.5, 0.01)]).unwrap();
        assert_eq!(c.len(), 1);
        let entries = vec![
            RiskEntry::new(1.0, "alo", 0.5, 0.0),
            RiskEntry::new(10.0, "alo", 0.7, 0.0),
            RiskEntry::new(1.0, "loocv", 0.4, 0.0),
            RiskEntry::new(10.0, "loocv", 0.6, 0.0),
        ];
        let c = assemble_risk_curve(&entries).unwrap();
        assert_eq!(c.lambdas, vec![10.0, 1.0]);
        assert_eq!(c.risk_of("loocv").unwrap(), &[Some(0.6), Some(0.4)]);
        assert_eq!(c.argmin("alo"), Some(1.0));
    }

    #[test]
    fn duplicates_conflict_and_missing_cells_stay_absent() {
        let dup = vec![RiskEntry::new(1.0, "alo", 0.5, 0.0), RiskEntry::new(1.0, "alo", 0.6, 0.0)];
        assert!(matches!(assemble_risk_curve(&dup), Err(AloError::Conflict { .. })));
        let sparse = vec![RiskEntry::new(1.0, "alo", 0.5, 0.0), RiskEntry::new(2.0, "loocv", 0.6, 0.0)];
        let c = assemble_risk_curve(&sparse).unwrap();
        assert_eq!(c.risk_of("alo").unwrap(), &[None, Some(0.5)]);
    }

    #[test]
    fn grid_is_descending_log_spaced() {
        let g = lambda_grid(25, 3.16e-3, 3.16e-2, true).unwrap();
        assert_eq!(g.len(), 25);
        assert!((g[0] - 3.16e-2).abs() < 1e-15 && (g[24] - 3.16e-3).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
        let ratio = g[0] / g[1];
        assert!(g.windows(2).all(|w| (w[0] / w[1] - ratio).abs() < 1e-12));
        assert!(lambda_grid(0, 1.0, 2.0, true).is_err());
    }

    proptest! {
        #[test]
        fn risk_is_permutation_invariant(pairs in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..30), rot in 0usize..30) {
            let (y, h): (Vec<f64>, Vec<f64>) = pairs.iter().cloned().unzip();
            let k = rot % y.len();
            let mut y2 = y.clone();
            let mut h2 = h.clone();
            y2.rotate_left(k);
            h2.rotate_left(k);
            y2.reverse();
            h2.reverse();
            for d in [ErrorFn::Squared, ErrorFn::Absolute] {
                let a = eval_risk(&y, &h, d).unwrap();
                let b = eval_risk(&y2, &h2, d).unwrap();
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
            prop_assert_eq!(eval_risk(&y, &y, ErrorFn::Squared).unwrap(), 0.0);
        }

        #[test]
        fn assemble_flatten_roundtrip(cells in prop::collection::btree_map((1u32..40, 0usize..3), 0.0..10.0f64, 1..40)) {
            let names = ["alo", "kfold5", "loocv"];
            let entries: Vec<RiskEntry> = cells
                .iter()
                .map(|(&(l, m), &r)| RiskEntry::new(l as f64 * 0.1, names[m], r, 0.5))
                .collect();
            let curve = assemble_risk_curve(&entries).unwrap();
            let again = assemble_risk_curve(&curve.flatten()).unwrap();
            prop_assert_eq!(again, curve);
        }
    }
}
