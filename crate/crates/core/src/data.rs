//! Datasets, model specifications and fitted models.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraints::Constraint;
use crate::error::{AloError, Result};
use crate::losses::Loss;
use crate::regularizers::Regularizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    /// Labels in {-1, +1}.
    Binary,
}

/// One regression problem: rows of `x` are the observations `x_j`.
///
/// Matrix-valued observations are stored flattened row-major with their
/// `(p1, p2)` shape attached, so matrix problems share the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    kind: TaskKind,
    matrix_shape: Option<(usize, usize)>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, kind: TaskKind) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return Err(AloError::dim(format!("dataset must be non-empty, got {n}x{p}")));
        }
        if y.len() != n {
            return Err(AloError::dim(format!("x has {n} rows but y has {} entries", y.len())));
        }
        if kind == TaskKind::Binary && y.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(AloError::InvalidTask("binary labels must be -1 or +1".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(AloError::Parse("dataset contains non-finite values".into()));
        }
        Ok(Self {
            x,
            y,
            kind,
            matrix_shape: None,
        })
    }

    pub fn with_matrix_shape(mut self, p1: usize, p2: usize) -> Result<Self> {
        if p1 * p2 != self.p() {
            return Err(AloError::Shape(format!(
                "{p1}x{p2} observations need p = {}, dataset has p = {}",
                p1 * p2,
                self.p()
            )));
        }
        self.matrix_shape = Some((p1, p2));
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn matrix_shape(&self) -> Option<(usize, usize)> {
        self.matrix_shape
    }

    /// Row `j` of the design as an owned vector.
    pub fn row(&self, j: usize) -> DVector<f64> {
        self.x.row(j).transpose()
    }

    /// The dataset restricted to the given rows, keeping order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let x = crate::linalg::select_rows(&self.x, rows);
        let y = crate::linalg::select_entries(&self.y, rows);
        Dataset {
            x,
            y,
            kind: self.kind,
            matrix_shape: self.matrix_shape,
        }
    }

    /// The dataset with observation `i` removed.
    pub fn without(&self, i: usize) -> Dataset {
        let rows: Vec<usize> = (0..self.n()).filter(|&j| j != i).collect();
        self.subset(&rows)
    }

    /// Reads a CSV file; a header row is detected when its fields are not numeric.
    pub fn from_csv(path: &Path, target: &TargetColumn, kind: TaskKind) -> Result<Self> {
        let io_err = |e: &dyn std::fmt::Display| AloError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| io_err(&e))?;
        let mut records = Vec::new();
        for rec in reader.records() {
            records.push(rec.map_err(|e| io_err(&e))?);
        }
        if records.is_empty() {
            return Err(AloError::Parse(format!("{} is empty", path.display())));
        }
        let header_present = records[0].iter().any(|f| f.parse::<f64>().is_err());
        let header: Option<Vec<String>> = header_present.then(|| records[0].iter().map(String::from).collect());
        let body = if header_present { &records[1..] } else { &records[..] };
        let width = records[0].len();
        let target_idx = match target {
            TargetColumn::Last => width - 1,
            TargetColumn::Named(name) => header
                .as_ref()
                .and_then(|h| h.iter().position(|c| c == name))
                .ok_or_else(|| AloError::Parse(format!("target column {name:?} not found in header")))?,
        };
        if width < 2 {
            return Err(AloError::Parse("need at least one feature column and a target".into()));
        }
        let n = body.len();
        let mut x = DMatrix::zeros(n, width - 1);
        let mut y = DVector::zeros(n);
        for (i, rec) in body.iter().enumerate() {
            if rec.len() != width {
                return Err(AloError::Parse(format!("row {} has {} fields, expected {width}", i + 1, rec.len())));
            }
            let mut col = 0;
            for (k, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| AloError::Parse(format!("row {}: cannot parse {field:?}", i + 1)))?;
                if k == target_idx {
                    y[i] = v;
                } else {
                    x[(i, col)] = v;
                    col += 1;
                }
            }
        }
        Dataset::new(x, y, kind)
    }

    /// Writes `x_1..x_p,y` with a header row.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.p()).map(|k| format!("x{k}")).collect();
        header.push("y".into());
        let err = |e: csv::Error| AloError::Io {
            path: "<csv writer>".into(),
            message: e.to_string(),
        };
        wr.write_record(&header).map_err(err)?;
        for i in 0..self.n() {
            let mut row: Vec<String> = self.x.row(i).iter().map(|v| format!("{v:e}")).collect();
            row.push(format!("{:e}", self.y[i]));
            wr.write_record(&row).map_err(err)?;
        }
        wr.flush().map_err(|e| AloError::Io {
            path: "<csv writer>".into(),
            message: e.to_string(),
        })?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetColumn {
    Last,
    Named(String),
}

/// Loss, regularizer, optional constraint, penalty level and intercept flag.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub loss: Loss,
    pub reg: Regularizer,
    pub constraint: Option<Constraint>,
    pub lambda: f64,
    pub intercept: bool,
}

impl ModelSpec {
    pub fn new(loss: Loss, reg: Regularizer, lambda: f64) -> Self {
        Self {
            loss,
            reg,
            constraint: None,
            lambda,
            intercept: false,
        }
    }

    pub fn with_constraint(mut self, c: Constraint) -> Self {
        self.constraint = Some(c);
        self
    }

    pub fn with_intercept(mut self, on: bool) -> Self {
        self.intercept = on;
        self
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        let mut s = self.clone();
        s.lambda = lambda;
        s
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(AloError::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        self.reg.validate(data.p(), data.matrix_shape())?;
        if matches!(self.loss, Loss::Logistic | Loss::Hinge) && data.kind() != TaskKind::Binary {
            return Err(AloError::InvalidTask(format!("{} loss needs binary labels", self.loss.name())));
        }
        if let Some(c) = &self.constraint {
            if !self.loss.is_smooth() || !self.reg.is_smooth() {
                return Err(AloError::Config(
                    "constraints require a twice-differentiable loss and regularizer".into(),
                ));
            }
            c.validate(data.p())?;
        }
        Ok(())
    }
}

/// Solution of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub beta: Vec<f64>,
    pub intercept: Option<f64>,
    /// Dual vector, `theta_j = -d/du loss(x_j^T beta; y_j)` where the loss is smooth.
    pub theta: Option<Vec<f64>>,
    /// Solver-specific dual certificate: `u` for the generalized lasso, `z = X^T u` for the l-inf dual.
    pub aux: Option<Vec<f64>>,
    pub objective: f64,
    pub iterations: usize,
    /// Final fixed-point or KKT residual.
    pub grad_norm: f64,
    pub converged: bool,
}

impl FitResult {
    pub fn beta_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta)
    }

    pub fn intercept_value(&self) -> f64 {
        self.intercept.unwrap_or(0.0)
    }

    /// Fitted linear predictor `x_j^T beta + beta_0` for every observation.
    pub fn linear_predictor(&self, data: &Dataset) -> DVector<f64> {
        let mut eta = data.x() * self.beta_vec();
        let b0 = self.intercept_value();
        if b0 != 0.0 {
            eta.add_scalar_mut(b0);
        }
        eta
    }

    pub fn predict_row(&self, x: &DVector<f64>) -> f64 {
        x.dot(&self.beta_vec()) + self.intercept_value()
    }

    pub fn theta_vec(&self) -> Option<DVector<f64>> {
        self.theta.as_ref().map(|t| DVector::from_column_slice(t))
    }
}
