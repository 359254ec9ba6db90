//! Loss functions `l(u; y)` of the linear predictor `u`, with derivatives,
//! kinks and the conjugate data used by the dual engine.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FitResult};
use crate::error::{AloError, Result};

/// Distance from a kink below which a point counts as sitting on it.
pub const SINGULARITY_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `(u - y)^2 / 2`
    Squared,
    /// `log(1 + exp(-y u))`
    Logistic,
    /// `(1 - y u)_+`
    Hinge,
}

/// Value and derivatives at one point; derivatives are `None` on a kink.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub d1: Option<f64>,
    pub d2: Option<f64>,
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl Loss {
    pub fn name(self) -> &'static str {
        match self {
            Loss::Squared => "squared",
            Loss::Logistic => "logistic",
            Loss::Hinge => "hinge",
        }
    }

    pub fn is_smooth(self) -> bool {
        !matches!(self, Loss::Hinge)
    }

    pub fn value(self, u: f64, y: f64) -> f64 {
        match self {
            Loss::Squared => 0.5 * (u - y).powi(2),
            Loss::Logistic => softplus(-y * u),
            Loss::Hinge => (1.0 - y * u).max(0.0),
        }
    }

    /// First derivative in `u`. For the hinge this is the derivative of the
    /// piece containing `u`, with the kink itself assigned to the right piece.
    pub fn d1(self, u: f64, y: f64) -> f64 {
        match self {
            Loss::Squared => u - y,
            Loss::Logistic => -y * sigmoid(-y * u),
            Loss::Hinge => {
                if y * u < 1.0 {
                    -y
                } else {
                    0.0
                }
            }
        }
    }

    pub fn d2(self, u: f64, y: f64) -> f64 {
        match self {
            Loss::Squared => 1.0,
            Loss::Logistic => {
                let s = sigmoid(y * u);
                s * (1.0 - s)
            }
            Loss::Hinge => 0.0,
        }
    }

    /// Value and derivatives, flagging derivatives within `tol` of a kink.
    pub fn eval(self, u: f64, y: f64, tol: f64) -> LossEval {
        let value = self.value(u, y);
        if self.singularities(y).iter().any(|v| (u - v).abs() <= tol) {
            return LossEval { value, d1: None, d2: None };
        }
        LossEval {
            value,
            d1: Some(self.d1(u, y)),
            d2: Some(self.d2(u, y)),
        }
    }

    /// Points `u` where the loss is not differentiable.
    pub fn singularities(self, y: f64) -> Vec<f64> {
        match self {
            Loss::Hinge => vec![1.0 / y],
            _ => Vec::new(),
        }
    }

    pub fn d1_left(self, v: f64, y: f64) -> f64 {
        match self {
            Loss::Hinge => self.d1(v - 1e-3 * v.abs().max(1.0), y),
            _ => self.d1(v, y),
        }
    }

    pub fn d1_right(self, v: f64, y: f64) -> f64 {
        match self {
            Loss::Hinge => self.d1(v + 1e-3 * v.abs().max(1.0), y),
            _ => self.d1(v, y),
        }
    }

    /// Derivative of the conjugate: the `u` with `d1(u, y) = v`.
    /// `None` when `v` lies outside the range of `d1`.
    pub fn conj_d1(self, v: f64, y: f64) -> Option<f64> {
        match self {
            Loss::Squared => Some(v + y),
            Loss::Logistic => {
                // d1(u) = -y sigmoid(-y u), so sigmoid(-y u) = -y v.
                let s = -y * v;
                if !(s > 0.0 && s < 1.0) {
                    return None;
                }
                Some(-y * (s / (1.0 - s)).ln())
            }
            Loss::Hinge => None,
        }
    }

    /// Second derivative of the conjugate, `1 / d2(u*)` at the matched primal point.
    pub fn conj_d2(self, v: f64, y: f64) -> Option<f64> {
        match self {
            Loss::Squared => Some(1.0),
            Loss::Logistic => {
                let u = self.conj_d1(v, y)?;
                let d2 = self.d2(u, y);
                (d2 > 0.0).then(|| 1.0 / d2)
            }
            Loss::Hinge => None,
        }
    }
}

/// Splits observations into those sitting on a kink (`V`) and the rest (`S`).
pub fn partition_singular(loss: Loss, fit: &FitResult, data: &Dataset, tol: f64) -> (Vec<usize>, Vec<usize>) {
    let eta = fit.linear_predictor(data);
    let mut v = Vec::new();
    let mut s = Vec::new();
    for j in 0..data.n() {
        let on_kink = loss.singularities(data.y()[j]).iter().any(|&k| (eta[j] - k).abs() <= tol);
        if on_kink {
            v.push(j);
        } else {
            s.push(j);
        }
    }
    (v, s)
}

/// `theta_j = -d1(x_j^T beta + beta_0; y_j)` for a smooth loss.
pub fn smooth_dual(loss: Loss, eta: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(eta.len(), |j, _| -loss.d1(eta[j], y[j]))
}

/// Least-squares reduction of a smooth loss around the fitted dual point.
#[derive(Debug, Clone)]
pub struct DualTransform {
    pub x_u: DMatrix<f64>,
    pub y_u: DVector<f64>,
    /// Diagonal of `K`, `K_jj = sqrt(conj_d2(-theta_j, y_j))`.
    pub k: DVector<f64>,
}

pub fn dual_transform(loss: Loss, fit: &FitResult, data: &Dataset) -> Result<DualTransform> {
    if !loss.is_smooth() {
        return Err(AloError::unsupported("dual", format!("{} loss", loss.name())));
    }
    let eta = fit.linear_predictor(data);
    let theta = match fit.theta_vec() {
        Some(t) => t,
        None => smooth_dual(loss, &eta, data.y()),
    };
    let n = data.n();
    let mut k = DVector::zeros(n);
    let mut y_u = DVector::zeros(n);
    for j in 0..n {
        let c = loss
            .conj_d2(-theta[j], data.y()[j])
            .filter(|c| c.is_finite() && *c > 0.0)
            .ok_or(AloError::Curvature { index: j })?;
        k[j] = c.sqrt();
        y_u[j] = (theta[j] * c + eta[j]) / k[j];
    }
    let mut x_u = data.x().clone();
    for j in 0..n {
        x_u.row_mut(j).scale_mut(1.0 / k[j]);
    }
    Ok(DualTransform { x_u, y_u, k })
}
