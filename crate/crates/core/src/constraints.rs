//! Convex constraint sets: projections and projection Jacobians.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{AloError, Result};
use crate::linalg::{sorted_symmetric_eigen, unvec, vec_rm};

/// Margin for "on a face boundary" checks.
pub const FACE_TOL: f64 = 1e-8;

/// User-supplied polyhedron: its projection and an orthonormal basis of the
/// face containing the projection of a point.
pub trait FaceOracle: Debug + Send + Sync {
    fn project(&self, v: &DVector<f64>) -> DVector<f64>;
    fn face_basis(&self, v: &DVector<f64>) -> Result<DMatrix<f64>>;
}

#[derive(Debug, Clone)]
pub enum Constraint {
    /// `beta >= 0` coordinatewise.
    PositiveOrthant,
    Polyhedron(Arc<dyn FaceOracle>),
    /// Positive semidefinite `p x p` matrices, flattened row-major.
    PsdCone { p: usize },
}

impl Constraint {
    pub fn name(&self) -> &'static str {
        match self {
            Constraint::PositiveOrthant => "positive_orthant",
            Constraint::Polyhedron(_) => "polyhedron",
            Constraint::PsdCone { .. } => "psd_cone",
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Constraint::PsdCone { p } if p * p != dim => Err(AloError::Shape(format!(
                "PSD cone over {p}x{p} matrices needs {} coefficients, got {dim}",
                p * p
            ))),
            _ => Ok(()),
        }
    }

    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Constraint::PositiveOrthant => v.map(|x| x.max(0.0)),
            Constraint::Polyhedron(oracle) => oracle.project(v),
            Constraint::PsdCone { p } => vec_rm(&psd_projection(&unvec(v, *p, *p))),
        }
    }

    /// Jacobian of the projection at `v`, as a dense matrix.
    pub fn jacobian(&self, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        match self {
            Constraint::PositiveOrthant | Constraint::Polyhedron(_) => Ok(self.polyhedron_jacobian(v)?.0),
            Constraint::PsdCone { p } => psd_jacobian(&unvec(v, *p, *p)),
        }
    }

    /// `(J, Gamma)` with `Gamma` an orthonormal basis of the face at `project(v)` and `J = Gamma Gamma^T`.
    pub fn polyhedron_jacobian(&self, v: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let gamma = match self {
            Constraint::PositiveOrthant => {
                if let Some(j) = (0..v.len()).find(|&j| v[j].abs() < FACE_TOL) {
                    return Err(AloError::Degenerate(format!("coordinate {j} sits on the orthant boundary")));
                }
                let face: Vec<usize> = (0..v.len()).filter(|&j| v[j] > 0.0).collect();
                let mut g = DMatrix::zeros(v.len(), face.len());
                for (c, &j) in face.iter().enumerate() {
                    g[(j, c)] = 1.0;
                }
                g
            }
            Constraint::Polyhedron(oracle) => oracle.face_basis(v)?,
            Constraint::PsdCone { .. } => {
                return Err(AloError::unsupported("psd_cone", "polyhedral face basis"));
            }
        };
        Ok((&gamma * gamma.transpose(), gamma))
    }
}

/// Projection onto the PSD cone of the symmetrization `(B + B^T) / 2`.
pub fn psd_projection(b: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (b + b.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}

/// Jacobian of [`psd_projection`] in row-major `vec` coordinates, `J = J1 J2`:
/// `J2` symmetrizes, `J1` is the derivative of eigenvalue clamping on symmetric input.
pub fn psd_jacobian(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = b.nrows();
    let sym = (b + b.transpose()) * 0.5;
    let (lam, q) = sorted_symmetric_eigen(&sym);
    if let Some(i) = (0..p).find(|&i| lam[i].abs() < FACE_TOL) {
        return Err(AloError::Degenerate(format!("eigenvalue {i} is within {FACE_TOL:e} of zero")));
    }
    let dim = p * p;
    let mut j1 = DMatrix::zeros(dim, dim);
    for s in 0..p {
        if lam[s] > 0.0 {
            let m = vec_rm(&(q.column(s) * q.column(s).transpose()));
            j1 += &m * m.transpose();
        }
        for t in (s + 1)..p {
            let (ls, lt) = (lam[s], lam[t]);
            let coef = (ls.max(0.0) - lt.max(0.0)) / (ls - lt);
            if coef == 0.0 {
                continue;
            }
            let outer = q.column(s) * q.column(t).transpose();
            let m = vec_rm(&(&outer + outer.transpose())) / std::f64::consts::SQRT_2;
            j1 += &m * m.transpose() * coef;
        }
    }
    let mut j2 = DMatrix::zeros(dim, dim);
    for r in 0..p {
        for c in 0..p {
            j2[(r * p + c, r * p + c)] += 0.5;
            j2[(r * p + c, c * p + r)] += 0.5;
        }
    }
    Ok(j1 * j2)
}
