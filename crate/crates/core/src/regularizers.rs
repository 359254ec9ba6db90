//! Regularizers `R(beta)`: values, proximal maps and their Jacobians,
//! Hessians where smooth, and active-set / face extraction.
//!
//! Penalty levels are kept outside the regularizer: the objective is
//! `sum_j l(x_j^T beta; y_j) + lambda * R(beta)`, and `prox(z, t)` is the
//! proximal map of `t * R`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, FitResult};
use crate::error::{AloError, Result};
use crate::linalg::{self, full_svd, unvec, vec_rm};

/// Margin for "on a kink" checks of prox maps.
pub const BOUNDARY_TOL: f64 = 1e-8;
/// Support tolerance for lasso, generalized lasso and group supports.
pub const SUPPORT_TOL: f64 = 1e-8;
/// Relative singular-value cutoff for the nuclear norm rank.
pub const RANK_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub enum Regularizer {
    /// `||beta||_2^2`
    Ridge,
    /// `||beta||_1`
    Lasso,
    /// `sum_l w_l ||beta_{I_l}||_2`; the groups partition the coordinates.
    GroupLasso { groups: Vec<Vec<usize>>, weights: Vec<f64> },
    /// `||D beta||_1`
    GenLasso { d: DMatrix<f64> },
    /// Sorted l1 norm `sum_i w_i |beta|_(i)` with nonincreasing `w`.
    Slope { weights: Vec<f64> },
    /// `max_i |beta_i|`
    Linf,
    /// Sum of singular values of the `p1 x p2` coefficient matrix.
    Nuclear { p1: usize, p2: usize },
    /// Squared Frobenius norm of the `p1 x p2` coefficient matrix.
    FrobSq { p1: usize, p2: usize },
}

/// Support or face of a fitted coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSetInfo {
    pub indices: Vec<usize>,
    pub signs: Option<Vec<f64>>,
    /// Columns spanning the local face: `B` for the generalized lasso, `W` for l-inf and SLOPE.
    pub face_basis: Option<DMatrix<f64>>,
}

impl Regularizer {
    pub fn name(&self) -> &'static str {
        match self {
            Regularizer::Ridge => "ridge",
            Regularizer::Lasso => "lasso",
            Regularizer::GroupLasso { .. } => "group_lasso",
            Regularizer::GenLasso { .. } => "gen_lasso",
            Regularizer::Slope { .. } => "slope",
            Regularizer::Linf => "linf",
            Regularizer::Nuclear { .. } => "nuclear",
            Regularizer::FrobSq { .. } => "frob_sq",
        }
    }

    pub fn group_lasso(groups: Vec<Vec<usize>>) -> Self {
        let weights = vec![1.0; groups.len()];
        Regularizer::GroupLasso { groups, weights }
    }

    /// Equal-size consecutive groups covering `0..p`.
    pub fn consecutive_groups(p: usize, size: usize) -> Self {
        let groups: Vec<Vec<usize>> = (0..p).collect::<Vec<_>>().chunks(size.max(1)).map(|c| c.to_vec()).collect();
        Self::group_lasso(groups)
    }

    pub fn fused(p: usize) -> Self {
        Regularizer::GenLasso { d: first_difference(p) }
    }

    pub fn is_smooth(&self) -> bool {
        matches!(self, Regularizer::Ridge | Regularizer::FrobSq { .. })
    }

    pub fn has_dual_face(&self) -> bool {
        matches!(
            self,
            Regularizer::Lasso | Regularizer::GenLasso { .. } | Regularizer::Linf | Regularizer::Slope { .. }
        )
    }

    pub fn is_spectral(&self) -> bool {
        matches!(self, Regularizer::Nuclear { .. } | Regularizer::FrobSq { .. })
    }

    pub fn has_prox_jacobian(&self) -> bool {
        !matches!(self, Regularizer::GenLasso { .. } | Regularizer::Nuclear { .. })
    }

    pub fn validate(&self, p: usize, shape: Option<(usize, usize)>) -> Result<()> {
        match self {
            Regularizer::Ridge | Regularizer::Lasso | Regularizer::Linf => Ok(()),
            Regularizer::GroupLasso { groups, weights } => {
                if groups.len() != weights.len() {
                    return Err(AloError::Config(format!(
                        "{} groups but {} group weights",
                        groups.len(),
                        weights.len()
                    )));
                }
                if weights.iter().any(|&w| !(w > 0.0)) {
                    return Err(AloError::Config("group weights must be positive".into()));
                }
                let mut seen = vec![false; p];
                for g in groups {
                    if g.is_empty() {
                        return Err(AloError::Config("empty group".into()));
                    }
                    for &j in g {
                        if j >= p || seen[j] {
                            return Err(AloError::Config(format!(
                                "groups must partition 0..{p}; index {j} is out of range or repeated"
                            )));
                        }
                        seen[j] = true;
                    }
                }
                if seen.iter().any(|s| !s) {
                    return Err(AloError::Config(format!("groups do not cover 0..{p}")));
                }
                Ok(())
            }
            Regularizer::GenLasso { d } => {
                if d.ncols() != p {
                    return Err(AloError::dim(format!("D has {} columns, p = {p}", d.ncols())));
                }
                Ok(())
            }
            Regularizer::Slope { weights } => {
                if weights.len() != p {
                    return Err(AloError::dim(format!("{} SLOPE weights for p = {p}", weights.len())));
                }
                if weights.iter().any(|&w| w < 0.0) || weights.windows(2).any(|w| w[0] < w[1]) {
                    return Err(AloError::Config("SLOPE weights must be nonnegative and nonincreasing".into()));
                }
                Ok(())
            }
            Regularizer::Nuclear { p1, p2 } | Regularizer::FrobSq { p1, p2 } => {
                if p1 * p2 != p {
                    return Err(AloError::Shape(format!("{p1}x{p2} does not match p = {p}")));
                }
                match shape {
                    Some(s) if s == (*p1, *p2) => Ok(()),
                    Some(s) => Err(AloError::Shape(format!("dataset shape {s:?} differs from {p1}x{p2}"))),
                    None => Err(AloError::Shape("spectral penalty needs matrix-shaped observations".into())),
                }
            }
        }
    }

    pub fn value(&self, beta: &DVector<f64>) -> f64 {
        match self {
            Regularizer::Ridge | Regularizer::FrobSq { .. } => beta.norm_squared(),
            Regularizer::Lasso => beta.lp_norm(1),
            Regularizer::GroupLasso { groups, weights } => groups
                .iter()
                .zip(weights)
                .map(|(g, w)| w * g.iter().map(|&j| beta[j] * beta[j]).sum::<f64>().sqrt())
                .sum(),
            Regularizer::GenLasso { d } => (d * beta).lp_norm(1),
            Regularizer::Slope { weights } => {
                let mut a: Vec<f64> = beta.iter().map(|b| b.abs()).collect();
                a.sort_by(|x, y| y.total_cmp(x));
                a.iter().zip(weights).map(|(a, w)| a * w).sum()
            }
            Regularizer::Linf => beta.amax(),
            Regularizer::Nuclear { p1, p2 } => unvec(beta, *p1, *p2).singular_values().sum(),
        }
    }

    /// Gradient of a smooth regularizer.
    pub fn gradient(&self, beta: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Regularizer::Ridge | Regularizer::FrobSq { .. } => Ok(beta * 2.0),
            other => Err(AloError::unsupported(other.name(), "gradient of a nonsmooth penalty")),
        }
    }

    /// Dual norm, for norm-type penalties.
    pub fn dual_norm(&self, v: &DVector<f64>) -> Result<f64> {
        match self {
            Regularizer::Lasso => Ok(v.amax()),
            Regularizer::Linf => Ok(v.lp_norm(1)),
            Regularizer::GroupLasso { groups, weights } => Ok(groups
                .iter()
                .zip(weights)
                .map(|(g, w)| g.iter().map(|&j| v[j] * v[j]).sum::<f64>().sqrt() / w)
                .fold(0.0, f64::max)),
            Regularizer::Slope { weights } => {
                let mut a: Vec<f64> = v.iter().map(|b| b.abs()).collect();
                a.sort_by(|x, y| y.total_cmp(x));
                let (mut sa, mut sw, mut best) = (0.0, 0.0, 0.0_f64);
                for (ai, wi) in a.iter().zip(weights) {
                    sa += ai;
                    sw += wi;
                    if sw > 0.0 {
                        best = best.max(sa / sw);
                    } else if sa > 0.0 {
                        best = f64::INFINITY;
                    }
                }
                Ok(best)
            }
            Regularizer::Nuclear { p1, p2 } => {
                Ok(unvec(v, *p1, *p2).singular_values().iter().cloned().fold(0.0, f64::max))
            }
            other => Err(AloError::unsupported(other.name(), "dual norm")),
        }
    }

    /// Proximal map of `t * R` at `z`.
    pub fn prox(&self, z: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        if !(t > 0.0) {
            return Err(AloError::Config(format!("prox step must be positive, got {t}")));
        }
        Ok(match self {
            Regularizer::Ridge | Regularizer::FrobSq { .. } => z / (1.0 + 2.0 * t),
            Regularizer::Lasso => z.map(|v| soft(v, t)),
            Regularizer::GroupLasso { groups, weights } => {
                let mut out = z.clone();
                for (g, w) in groups.iter().zip(weights) {
                    let norm = g.iter().map(|&j| z[j] * z[j]).sum::<f64>().sqrt();
                    let scale = if norm > 0.0 { (1.0 - t * w / norm).max(0.0) } else { 0.0 };
                    for &j in g {
                        out[j] = scale * z[j];
                    }
                }
                out
            }
            Regularizer::GenLasso { d } => prox_gen_lasso(d, z, t),
            Regularizer::Slope { weights } => {
                let scaled: Vec<f64> = weights.iter().map(|w| w * t).collect();
                prox_sorted_l1(z, &scaled).0
            }
            Regularizer::Linf => z - project_l1_ball(z, t),
            Regularizer::Nuclear { p1, p2 } => {
                if z.len() != p1 * p2 {
                    return Err(AloError::Shape(format!("{} entries for a {p1}x{p2} matrix", z.len())));
                }
                let svd = unvec(z, *p1, *p2).svd(true, true);
                let s = svd.singular_values.map(|s| (s - t).max(0.0));
                let u = svd.u.expect("U");
                let v_t = svd.v_t.expect("V^T");
                vec_rm(&(u * DMatrix::from_diagonal(&s) * v_t))
            }
        })
    }

    /// Jacobian of `prox(., t)` at `z`; fails near points where the map has a kink.
    pub fn prox_jacobian(&self, z: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
        let p = z.len();
        match self {
            Regularizer::Ridge | Regularizer::FrobSq { .. } => Ok(DMatrix::identity(p, p) / (1.0 + 2.0 * t)),
            Regularizer::Lasso => {
                let mut j = DMatrix::zeros(p, p);
                for i in 0..p {
                    if (z[i].abs() - t).abs() < BOUNDARY_TOL {
                        return Err(AloError::Degenerate(format!("coordinate {i} sits on the soft-threshold kink")));
                    }
                    if z[i].abs() > t {
                        j[(i, i)] = 1.0;
                    }
                }
                Ok(j)
            }
            Regularizer::GroupLasso { groups, weights } => {
                let mut j = DMatrix::zeros(p, p);
                for (l, (g, w)) in groups.iter().zip(weights).enumerate() {
                    let norm = g.iter().map(|&k| z[k] * z[k]).sum::<f64>().sqrt();
                    let tw = t * w;
                    if (norm - tw).abs() < BOUNDARY_TOL {
                        return Err(AloError::Degenerate(format!("group {l} sits on the shrinkage boundary")));
                    }
                    if norm > tw {
                        for (a, &ia) in g.iter().enumerate() {
                            for (b, &ib) in g.iter().enumerate() {
                                let eye = if a == b { 1.0 - tw / norm } else { 0.0 };
                                j[(ia, ib)] = eye + tw / norm.powi(3) * z[ia] * z[ib];
                            }
                        }
                    }
                }
                Ok(j)
            }
            Regularizer::Slope { weights } => {
                let scaled: Vec<f64> = weights.iter().map(|w| w * t).collect();
                let (_, blocks) = prox_sorted_l1(z, &scaled);
                for pair in blocks.windows(2) {
                    if pair[0].value > 0.0 && (pair[0].value - pair[1].value).abs() < BOUNDARY_TOL {
                        return Err(AloError::Degenerate("adjacent SLOPE clusters share a magnitude".into()));
                    }
                }
                let mut j = DMatrix::zeros(p, p);
                for b in &blocks {
                    if b.value.abs() < BOUNDARY_TOL {
                        if b.value != 0.0 || b.raw_mean.abs() < BOUNDARY_TOL {
                            return Err(AloError::Degenerate("a SLOPE cluster sits at zero".into()));
                        }
                        continue;
                    }
                    let len = b.members.len() as f64;
                    for &a in &b.members {
                        for &c in &b.members {
                            j[(a, c)] = z[a].signum() * z[c].signum() / len;
                        }
                    }
                }
                Ok(j)
            }
            Regularizer::Linf => {
                let l1 = z.lp_norm(1);
                if (l1 - t).abs() < BOUNDARY_TOL {
                    return Err(AloError::Degenerate("z sits on the l1-ball boundary".into()));
                }
                if l1 < t {
                    return Ok(DMatrix::zeros(p, p));
                }
                let tau = l1_ball_threshold(z, t);
                let mut active = Vec::new();
                for i in 0..p {
                    if (z[i].abs() - tau).abs() < BOUNDARY_TOL {
                        return Err(AloError::Degenerate(format!("coordinate {i} sits on the l1-ball projection kink")));
                    }
                    if z[i].abs() > tau {
                        active.push(i);
                    }
                }
                // J = I - d proj_{B1}, with d proj = diag(1_A) - s_A s_A^T / |A|.
                let mut j = DMatrix::identity(p, p);
                let k = active.len() as f64;
                for &a in &active {
                    j[(a, a)] -= 1.0;
                    for &c in &active {
                        j[(a, c)] += z[a].signum() * z[c].signum() / k;
                    }
                }
                Ok(j)
            }
            other => Err(AloError::unsupported(other.name(), "prox Jacobian")),
        }
    }

    /// Hessian of `R` at `beta` where it is twice differentiable, without the factor lambda.
    pub fn hessian(&self, beta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let p = beta.len();
        match self {
            Regularizer::Ridge | Regularizer::FrobSq { .. } => Ok(DMatrix::identity(p, p) * 2.0),
            Regularizer::Lasso => Ok(DMatrix::zeros(p, p)),
            Regularizer::GroupLasso { groups, weights } => {
                let mut h = DMatrix::zeros(p, p);
                for (g, w) in groups.iter().zip(weights) {
                    let norm = g.iter().map(|&k| beta[k] * beta[k]).sum::<f64>().sqrt();
                    if norm <= SUPPORT_TOL {
                        continue;
                    }
                    for &a in g {
                        for &b in g {
                            let eye = if a == b { 1.0 } else { 0.0 };
                            h[(a, b)] = w / norm * (eye - beta[a] * beta[b] / (norm * norm));
                        }
                    }
                }
                Ok(h)
            }
            Regularizer::Nuclear { p1, p2 } => spectral_hessian(&unvec(beta, *p1, *p2), |_| 1.0, |_| 0.0),
            other => Err(AloError::unsupported(other.name(), "Hessian")),
        }
    }

    /// Support, signs and face basis of a converged fit.
    pub fn active_set(&self, fit: &FitResult, data: &Dataset, tol: f64) -> Result<ActiveSetInfo> {
        if !fit.converged {
            return Err(AloError::StaleFit { residual: fit.grad_norm });
        }
        let beta = fit.beta_vec();
        let p = beta.len();
        let scale = beta.amax().max(1.0);
        match self {
            Regularizer::Ridge | Regularizer::FrobSq { .. } => Ok(ActiveSetInfo {
                indices: (0..p).collect(),
                signs: None,
                face_basis: None,
            }),
            Regularizer::Lasso => {
                let indices: Vec<usize> = (0..p).filter(|&j| beta[j].abs() > tol * scale).collect();
                let signs = indices.iter().map(|&j| beta[j].signum()).collect();
                Ok(ActiveSetInfo {
                    indices,
                    signs: Some(signs),
                    face_basis: None,
                })
            }
            Regularizer::GroupLasso { groups, .. } => {
                let mut indices = Vec::new();
                for g in groups {
                    let norm = g.iter().map(|&k| beta[k] * beta[k]).sum::<f64>().sqrt();
                    if norm > tol * scale {
                        indices.extend_from_slice(g);
                    }
                }
                indices.sort_unstable();
                Ok(ActiveSetInfo {
                    indices,
                    signs: None,
                    face_basis: None,
                })
            }
            Regularizer::GenLasso { d } => {
                let db = d * &beta;
                let dscale = db.amax().max(1.0);
                let indices: Vec<usize> = (0..d.nrows()).filter(|&i| db[i].abs() > tol * dscale).collect();
                let inactive: Vec<usize> = (0..d.nrows()).filter(|&i| db[i].abs() <= tol * dscale).collect();
                let d_inactive = linalg::select_rows(d, &inactive);
                let basis = linalg::null_space(&d_inactive, p, 1e-10);
                let signs = indices.iter().map(|&i| db[i].signum()).collect();
                Ok(ActiveSetInfo {
                    indices,
                    signs: Some(signs),
                    face_basis: Some(basis),
                })
            }
            Regularizer::Linf => {
                let top = beta.amax();
                if top <= tol {
                    return Ok(ActiveSetInfo {
                        indices: Vec::new(),
                        signs: Some(Vec::new()),
                        face_basis: Some(DMatrix::zeros(data.n(), 0)),
                    });
                }
                let free: Vec<usize> = (0..p).filter(|&j| beta[j].abs() < top - tol * scale).collect();
                let capped: Vec<usize> = (0..p).filter(|&j| beta[j].abs() >= top - tol * scale).collect();
                let mut w = DMatrix::zeros(data.n(), free.len() + 1);
                for (c, &j) in free.iter().enumerate() {
                    w.set_column(c, &data.x().column(j));
                }
                let mut last = DVector::zeros(data.n());
                for &j in &capped {
                    last += data.x().column(j) * beta[j].signum();
                }
                w.set_column(free.len(), &last);
                Ok(ActiveSetInfo {
                    indices: free,
                    signs: Some(capped.iter().map(|&j| beta[j].signum()).collect()),
                    face_basis: Some(w),
                })
            }
            Regularizer::Slope { .. } => {
                let clusters = slope_clusters(&beta, tol * scale);
                let mut w = DMatrix::zeros(data.n(), clusters.len());
                let mut indices = Vec::new();
                for (c, members) in clusters.iter().enumerate() {
                    let mut col = DVector::zeros(data.n());
                    for &j in members {
                        col += data.x().column(j) * beta[j].signum();
                        indices.push(j);
                    }
                    w.set_column(c, &col);
                }
                indices.sort_unstable();
                let signs = indices.iter().map(|&j| beta[j].signum()).collect();
                Ok(ActiveSetInfo {
                    indices,
                    signs: Some(signs),
                    face_basis: Some(w),
                })
            }
            Regularizer::Nuclear { p1, p2 } => {
                let s = unvec(&beta, *p1, *p2).singular_values();
                let smax = s.iter().cloned().fold(0.0, f64::max);
                let m = s.iter().filter(|&&v| smax > 0.0 && v > tol * smax).count();
                Ok(ActiveSetInfo {
                    indices: (0..m).collect(),
                    signs: None,
                    face_basis: None,
                })
            }
        }
    }
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// First-difference matrix, `(p - 1) x p`, rows `e_{i+1} - e_i`.
pub fn first_difference(p: usize) -> DMatrix<f64> {
    let m = p.saturating_sub(1);
    let mut d = DMatrix::zeros(m, p);
    for i in 0..m {
        d[(i, i)] = -1.0;
        d[(i, i + 1)] = 1.0;
    }
    d
}

/// Reads a `D` matrix from `row,col,value` triplets (0-based, optional header).
pub fn d_from_triplets(path: &Path, p: usize) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| AloError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    let mut triplets = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| AloError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if rec.len() != 3 {
            return Err(AloError::Parse(format!("triplet line {} has {} fields", k + 1, rec.len())));
        }
        let parsed = (rec[0].parse::<usize>(), rec[1].parse::<usize>(), rec[2].parse::<f64>());
        match parsed {
            (Ok(i), Ok(j), Ok(v)) => triplets.push((i, j, v)),
            _ if k == 0 => continue,
            _ => return Err(AloError::Parse(format!("cannot parse triplet line {}", k + 1))),
        }
    }
    let m = triplets.iter().map(|t| t.0 + 1).max().unwrap_or(0);
    let mut d = DMatrix::zeros(m, p);
    for (i, j, v) in triplets {
        if j >= p {
            return Err(AloError::dim(format!("triplet column {j} out of range for p = {p}")));
        }
        d[(i, j)] += v;
    }
    Ok(d)
}

/// Prox of `t ||D u||_1` by accelerated projected gradient on the box-constrained dual.
fn prox_gen_lasso(d: &DMatrix<f64>, z: &DVector<f64>, t: f64) -> DVector<f64> {
    let m = d.nrows();
    if m == 0 {
        return z.clone();
    }
    let lip = linalg::spectral_norm_sq(d, 7).max(1e-12);
    let mut v = DVector::zeros(m);
    let mut w = v.clone();
    let mut s = 1.0_f64;
    let dz = d * z;
    let gram = d * d.transpose();
    for _ in 0..200_000 {
        let grad = &gram * &w - &dz;
        let next = (&w - grad / lip).map(|x| x.clamp(-t, t));
        let s_next = 0.5 * (1.0 + (1.0 + 4.0 * s * s).sqrt());
        let change = (&next - &v).amax();
        w = &next + (&next - &v) * ((s - 1.0) / s_next);
        v = next;
        s = s_next;
        if change < 1e-15 * (1.0 + t) {
            break;
        }
    }
    z - d.transpose() * v
}

/// Euclidean projection onto `{ v : ||v||_1 <= r }`.
pub fn project_l1_ball(z: &DVector<f64>, r: f64) -> DVector<f64> {
    if z.lp_norm(1) <= r {
        return z.clone();
    }
    let tau = l1_ball_threshold(z, r);
    z.map(|v| soft(v, tau))
}

/// Threshold `tau` with `sum (|z_i| - tau)_+ = r`, for `||z||_1 > r`.
fn l1_ball_threshold(z: &DVector<f64>, r: f64) -> f64 {
    let mut a: Vec<f64> = z.iter().map(|v| v.abs()).collect();
    a.sort_by(|x, y| y.total_cmp(x));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (k, &ak) in a.iter().enumerate() {
        cum += ak;
        let cand = (cum - r) / (k + 1) as f64;
        if ak > cand {
            tau = cand;
        } else {
            break;
        }
    }
    tau.max(0.0)
}

/// One pooled block of the sorted-l1 prox.
#[derive(Debug, Clone)]
pub struct SlopeBlock {
    /// Original coordinates in the block.
    pub members: Vec<usize>,
    /// Common magnitude of the block after clipping at zero.
    pub value: f64,
    /// Block mean before clipping.
    pub raw_mean: f64,
}

/// Prox of the sorted l1 norm with (already scaled) nonincreasing weights,
/// by pool-adjacent-violators on the sorted magnitudes.
pub fn prox_sorted_l1(z: &DVector<f64>, weights: &[f64]) -> (DVector<f64>, Vec<SlopeBlock>) {
    let p = z.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| z[b].abs().total_cmp(&z[a].abs()).then(a.cmp(&b)));
    // Blocks over sorted positions: (start, len, sum).
    let mut stack: Vec<(usize, usize, f64)> = Vec::with_capacity(p);
    for (k, &j) in order.iter().enumerate() {
        stack.push((k, 1, z[j].abs() - weights[k]));
        while stack.len() >= 2 {
            let (_, l1, s1) = stack[stack.len() - 1];
            let (_, l0, s0) = stack[stack.len() - 2];
            if s0 / l0 as f64 <= s1 / l1 as f64 {
                stack.pop();
                let top = stack.last_mut().expect("two blocks");
                top.1 += l1;
                top.2 += s1;
            } else {
                break;
            }
        }
    }
    let mut out = DVector::zeros(p);
    let mut blocks = Vec::with_capacity(stack.len());
    for (start, len, sum) in stack {
        let raw_mean = sum / len as f64;
        let value = raw_mean.max(0.0);
        let members: Vec<usize> = order[start..start + len].to_vec();
        for &j in &members {
            out[j] = z[j].signum() * value;
        }
        blocks.push(SlopeBlock {
            members,
            value,
            raw_mean,
        });
    }
    (out, blocks)
}

/// Nonzero clusters of equal magnitude in `beta`, largest magnitude first.
pub fn slope_clusters(beta: &DVector<f64>, tol: f64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..beta.len()).filter(|&j| beta[j].abs() > tol).collect();
    order.sort_by(|&a, &b| beta[b].abs().total_cmp(&beta[a].abs()).then(a.cmp(&b)));
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for j in order {
        match clusters.last_mut() {
            Some(c) if (beta[c[0]].abs() - beta[j].abs()).abs() <= tol => c.push(j),
            _ => clusters.push(vec![j]),
        }
    }
    clusters
}

/// Coordinates covered by tight prefixes of the SLOPE dual constraint:
/// with `a = |X^T theta|` sorted descending, prefix `k` is tight when
/// `sum_{i<=k} a_(i) / sum_{i<=k} w_i >= 1 - tol`. Ties sort by index.
pub fn slope_tight_prefixes(a: &[f64], weights: &[f64], tol: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&i, &j| a[j].abs().total_cmp(&a[i].abs()).then(i.cmp(&j)));
    let (mut sa, mut sw) = (0.0, 0.0);
    let mut last_tight = None;
    for (k, &j) in order.iter().enumerate() {
        sa += a[j].abs();
        sw += weights[k];
        if sw > 0.0 && sa / sw >= 1.0 - tol {
            last_tight = Some(k);
        }
    }
    let mut e: Vec<usize> = match last_tight {
        Some(k) => order[..=k].to_vec(),
        None => Vec::new(),
    };
    e.sort_unstable();
    e
}

/// Hessian of `B -> sum_i f(sigma_i(B))` in row-major `vec` coordinates.
///
/// `f1`, `f2` are the first and second derivatives of `f`. Needs distinct,
/// nonzero singular values.
pub fn spectral_hessian(b: &DMatrix<f64>, f1: impl Fn(f64) -> f64, f2: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    let (p1, p2) = b.shape();
    let r = p1.min(p2);
    let (u, s, v) = full_svd(b);
    let smax = s.iter().cloned().fold(0.0, f64::max).max(1.0);
    for a in 0..r {
        if s[a] <= 1e-8 * smax {
            return Err(AloError::DegenerateSpectrum(format!("singular value {a} is zero")));
        }
        for c in (a + 1)..r {
            if (s[a] - s[c]).abs() <= 1e-8 * smax {
                return Err(AloError::DegenerateSpectrum(format!("singular values {a} and {c} coincide")));
            }
        }
    }
    let p = p1 * p2;
    // Columns of q are vec(u_k v_l^T), indexed k * p2 + l.
    let mut q = DMatrix::zeros(p, p);
    for k in 0..p1 {
        for l in 0..p2 {
            let m = u.column(k) * v.column(l).transpose();
            q.set_column(k * p2 + l, &vec_rm(&m));
        }
    }
    let mut a = DMatrix::zeros(p, p);
    for k in 0..p1 {
        for l in 0..p2 {
            let idx = k * p2 + l;
            if k == l {
                a[(idx, idx)] = f2(s[k]);
            } else if k < r && l < r {
                let (ss, st) = (s[k], s[l]);
                let den = ss * ss - st * st;
                a[(idx, idx)] = (ss * f1(ss) - st * f1(st)) / den;
                a[(idx, l * p2 + k)] = (st * f1(ss) - ss * f1(st)) / den;
            } else {
                let small = k.min(l);
                a[(idx, idx)] = f1(s[small]) / s[small];
            }
        }
    }
    let h = &q * a * q.transpose();
    Ok((&h + h.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::normal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn randn(rng: &mut ChaCha8Rng, p: usize, scale: f64) -> DVector<f64> {
        DVector::from_fn(p, |_, _| scale * normal(rng))
    }

    fn catalog() -> Vec<Regularizer> {
        let mut d = first_difference(6);
        d[(2, 0)] = 0.5;
        vec![
            Regularizer::Ridge,
            Regularizer::Lasso,
            Regularizer::GroupLasso {
                groups: vec![vec![0, 1], vec![2, 3, 4], vec![5]],
                weights: vec![1.0, 1.5, 0.7],
            },
            Regularizer::GenLasso { d },
            Regularizer::Slope {
                weights: vec![2.0, 1.6, 1.2, 1.0, 0.5, 0.1],
            },
            Regularizer::Linf,
            Regularizer::Nuclear { p1: 2, p2: 3 },
            Regularizer::FrobSq { p1: 2, p2: 3 },
        ]
    }

    #[test]
    fn prox_examples() {
        assert_eq!(Regularizer::Lasso.prox(&v(&[3.0, -0.5]), 1.0).unwrap(), v(&[2.0, 0.0]));
        let g = Regularizer::GroupLasso {
            groups: vec![vec![0, 1]],
            weights: vec![5.0],
        };
        assert_eq!(g.prox(&v(&[3.0, 4.0]), 1.0).unwrap(), v(&[0.0, 0.0]));
        let nuc = Regularizer::Nuclear { p1: 2, p2: 2 };
        let out = nuc.prox(&v(&[3.0, 0.0, 0.0, 0.5]), 1.0).unwrap();
        assert!((out - v(&[2.0, 0.0, 0.0, 0.0])).amax() < 1e-12);
        assert!(matches!(
            Regularizer::Nuclear { p1: 2, p2: 2 }.prox(&v(&[1.0, 2.0, 3.0]), 1.0),
            Err(AloError::Shape(_))
        ));
    }

    #[test]
    fn nuclear_prox_matches_eigen_oracle_on_symmetric_input() {
        // For symmetric Z, singular values are |eigenvalues|: threshold those and rebuild.
        let z = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, -0.3, 0.5, -1.5, 0.2, -0.3, 0.2, 0.4]);
        let eig = z.clone().symmetric_eigen();
        let shrunk = eig.eigenvalues.map(|l: f64| l.signum() * (l.abs() - 0.6).max(0.0));
        let oracle = &eig.eigenvectors * DMatrix::from_diagonal(&shrunk) * eig.eigenvectors.transpose();
        let out = Regularizer::Nuclear { p1: 3, p2: 3 }.prox(&vec_rm(&z), 0.6).unwrap();
        assert!((unvec(&out, 3, 3) - oracle).amax() < 1e-10);
    }

    #[test]
    fn jacobian_examples() {
        assert_eq!(
            Regularizer::Lasso.prox_jacobian(&v(&[3.0, 0.2]), 1.0).unwrap(),
            DMatrix::from_diagonal(&v(&[1.0, 0.0]))
        );
        let r = Regularizer::Ridge.prox_jacobian(&v(&[1.0, 2.0, 3.0]), 0.5).unwrap();
        assert_eq!(r, DMatrix::identity(3, 3) * 0.5);
        let g = Regularizer::GroupLasso {
            groups: vec![vec![0, 1]],
            weights: vec![1.0],
        };
        let j = g.prox_jacobian(&v(&[0.0, 2.0]), 1.0).unwrap();
        assert!((j - DMatrix::from_diagonal(&v(&[0.5, 1.0]))).amax() < 1e-15);
        assert!(matches!(Regularizer::Lasso.prox_jacobian(&v(&[1.0]), 1.0), Err(AloError::Degenerate(_))));
    }

    #[test]
    fn hessian_examples() {
        let b = v(&[0.7, 0.0, -0.1]);
        assert_eq!(Regularizer::Ridge.hessian(&b).unwrap(), DMatrix::identity(3, 3) * 2.0);
        assert_eq!(Regularizer::Lasso.hessian(&b).unwrap(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn frobenius_spectral_hessian_is_twice_identity() {
        // sigma = (2, 1) with f = sigma^2: diagonal couplings (2*4 - 1*2)/3 = 2, cross terms 0.
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let h = spectral_hessian(&b, |s| 2.0 * s, |_| 2.0).unwrap();
        assert!((h - DMatrix::identity(4, 4) * 2.0).amax() < 1e-12);
    }

    /// Gradient of sum sigma^4 = ||B^T B||_F^2 is 4 B B^T B.
    fn quartic_grad(b: &DMatrix<f64>) -> DMatrix<f64> {
        b * b.transpose() * b * 4.0
    }

    #[test]
    fn spectral_hessian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (p1, p2) in [(2, 2), (2, 4), (3, 2), (3, 3)] {
            let b = DMatrix::from_fn(p1, p2, |_, _| normal(&mut rng));
            let h = spectral_hessian(&b, |s| 4.0 * s.powi(3), |s| 12.0 * s * s).unwrap();
            assert!((&h - h.transpose()).amax() <= 1e-10);
            let eps = 1e-5;
            for k in 0..p1 * p2 {
                let mut e = DVector::zeros(p1 * p2);
                e[k] = eps;
                let plus = vec_rm(&quartic_grad(&(&b + unvec(&e, p1, p2))));
                let minus = vec_rm(&quartic_grad(&(&b - unvec(&e, p1, p2))));
                let fd = (plus - minus) / (2.0 * eps);
                let col = h.column(k).into_owned();
                assert!((fd - col).amax() <= 1e-4 * (1.0 + h.amax()), "shape {p1}x{p2} column {k}");
            }
        }
    }

    #[test]
    fn spectral_hessian_rejects_repeated_values() {
        let b = DMatrix::identity(2, 2);
        assert!(matches!(spectral_hessian(&b, |_| 1.0, |_| 0.0), Err(AloError::DegenerateSpectrum(_))));
    }

    #[test]
    fn nonexpansive_every_regularizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for reg in catalog() {
            for _ in 0..200 {
                let z = randn(&mut rng, 6, 2.0);
                let w = randn(&mut rng, 6, 2.0);
                let pz = reg.prox(&z, 0.8).unwrap();
                let pw = reg.prox(&w, 0.8).unwrap();
                let d = &pz - &pw;
                let lhs = d.norm_squared();
                let rhs = d.dot(&(&z - &w));
                assert!(lhs <= rhs + 1e-9, "{}: {lhs} > {rhs}", reg.name());
            }
        }
    }

    #[test]
    fn prox_minimizes_its_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = 0.7;
        for reg in catalog() {
            let z = randn(&mut rng, 6, 2.0);
            let u = reg.prox(&z, t).unwrap();
            let obj = |x: &DVector<f64>| 0.5 * (&z - x).norm_squared() + t * reg.value(x);
            let best = obj(&u);
            for _ in 0..200 {
                let delta = randn(&mut rng, 6, 0.05);
                assert!(obj(&(&u + delta)) >= best - 1e-10, "{}", reg.name());
            }
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = 0.6;
        for reg in catalog().into_iter().filter(|r| r.has_prox_jacobian()) {
            let mut checked = 0;
            while checked < 50 {
                let z = randn(&mut rng, 6, 2.0);
                let Ok(j) = reg.prox_jacobian(&z, t) else { continue };
                // Keep away from kinks so central differences stay on one piece.
                let eps = 1e-6;
                let mut fd = DMatrix::zeros(6, 6);
                for k in 0..6 {
                    let mut e = DVector::zeros(6);
                    e[k] = eps;
                    let col = (reg.prox(&(&z + &e), t).unwrap() - reg.prox(&(&z - &e), t).unwrap()) / (2.0 * eps);
                    fd.set_column(k, &col);
                }
                if (&fd - &j).amax() > 1e-5 {
                    // A kink within eps of z would also break differences; require a clean second look.
                    let jitter = reg.prox_jacobian(&(&z * (1.0 + 1e-4)), t);
                    assert!(jitter.is_err(), "{}: jacobian mismatch {:.3e}", reg.name(), (&fd - &j).amax());
                    continue;
                }
                checked += 1;
            }
        }
    }

    #[test]
    fn jacobian_spectrum_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for reg in catalog().into_iter().filter(|r| r.has_prox_jacobian()) {
            for _ in 0..50 {
                let z = randn(&mut rng, 6, 2.0);
                let Ok(j) = reg.prox_jacobian(&z, 0.6) else { continue };
                assert!((&j - j.transpose()).amax() < 1e-12);
                for ev in j.symmetric_eigen().eigenvalues.iter() {
                    assert!(*ev >= -1e-12 && *ev <= 1.0 + 1e-12, "{}: eigenvalue {ev}", reg.name());
                }
            }
        }
    }

    #[test]
    fn slope_with_equal_weights_is_soft_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let z = randn(&mut rng, 9, 2.0);
            let slope = Regularizer::Slope { weights: vec![1.3; 9] };
            let a = slope.prox(&z, 0.9).unwrap();
            let b = Regularizer::Lasso.prox(&z, 1.3 * 0.9).unwrap();
            assert!((a - b).amax() <= 1e-12);
        }
    }

    /// Exhaustive sorted-l1 prox for p = 3. The minimizer keeps the signs and order
    /// of `|z|`, so it is constant on consecutive blocks of the sorted magnitudes; every
    /// block pattern (with the last block optionally clamped at zero) is tried and the
    /// feasible candidate with the smallest objective wins.
    fn slope_prox_oracle(z: &DVector<f64>, w: &[f64]) -> DVector<f64> {
        let reg = Regularizer::Slope { weights: w.to_vec() };
        let obj = |x: &DVector<f64>| 0.5 * (z - x).norm_squared() + reg.value(x);
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| z[b].abs().total_cmp(&z[a].abs()));
        let patterns: [&[usize]; 4] = [&[1, 1, 1], &[2, 1], &[1, 2], &[3]];
        let mut best: Option<(f64, DVector<f64>)> = None;
        for pat in patterns {
            for clamp_last in [false, true] {
                let mut mags = [0.0; 3];
                let mut k = 0;
                for (b, &len) in pat.iter().enumerate() {
                    let mean = (k..k + len).map(|i| z[order[i]].abs() - w[i]).sum::<f64>() / len as f64;
                    let val = if clamp_last && b == pat.len() - 1 { 0.0 } else { mean };
                    for m in mags.iter_mut().skip(k).take(len) {
                        *m = val;
                    }
                    k += len;
                }
                if mags[2] < 0.0 || mags[0] < mags[1] || mags[1] < mags[2] {
                    continue;
                }
                let mut x = DVector::zeros(3);
                for i in 0..3 {
                    x[order[i]] = z[order[i]].signum() * mags[i];
                }
                let f = obj(&x);
                if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                    best = Some((f, x));
                }
            }
        }
        best.expect("the all-zero pattern is always feasible").1
    }

    #[test]
    fn slope_prox_matches_direct_minimization() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = [1.5, 0.9, 0.2];
        for _ in 0..20 {
            let z = randn(&mut rng, 3, 2.0);
            let fast = prox_sorted_l1(&z, &w).0;
            let slow = slope_prox_oracle(&z, &w);
            assert!((fast - slow).amax() < 1e-6);
        }
    }

    #[test]
    fn linf_prox_is_moreau_complement_of_l1_projection() {
        let z = v(&[3.0, -1.0, 0.5]);
        // Projection of z onto the l1 ball of radius 2 is (2, 0, 0), so prox = (1, -1, 0.5).
        let out = Regularizer::Linf.prox(&z, 2.0).unwrap();
        assert!((out - v(&[1.0, -1.0, 0.5])).amax() < 1e-12);
        assert_eq!(Regularizer::Linf.prox(&v(&[0.1, -0.2]), 1.0).unwrap(), v(&[0.0, 0.0]));
    }

    #[test]
    fn slope_tight_prefix_example() {
        assert_eq!(slope_tight_prefixes(&[2.0, 1.0], &[2.0, 1.0], 1e-8), vec![0, 1]);
        assert_eq!(slope_tight_prefixes(&[2.0, 0.5], &[2.0, 1.0], 1e-8), vec![0]);
        assert!(slope_tight_prefixes(&[1.0, 0.5], &[2.0, 1.0], 1e-8).is_empty());
    }

    fn fit_of(beta: Vec<f64>) -> FitResult {
        FitResult {
            beta,
            intercept: None,
            theta: None,
            aux: None,
            objective: 0.0,
            iterations: 1,
            grad_norm: 0.0,
            converged: true,
        }
    }

    fn toy_data(p: usize) -> Dataset {
        let x = DMatrix::from_fn(4, p, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        Dataset::new(x, DVector::zeros(4), crate::data::TaskKind::Regression).unwrap()
    }

    #[test]
    fn active_set_examples() {
        let data = toy_data(3);
        let info = Regularizer::Lasso.active_set(&fit_of(vec![0.7, 0.0, -0.1]), &data, SUPPORT_TOL).unwrap();
        assert_eq!(info.indices, vec![0, 2]);
        assert_eq!(info.signs, Some(vec![1.0, -1.0]));

        let mut stale = fit_of(vec![0.0; 3]);
        stale.converged = false;
        assert!(matches!(Regularizer::Lasso.active_set(&stale, &data, SUPPORT_TOL), Err(AloError::StaleFit { .. })));

        let fused = Regularizer::fused(3);
        let info = fused.active_set(&fit_of(vec![0.4, 0.4, 0.4]), &data, SUPPORT_TOL).unwrap();
        let b = info.face_basis.unwrap();
        assert_eq!(b.ncols(), 1);
        assert!((b.column(0).map(|x| x.abs()) - DVector::from_element(3, 1.0 / 3f64.sqrt())).amax() < 1e-12);

        let nuc_data = toy_data(4).with_matrix_shape(2, 2).unwrap();
        let nuc = Regularizer::Nuclear { p1: 2, p2: 2 };
        let info = nuc.active_set(&fit_of(vec![5.0, 0.0, 0.0, 4e-3 * 5.0]), &nuc_data, RANK_TOL).unwrap();
        assert_eq!(info.indices.len(), 2);
    }

    #[test]
    fn linf_face_basis_combines_capped_columns() {
        let data = toy_data(3);
        let info = Regularizer::Linf.active_set(&fit_of(vec![1.0, -1.0, 0.3]), &data, SUPPORT_TOL).unwrap();
        assert_eq!(info.indices, vec![2]);
        let w = info.face_basis.unwrap();
        let expected_last = data.x().column(0) - data.x().column(1);
        assert_eq!(w.column(0), data.x().column(2));
        assert_eq!(w.column(1), expected_last);
    }

    #[test]
    fn group_validation() {
        let bad = Regularizer::GroupLasso {
            groups: vec![vec![0, 1], vec![1, 2]],
            weights: vec![1.0, 1.0],
        };
        assert!(bad.validate(3, None).is_err());
        assert!(Regularizer::consecutive_groups(7, 3).validate(7, None).is_ok());
        let slope = Regularizer::Slope { weights: vec![1.0, 2.0] };
        assert!(slope.validate(2, None).is_err());
    }

    #[test]
    fn triplets_roundtrip() {
        let dir = std::env::temp_dir().join(format!("alo-core-trip-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("d.csv");
        std::fs::write(&path, "row,col,value\n0,0,-1\n0,1,1\n1,1,-1\n1,2,1\n").unwrap();
        assert_eq!(d_from_triplets(&path, 3).unwrap(), first_difference(3));
    }
}
