//! Convex solvers producing [`FitResult`]s.
//!
//! Proximal and projected gradient run an accelerated scheme with monotone
//! restarts and backtracking. Once the iterate has settled on a face of the
//! regularizer or constraint, a Newton solve restricted to that face gives
//! the exact optimum, which is accepted only if it passes the fixed-point
//! (or KKT) test. Polished fits make leave-one-out refits cheap and exact.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraints::Constraint;
use crate::data::{Dataset, FitResult, ModelSpec};
use crate::error::{AloError, Result};
use crate::linalg::{self, cholesky_jitter, select_columns};
use crate::losses::{smooth_dual, Loss, SINGULARITY_TOL};
use crate::regularizers::{project_l1_ball, slope_clusters, Regularizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Relative fixed-point residual at which a fit counts as converged.
    pub tol: f64,
    /// ADMM penalty parameter.
    pub rho: f64,
    /// Seed for the power iteration behind step sizes.
    pub seed: u64,
    /// Try exact Newton solves on the detected face.
    pub polish: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iter: 50_000,
            tol: 1e-10,
            rho: 1.0,
            seed: 0,
            polish: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || !(self.rho > 0.0) {
            return Err(AloError::Config("solver needs tol > 0, max_iter >= 1 and rho > 0".into()));
        }
        Ok(())
    }
}

pub fn fit(spec: &ModelSpec, data: &Dataset, cfg: &SolverConfig) -> Result<FitResult> {
    fit_warm(spec, data, cfg, None)
}

/// Fits `spec`, optionally starting from a previous solution of a nearby problem.
pub fn fit_warm(spec: &ModelSpec, data: &Dataset, cfg: &SolverConfig, warm: Option<&FitResult>) -> Result<FitResult> {
    spec.validate(data)?;
    cfg.validate()?;
    let warm = warm.filter(|w| w.beta.len() == data.p());
    if spec.loss == Loss::Hinge {
        return subgradient_hinge_solve(spec, data, cfg, warm);
    }
    if spec.constraint.is_some() {
        return projected_grad_solve(spec, data, cfg, warm);
    }
    match (&spec.reg, spec.loss) {
        (Regularizer::GenLasso { .. }, Loss::Squared) => gen_lasso_admm(spec, data, cfg, warm),
        (Regularizer::GenLasso { .. }, other) => Err(AloError::unsupported(
            "gen_lasso solver",
            format!("{} loss", other.name()),
        )),
        (Regularizer::Linf, Loss::Squared) => admm_linf_dual(spec, data, cfg, warm).map(|(f, _)| f),
        _ => prox_grad_solve(spec, data, cfg, warm),
    }
}

/// Fits a descending-lambda path with warm starts; results follow the order of `lambdas`.
pub fn fit_path(spec: &ModelSpec, data: &Dataset, lambdas: &[f64], cfg: &SolverConfig) -> Vec<Result<FitResult>> {
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));
    let mut out: Vec<Option<Result<FitResult>>> = (0..lambdas.len()).map(|_| None).collect();
    let mut prev: Option<FitResult> = None;
    for k in order {
        let res = fit_warm(&spec.with_lambda(lambdas[k]), data, cfg, prev.as_ref());
        if let Ok(f) = &res {
            prev = Some(f.clone());
        }
        out[k] = Some(res);
    }
    out.into_iter().map(|r| r.expect("every slot filled")).collect()
}

// ---------------------------------------------------------------------------
// Smooth part

fn loss_sum(loss: Loss, eta: &DVector<f64>, y: &DVector<f64>) -> f64 {
    eta.iter().zip(y.iter()).map(|(&u, &v)| loss.value(u, v)).sum()
}

fn max_curvature(loss: Loss) -> f64 {
    match loss {
        Loss::Logistic => 0.25,
        _ => 1.0,
    }
}

/// `sum_j l(x_j^T beta + b0; y_j) + ridge * ||beta||^2` over `w = (beta, b0)`.
struct Smooth<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    loss: Loss,
    intercept: bool,
    ridge: f64,
}

impl Smooth<'_> {
    fn p(&self) -> usize {
        self.x.ncols()
    }

    fn eta(&self, w: &DVector<f64>) -> DVector<f64> {
        let p = self.p();
        let mut e = self.x * w.rows(0, p);
        if self.intercept {
            e.add_scalar_mut(w[p]);
        }
        e
    }

    fn value(&self, w: &DVector<f64>, eta: &DVector<f64>) -> f64 {
        let mut v = loss_sum(self.loss, eta, self.y);
        if self.ridge != 0.0 {
            v += self.ridge * w.rows(0, self.p()).norm_squared();
        }
        v
    }

    fn grad(&self, w: &DVector<f64>, eta: &DVector<f64>) -> DVector<f64> {
        let p = self.p();
        let r = DVector::from_fn(eta.len(), |j, _| self.loss.d1(eta[j], self.y[j]));
        let gb = self.x.tr_mul(&r) + w.rows(0, p) * (2.0 * self.ridge);
        let mut g = DVector::zeros(w.len());
        g.rows_mut(0, p).copy_from(&gb);
        if self.intercept {
            g[p] = r.sum();
        }
        g
    }

    fn lipschitz(&self, seed: u64) -> f64 {
        let n = self.x.nrows() as f64;
        let xs = linalg::spectral_norm_sq(self.x, seed);
        max_curvature(self.loss) * (xs + if self.intercept { n } else { 0.0 }) + 2.0 * self.ridge
    }
}

type ProxFn<'a> = dyn Fn(&DVector<f64>, f64) -> DVector<f64> + 'a;
type PolishFn<'a> = dyn Fn(&DVector<f64>) -> Option<DVector<f64>> + 'a;

fn prox_w(prox: &ProxFn<'_>, w: &DVector<f64>, p: usize, step: f64) -> DVector<f64> {
    let mut out = w.clone();
    out.rows_mut(0, p).copy_from(&prox(&w.rows(0, p).into_owned(), step));
    out
}

fn fixed_point_residual(sm: &Smooth<'_>, prox: &ProxFn<'_>, w: &DVector<f64>, lip: f64) -> f64 {
    let eta = sm.eta(w);
    let g = sm.grad(w, &eta);
    let z = prox_w(prox, &(w - g / lip), sm.p(), 1.0 / lip);
    (w - z).norm() / w.norm().max(1.0)
}

struct ApgOutcome {
    w: DVector<f64>,
    iters: usize,
    residual: f64,
    converged: bool,
}

/// Accelerated proximal gradient with monotone restarts, backtracking and optional polishing.
fn apg(
    sm: &Smooth<'_>,
    prox: &ProxFn<'_>,
    hval: &dyn Fn(&DVector<f64>) -> f64,
    w0: DVector<f64>,
    cfg: &SolverConfig,
    polish: Option<&PolishFn<'_>>,
) -> ApgOutcome {
    let p = sm.p();
    let mut lip = sm.lipschitz(cfg.seed).max(1e-12);
    let lip0 = lip;
    let total = |w: &DVector<f64>, eta: &DVector<f64>| sm.value(w, eta) + hval(&w.rows(0, p).into_owned());

    // A polished point must also not be worse than the iterate it came from; the
    // relative residual alone is blind to runaway solutions on singular faces.
    let try_polish = |w: &DVector<f64>, lip: f64| -> Option<(DVector<f64>, f64)> {
        let cand = polish?(w)?;
        let f_old = total(w, &sm.eta(w));
        let f_new = total(&cand, &sm.eta(&cand));
        if !(f_new <= f_old + 1e-9 * f_old.abs().max(1.0)) {
            return None;
        }
        let res = fixed_point_residual(sm, prox, &cand, lip);
        (res <= cfg.tol).then_some((cand, res))
    };

    // Project the start so the objective is finite and the iterate feasible.
    let mut w = prox_w(prox, &w0, p, f64::MIN_POSITIVE);
    if w.iter().any(|v| !v.is_finite()) {
        w = DVector::zeros(w0.len());
    }
    if let Some((cand, res)) = cfg.polish.then(|| try_polish(&w, lip0)).flatten() {
        return ApgOutcome {
            w: cand,
            iters: 0,
            residual: res,
            converged: true,
        };
    }
    let mut eta = sm.eta(&w);
    let mut fw = total(&w, &eta);
    let mut y = w.clone();
    let mut eta_y = eta.clone();
    let mut t = 1.0_f64;
    let mut gate = 1e-2;
    let mut residual = f64::INFINITY;

    for it in 1..=cfg.max_iter {
        let g = sm.grad(&y, &eta_y);
        let fy = sm.value(&y, &eta_y);
        let (z, eta_z, fz) = loop {
            let z = prox_w(prox, &(&y - &g / lip), p, 1.0 / lip);
            let eta_z = sm.eta(&z);
            let fz = sm.value(&z, &eta_z);
            let d = &z - &y;
            let bound = fy + g.dot(&d) + 0.5 * lip * d.norm_squared();
            if fz <= bound + 1e-12 * fy.abs().max(1.0) || lip > 1e30 {
                break (z, eta_z, fz);
            }
            lip *= 2.0;
        };
        let fz_total = fz + hval(&z.rows(0, p).into_owned());
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        // A plain gradient step right after a restart is accepted even if rounding
        // makes it look uphill; otherwise the iteration stalls at the noise floor.
        if fz_total <= fw || t == 1.0 {
            let mom = (t - 1.0) / t_next;
            let w_prev = std::mem::replace(&mut w, z);
            let eta_prev = std::mem::replace(&mut eta, eta_z);
            fw = fz_total;
            y = &w + (&w - &w_prev) * mom;
            eta_y = &eta + (&eta - &eta_prev) * mom;
            t = t_next;
        } else {
            y = w.clone();
            eta_y = eta.clone();
            t = 1.0;
        }
        if it % 10 == 0 || it == cfg.max_iter {
            residual = fixed_point_residual(sm, prox, &w, lip0);
            if residual <= cfg.tol {
                return ApgOutcome {
                    w,
                    iters: it,
                    residual,
                    converged: true,
                };
            }
            if cfg.polish && polish.is_some() && residual < gate {
                if let Some((cand, res)) = try_polish(&w, lip0) {
                    return ApgOutcome {
                        w: cand,
                        iters: it,
                        residual: res,
                        converged: true,
                    };
                }
                gate = residual / 10.0;
            }
        }
    }
    ApgOutcome {
        w,
        iters: cfg.max_iter,
        residual,
        converged: false,
    }
}

// ---------------------------------------------------------------------------
// Face Newton polish

/// A face on which the penalty is smooth: `beta = B gamma`, with penalty
/// `lambda c^T gamma + quad ||gamma||^2 + lambda sum_l w_l ||gamma_{g_l}||`.
struct Face {
    basis: FaceBasis,
    lin: DVector<f64>,
    quad: f64,
    groups: Vec<(Vec<usize>, f64)>,
}

enum FaceBasis {
    Select(Vec<usize>),
    Dense(DMatrix<f64>),
}

impl Face {
    fn dim(&self) -> usize {
        self.lin.len()
    }

    fn design(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.basis {
            FaceBasis::Select(idx) => select_columns(x, idx),
            FaceBasis::Dense(b) => x * b,
        }
    }

    fn lift(&self, gamma: &DVector<f64>, p: usize) -> DVector<f64> {
        match &self.basis {
            FaceBasis::Select(idx) => {
                let mut beta = DVector::zeros(p);
                for (k, &j) in idx.iter().enumerate() {
                    beta[j] = gamma[k];
                }
                beta
            }
            FaceBasis::Dense(b) => b * gamma,
        }
    }

    fn restrict(&self, beta: &DVector<f64>) -> DVector<f64> {
        match &self.basis {
            FaceBasis::Select(idx) => linalg::select_entries(beta, idx),
            FaceBasis::Dense(b) => {
                // Least-squares coordinates of beta in the face.
                let gram = b.tr_mul(b);
                match cholesky_jitter(&gram, "face coordinates") {
                    Ok(f) => f.solve_vec(&b.tr_mul(beta)),
                    Err(_) => DVector::zeros(b.ncols()),
                }
            }
        }
    }

    /// Value, gradient and Hessian of the penalty in face coordinates.
    fn penalty(&self, gamma: &DVector<f64>, lambda: f64) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let q = self.dim();
        let mut val = lambda * self.lin.dot(gamma) + self.quad * gamma.norm_squared();
        let mut grad = &self.lin * lambda + gamma * (2.0 * self.quad);
        let mut hess = DMatrix::identity(q, q) * (2.0 * self.quad);
        for (pos, w) in &self.groups {
            let norm = pos.iter().map(|&k| gamma[k] * gamma[k]).sum::<f64>().sqrt();
            if norm <= 1e-14 {
                return None;
            }
            val += lambda * w * norm;
            for &a in pos {
                grad[a] += lambda * w * gamma[a] / norm;
                for &b in pos {
                    let eye = if a == b { 1.0 } else { 0.0 };
                    hess[(a, b)] += lambda * w / norm * (eye - gamma[a] * gamma[b] / (norm * norm));
                }
            }
        }
        Some((val, grad, hess))
    }

    fn is_quadratic(&self) -> bool {
        self.groups.is_empty()
    }
}

fn weighted_gram(a: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = a.clone();
    for i in 0..a.nrows() {
        let s = d[i].max(0.0).sqrt();
        scaled.row_mut(i).scale_mut(s);
    }
    scaled.tr_mul(&scaled)
}

/// Newton's method on the face objective; returns `(gamma, b0)` stacked.
fn newton_face(
    loss: Loss,
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    intercept: bool,
    face: &Face,
    lambda: f64,
    v0: DVector<f64>,
) -> Option<DVector<f64>> {
    let q = face.dim();
    let dim = q + intercept as usize;
    let eta_of = |v: &DVector<f64>| {
        let mut e = if q > 0 { a * v.rows(0, q) } else { DVector::zeros(y.len()) };
        if intercept {
            e.add_scalar_mut(v[q]);
        }
        e
    };
    let phi = |v: &DVector<f64>| -> Option<f64> {
        let (pv, _, _) = face.penalty(&v.rows(0, q).into_owned(), lambda)?;
        Some(loss_sum(loss, &eta_of(v), y) + pv)
    };
    let one_step = loss == Loss::Squared && face.is_quadratic();
    let mut v = v0;
    for _ in 0..60 {
        let eta = eta_of(&v);
        let (_, pg, ph) = face.penalty(&v.rows(0, q).into_owned(), lambda)?;
        let d1 = DVector::from_fn(eta.len(), |j, _| loss.d1(eta[j], y[j]));
        let d2 = DVector::from_fn(eta.len(), |j, _| loss.d2(eta[j], y[j]));
        let mut grad = DVector::zeros(dim);
        let mut hess = DMatrix::zeros(dim, dim);
        if q > 0 {
            grad.rows_mut(0, q).copy_from(&(a.tr_mul(&d1) + pg));
            hess.view_mut((0, 0), (q, q)).copy_from(&(weighted_gram(a, &d2) + ph));
        }
        if intercept {
            grad[q] = d1.sum();
            hess[(q, q)] = d2.sum();
            if q > 0 {
                let cross = a.tr_mul(&d2);
                hess.view_mut((0, q), (q, 1)).copy_from(&cross);
                hess.view_mut((q, 0), (1, q)).copy_from(&cross.transpose());
            }
        }
        if dim == 0 {
            return Some(v);
        }
        let fac = cholesky_jitter(&hess, "face Newton").ok()?;
        if fac.jitter > 0.0 {
            // Singular face: the minimizer is not unique there.
            return None;
        }
        let step = -fac.solve_vec(&grad);
        let dec = -grad.dot(&step);
        if one_step {
            return Some(v + step);
        }
        if dec <= 1e-26 * (1.0 + phi(&v)?.abs()) {
            return Some(v);
        }
        let f0 = phi(&v)?;
        let mut s = 1.0;
        loop {
            let cand = &v + &step * s;
            if let Some(fc) = phi(&cand) {
                if fc <= f0 - 1e-4 * s * dec {
                    v = cand;
                    break;
                }
            }
            s *= 0.5;
            if s < 1e-12 {
                return Some(v);
            }
        }
    }
    Some(v)
}

/// The face of `reg` (optionally constrained) containing `beta`, where a Newton polish applies.
fn face_of(reg: &Regularizer, constraint: Option<&Constraint>, beta: &DVector<f64>) -> Option<Face> {
    let p = beta.len();
    let scale = beta.amax().max(1e-300);
    if let Some(c) = constraint {
        return match (c, reg) {
            (Constraint::PositiveOrthant, Regularizer::Ridge | Regularizer::FrobSq { .. }) => {
                let idx: Vec<usize> = (0..p).filter(|&j| beta[j] > 0.0).collect();
                Some(Face {
                    lin: DVector::zeros(idx.len()),
                    basis: FaceBasis::Select(idx),
                    quad: 1.0,
                    groups: Vec::new(),
                })
            }
            _ => None,
        };
    }
    match reg {
        Regularizer::Ridge | Regularizer::FrobSq { .. } => Some(Face {
            basis: FaceBasis::Select((0..p).collect()),
            lin: DVector::zeros(p),
            quad: 1.0,
            groups: Vec::new(),
        }),
        Regularizer::Lasso => {
            let idx: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
            let lin = DVector::from_iterator(idx.len(), idx.iter().map(|&j| beta[j].signum()));
            Some(Face {
                basis: FaceBasis::Select(idx),
                lin,
                quad: 0.0,
                groups: Vec::new(),
            })
        }
        Regularizer::GroupLasso { groups, weights } => {
            let mut idx = Vec::new();
            let mut fgroups = Vec::new();
            for (g, w) in groups.iter().zip(weights) {
                if g.iter().any(|&j| beta[j] != 0.0) {
                    let start = idx.len();
                    idx.extend_from_slice(g);
                    fgroups.push(((start..idx.len()).collect(), *w));
                }
            }
            Some(Face {
                lin: DVector::zeros(idx.len()),
                basis: FaceBasis::Select(idx),
                quad: 0.0,
                groups: fgroups,
            })
        }
        Regularizer::Linf => {
            let top = beta.amax();
            if top == 0.0 {
                return Some(Face {
                    basis: FaceBasis::Select(Vec::new()),
                    lin: DVector::zeros(0),
                    quad: 0.0,
                    groups: Vec::new(),
                });
            }
            let free: Vec<usize> = (0..p).filter(|&j| beta[j].abs() < top * (1.0 - 1e-12)).collect();
            let mut b = DMatrix::zeros(p, free.len() + 1);
            for (c, &j) in free.iter().enumerate() {
                b[(j, c)] = 1.0;
            }
            for j in (0..p).filter(|j| !free.contains(j)) {
                b[(j, free.len())] = beta[j].signum();
            }
            let mut lin = DVector::zeros(free.len() + 1);
            lin[free.len()] = 1.0;
            Some(Face {
                basis: FaceBasis::Dense(b),
                lin,
                quad: 0.0,
                groups: Vec::new(),
            })
        }
        Regularizer::Slope { weights } => {
            let clusters = slope_clusters(beta, 1e-12 * scale);
            let mut b = DMatrix::zeros(p, clusters.len());
            let mut lin = DVector::zeros(clusters.len());
            let mut pos = 0;
            for (c, members) in clusters.iter().enumerate() {
                for &j in members {
                    b[(j, c)] = beta[j].signum();
                    lin[c] += weights[pos];
                    pos += 1;
                }
            }
            Some(Face {
                basis: FaceBasis::Dense(b),
                lin,
                quad: 0.0,
                groups: Vec::new(),
            })
        }
        Regularizer::GenLasso { .. } | Regularizer::Nuclear { .. } => None,
    }
}

fn polish_on_face(spec: &ModelSpec, data: &Dataset, w: &DVector<f64>) -> Option<DVector<f64>> {
    let p = data.p();
    let beta = w.rows(0, p).into_owned();
    let face = face_of(&spec.reg, spec.constraint.as_ref(), &beta)?;
    let a = face.design(data.x());
    let q = face.dim();
    let mut v0 = DVector::zeros(q + spec.intercept as usize);
    v0.rows_mut(0, q).copy_from(&face.restrict(&beta));
    if spec.intercept {
        v0[q] = w[p];
    }
    // Ridge-type faces carry lambda inside `quad`.
    let mut face = face;
    face.quad *= spec.lambda;
    let v = newton_face(spec.loss, &a, data.y(), spec.intercept, &face, spec.lambda, v0)?;
    let mut out = DVector::zeros(w.len());
    out.rows_mut(0, p).copy_from(&face.lift(&v.rows(0, q).into_owned(), p));
    if spec.intercept {
        out[p] = v[q];
    }
    out.iter().all(|x| x.is_finite()).then_some(out)
}

fn initial_w(data: &Dataset, intercept: bool, warm: Option<&FitResult>) -> DVector<f64> {
    let p = data.p();
    let mut w = DVector::zeros(p + intercept as usize);
    if let Some(f) = warm {
        w.rows_mut(0, p).copy_from(&f.beta_vec());
        if intercept {
            w[p] = f.intercept_value();
        }
    } else if intercept {
        w[p] = data.y().mean();
    }
    w
}

fn finish(spec: &ModelSpec, data: &Dataset, w: &DVector<f64>, iters: usize, residual: f64, converged: bool) -> FitResult {
    let p = data.p();
    let beta = w.rows(0, p).into_owned();
    let b0 = spec.intercept.then(|| w[p]);
    let mut eta = data.x() * &beta;
    if let Some(b) = b0 {
        eta.add_scalar_mut(b);
    }
    let theta = spec.loss.is_smooth().then(|| smooth_dual(spec.loss, &eta, data.y()));
    let objective = loss_sum(spec.loss, &eta, data.y()) + spec.lambda * spec.reg.value(&beta);
    FitResult {
        beta: beta.as_slice().to_vec(),
        intercept: b0,
        theta: theta.map(|t| t.as_slice().to_vec()),
        aux: None,
        objective,
        iterations: iters,
        grad_norm: residual,
        converged,
    }
}

/// Accelerated proximal gradient on `sum l + lambda R` for smooth losses.
pub fn prox_grad_solve(spec: &ModelSpec, data: &Dataset, cfg: &SolverConfig, warm: Option<&FitResult>) -> Result<FitResult> {
    if !spec.loss.is_smooth() {
        return Err(AloError::unsupported("prox_grad", "a nonsmooth loss"));
    }
    let sm = Smooth {
        x: data.x(),
        y: data.y(),
        loss: spec.loss,
        intercept: spec.intercept,
        ridge: 0.0,
    };
    let reg = &spec.reg;
    let lambda = spec.lambda;
    let prox = move |b: &DVector<f64>, s: f64| reg.prox(b, s * lambda).expect("validated regularizer");
    let hval = move |b: &DVector<f64>| lambda * reg.value(b);
    let polish = |w: &DVector<f64>| polish_on_face(spec, data, w);
    let out = apg(&sm, &prox, &hval, initial_w(data, spec.intercept, warm), cfg, Some(&polish));
    Ok(finish(spec, data, &out.w, out.iters, out.residual, out.converged))
}

/// Projected gradient on `sum l + lambda R` over the constraint set, for smooth `R`.
pub fn projected_grad_solve(spec: &ModelSpec, data: &Dataset, cfg: &SolverConfig, warm: Option<&FitResult>) -> Result<FitResult> {
    let c = spec
        .constraint
        .as_ref()
        .ok_or_else(|| AloError::Config("projected gradient needs a constraint".into()))?;
    if !spec.reg.is_smooth() || !spec.loss.is_smooth() {
        return Err(AloError::unsupported("projected_grad", "nonsmooth terms"));
    }
    let sm = Smooth {
        x: data.x(),
        y: data.y(),
        loss: spec.loss,
        intercept: spec.intercept,
        ridge: spec.lambda,
    };
    let prox = move |b: &DVector<f64>, _s: f64| c.project(b);
    let hval = |_: &DVector<f64>| 0.0;
    let polish = |w: &DVector<f64>| polish_on_face(spec, data, w);
    let out = apg(&sm, &prox, &hval, initial_w(data, spec.intercept, warm), cfg, Some(&polish));
    Ok(finish(spec, data, &out.w, out.iters, out.residual, out.converged))
}

// ---------------------------------------------------------------------------
// Support vector machine

/// Ridge-penalized hinge loss, solved through its box-constrained dual
/// `min (1/(4 lambda)) a^T Q a - 1^T a`, `0 <= a <= 1` (and `y^T a = 0` with an
/// intercept), then polished by solving the KKT system on the margin set.
pub fn subgradient_hinge_solve(spec: &ModelSpec, data: &Dataset, cfg: &SolverConfig, warm: Option<&FitResult>) -> Result<FitResult> {
    if spec.loss != Loss::Hinge || !matches!(spec.reg, Regularizer::Ridge) || spec.constraint.is_some() {
        return Err(AloError::unsupported("svm solver", "anything but hinge loss with a ridge penalty"));
    }
    let (x, y) = (data.x(), data.y());
    let n = data.n();
    let lambda = spec.lambda;
    let yx = {
        let mut m = x.clone();
        for i in 0..n {
            m.row_mut(i).scale_mut(y[i]);
        }
        m
    };
    let q = &yx * yx.transpose();
    let lip = (linalg::spectral_norm_sq(&yx, cfg.seed) / (2.0 * lambda)).max(1e-12);
    let project = |a: &DVector<f64>| -> DVector<f64> {
        if !spec.intercept {
            return a.map(|v| v.clamp(0.0, 1.0));
        }
        // Find nu with y^T clip(a - nu y) = 0 by bisection; the map is nonincreasing in nu.
        let f = |nu: f64| -> f64 { (0..n).map(|j| y[j] * (a[j] - nu * y[j]).clamp(0.0, 1.0)).sum() };
        let (mut lo, mut hi) = (-1.0, 1.0);
        while f(lo) < 0.0 {
            lo *= 2.0;
        }
        while f(hi) > 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-16 * (1.0 + lo.abs()) {
                break;
            }
        }
        let nu = 0.5 * (lo + hi);
        a.map_with_location(|j, _, v| (v - nu * y[j]).clamp(0.0, 1.0))
    };
    let beta_of = |a: &DVector<f64>| yx.tr_mul(a) / (2.0 * lambda);
    let primal = |beta: &DVector<f64>, b0: f64| -> f64 {
        let eta = x * beta;
        (0..n).map(|j| (1.0 - y[j] * (eta[j] + b0)).max(0.0)).sum::<f64>() + lambda * beta.norm_squared()
    };
    let best_intercept = |beta: &DVector<f64>, a: &DVector<f64>| -> f64 {
        if !spec.intercept {
            return 0.0;
        }
        let eta = x * beta;
        let free: Vec<usize> = (0..n).filter(|&j| a[j] > 1e-8 && a[j] < 1.0 - 1e-8).collect();
        if !free.is_empty() {
            return free.iter().map(|&j| y[j] - eta[j]).sum::<f64>() / free.len() as f64;
        }
        // Piecewise-linear in b0: the minimum sits at a breakpoint.
        (0..n)
            .map(|j| y[j] - eta[j])
            .map(|b| (primal(beta, b), b))
            .min_by(|u, v| u.0.total_cmp(&v.0))
            .map(|(_, b)| b)
            .unwrap_or(0.0)
    };
    let gap = |a: &DVector<f64>| -> (f64, DVector<f64>, f64) {
        let beta = beta_of(a);
        let b0 = best_intercept(&beta, a);
        let dual = a.sum() - lambda * beta.norm_squared();
        (primal(&beta, b0) - dual, beta, b0)
    };
    let polish = |a: &DVector<f64>| -> Option<(DVector<f64>, f64)> {
        let tol = 1e-7;
        let v: Vec<usize> = (0..n).filter(|&j| a[j] > tol && a[j] < 1.0 - tol).collect();
        let ones: Vec<usize> = (0..n).filter(|&j| a[j] >= 1.0 - tol).collect();
        let nv = v.len();
        let dim = nv + spec.intercept as usize;
        let mut base = DVector::zeros(n);
        for &j in &ones {
            base[j] = 1.0;
        }
        let mut out = base.clone();
        let mut b0 = 0.0;
        if dim > 0 {
            // Margin rows: (1/(2 lambda)) Q_VV a_V + y_V b0 = 1 - (1/(2 lambda)) (Q base)_V.
            let qb = &q * &base;
            let mut m = DMatrix::zeros(dim, dim);
            let mut rhs = DVector::zeros(dim);
            for (r, &i) in v.iter().enumerate() {
                for (c, &j) in v.iter().enumerate() {
                    m[(r, c)] = q[(i, j)] / (2.0 * lambda);
                }
                rhs[r] = 1.0 - qb[i] / (2.0 * lambda);
                if spec.intercept {
                    m[(r, nv)] = y[i];
                }
            }
            if spec.intercept {
                for (c, &j) in v.iter().enumerate() {
                    m[(nv, c)] = y[j];
                }
                rhs[nv] = -ones.iter().map(|&j| y[j]).sum::<f64>();
            }
            let sol = linalg::lu_solve(&m, &DMatrix::from_column_slice(dim, 1, rhs.as_slice()), "svm margin system").ok()?;
            for (r, &j) in v.iter().enumerate() {
                let val = sol[(r, 0)];
                if !(-1e-12..=1.0 + 1e-12).contains(&val) {
                    return None;
                }
                out[j] = val.clamp(0.0, 1.0);
            }
            if spec.intercept {
                b0 = sol[(nv, 0)];
            }
        }
        let beta = beta_of(&out);
        let eta = x * &beta;
        for j in 0..n {
            let m = y[j] * (eta[j] + b0);
            let ok = if out[j] <= 0.0 {
                m >= 1.0 - 1e-9
            } else if out[j] >= 1.0 {
                m <= 1.0 + 1e-9
            } else {
                (m - 1.0).abs() <= 1e-9
            };
            if !ok {
                return None;
            }
        }
        Some((out, b0))
    };

    let mut a = match warm.and_then(|f| f.theta_vec()) {
        Some(t) if t.len() == n => project(&t.component_mul(y)),
        _ => project(&DVector::from_element(n, 0.5)),
    };
    let gap_tol = 1e-6 * n as f64;
    let finish_svm = |a: &DVector<f64>, beta: DVector<f64>, b0: f64, iters: usize, g: f64| {
        let theta = a.component_mul(y);
        let objective = primal(&beta, b0);
        FitResult {
            beta: beta.as_slice().to_vec(),
            intercept: spec.intercept.then_some(b0),
            theta: Some(theta.as_slice().to_vec()),
            aux: None,
            objective,
            iterations: iters,
            grad_norm: g,
            converged: g <= gap_tol,
        }
    };
    if cfg.polish {
        if let Some((pa, b0)) = polish(&a) {
            let beta = beta_of(&pa);
            let g = (primal(&beta, b0) - (pa.sum() - lambda * beta.norm_squared())).max(0.0);
            return Ok(finish_svm(&pa, beta, b0, 0, g));
        }
    }
    let grad = |a: &DVector<f64>| &q * a / (2.0 * lambda) - DVector::from_element(n, 1.0);
    let obj = |a: &DVector<f64>| a.dot(&(&q * a)) / (4.0 * lambda) - a.sum();
    let mut z = a.clone();
    let mut t = 1.0_f64;
    let mut fa = obj(&a);
    let mut gate = 1e-1;
    for it in 1..=cfg.max_iter {
        let cand = project(&(&z - grad(&z) / lip));
        let fc = obj(&cand);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if fc <= fa {
            let prev = std::mem::replace(&mut a, cand);
            fa = fc;
            z = &a + (&a - &prev) * ((t - 1.0) / t_next);
            t = t_next;
        } else {
            z = a.clone();
            t = 1.0;
        }
        if it % 25 == 0 || it == cfg.max_iter {
            let (g, beta, b0) = gap(&a);
            if cfg.polish && g < gate * n as f64 {
                if let Some((pa, pb0)) = polish(&a) {
                    let pbeta = beta_of(&pa);
                    let pg = (primal(&pbeta, pb0) - (pa.sum() - lambda * pbeta.norm_squared())).max(0.0);
                    return Ok(finish_svm(&pa, pbeta, pb0, it, pg));
                }
                gate = g / (10.0 * n as f64);
            }
            if g <= 1e-13 * n as f64 {
                return Ok(finish_svm(&a, beta, b0, it, g));
            }
        }
    }
    let (g, beta, b0) = gap(&a);
    Ok(finish_svm(&a, beta, b0, cfg.max_iter, g))
}

// ---------------------------------------------------------------------------
// ADMM solvers for squared loss

/// Centers the design and response when an intercept is fitted; the intercept is
/// then `ybar - xbar^T beta`.
struct Centered {
    x: DMatrix<f64>,
    y: DVector<f64>,
    xbar: DVector<f64>,
    ybar: f64,
}

fn centered(data: &Dataset, intercept: bool) -> Centered {
    let p = data.p();
    if !intercept {
        return Centered {
            x: data.x().clone(),
            y: data.y().clone(),
            xbar: DVector::zeros(p),
            ybar: 0.0,
        };
    }
    let xbar = DVector::from_fn(p, |j, _| data.x().column(j).mean());
    let ybar = data.y().mean();
    let mut x = data.x().clone();
    for j in 0..p {
        x.column_mut(j).add_scalar_mut(-xbar[j]);
    }
    let y = data.y().add_scalar(-ybar);
    Centered { x, y, xbar, ybar }
}

/// Solver for `(I + rho X X^T) u = r`, via the smaller of the two Gram matrices.
struct AdmmSystem {
    small_is_n: bool,
    factor: linalg::SpdFactor,
}

impl AdmmSystem {
    fn new(x: &DMatrix<f64>, rho: f64) -> Result<Self> {
        let (n, p) = x.shape();
        if n <= p {
            let m = DMatrix::identity(n, n) + x * x.transpose() * rho;
            Ok(Self {
                small_is_n: true,
                factor: cholesky_jitter(&m, "ADMM system")?,
            })
        } else {
            let m = DMatrix::identity(p, p) / rho + x.tr_mul(x);
            Ok(Self {
                small_is_n: false,
                factor: cholesky_jitter(&m, "ADMM system")?,
            })
        }
    }

    fn solve(&self, x: &DMatrix<f64>, r: &DVector<f64>) -> DVector<f64> {
        if self.small_is_n {
            self.factor.solve_vec(r)
        } else {
            // Woodbury: (I + rho X X^T)^{-1} = I - X (I/rho + X^T X)^{-1} X^T.
            r - x * self.factor.solve_vec(&x.tr_mul(r))
        }
    }
}

/// l-inf penalized least squares through ADMM on the dual
/// `min 1/2 ||u - y||^2` s.t. `||X^T u||_1 <= lambda`, splitting `z = X^T u`.
/// Returns the fit and `z_hat = X^T theta_hat`, with exact zeros on free coordinates.
pub fn admm_linf_dual(spec: &ModelSpec, data: &Dataset, cfg: &SolverConfig, warm: Option<&FitResult>) -> Result<(FitResult, DVector<f64>)> {
    if spec.loss != Loss::Squared || spec.reg != Regularizer::Linf {
        return Err(AloError::unsupported("linf ADMM", "anything but squared loss with an l-inf penalty"));
    }
    let c = centered(data, spec.intercept);
    let (x, y) = (&c.x, &c.y);
    let p = data.p();
    let lambda = spec.lambda;
    let prox_spec = spec.clone();
    let finish_linf = |beta: DVector<f64>, iters: usize, residual: f64, converged: bool| -> (FitResult, DVector<f64>) {
        let b0 = c.ybar - c.xbar.dot(&beta);
        let mut w = beta.clone();
        if spec.intercept {
            w = w.push(b0);
        }
        let fit = finish(&prox_spec, data, &w, iters, residual, converged);
        let theta = y - x * &beta;
        let mut zhat = x.tr_mul(&theta);
        let top = beta.amax();
        if top > 0.0 {
            for j in 0..p {
                if beta[j].abs() < top * (1.0 - 1e-12) {
                    zhat[j] = 0.0;
                }
            }
        }
        let mut fit = fit;
        fit.aux = Some(zhat.as_slice().to_vec());
        (fit, zhat)
    };
    let xty = x.tr_mul(y);
    if xty.lp_norm(1) <= lambda {
        let (f, z) = finish_linf(DVector::zeros(p), 0, 0.0, true);
        return Ok((f, z));
    }
    let reg = Regularizer::Linf;
    let lip = linalg::spectral_norm_sq(x, cfg.seed).max(1e-12);
    let residual_of = |beta: &DVector<f64>| -> f64 {
        let g = -x.tr_mul(&(y - x * beta));
        let z = reg.prox(&(beta - g / lip), lambda / lip).expect("positive step");
        (beta - z).norm() / beta.norm().max(1.0)
    };
    let polish = |zv: &DVector<f64>, mu: &DVector<f64>| -> Option<DVector<f64>> {
        // Free coordinates are the exact zeros of z; the rest share |beta| with sign of z.
        let free: Vec<usize> = (0..p).filter(|&j| zv[j] == 0.0).collect();
        let capped: Vec<usize> = (0..p).filter(|&j| zv[j] != 0.0).collect();
        if capped.is_empty() {
            return None;
        }
        let mut b = DMatrix::zeros(p, free.len() + 1);
        for (k, &j) in free.iter().enumerate() {
            b[(j, k)] = 1.0;
        }
        for &j in &capped {
            b[(j, free.len())] = zv[j].signum();
        }
        let mut lin = DVector::zeros(free.len() + 1);
        lin[free.len()] = 1.0;
        let face = Face {
            basis: FaceBasis::Dense(b),
            lin,
            quad: 0.0,
            groups: Vec::new(),
        };
        let a = face.design(x);
        let v0 = face.restrict(mu);
        let g = newton_face(Loss::Squared, &a, y, false, &face, lambda, v0)?;
        let beta = face.lift(&g, p);
        (residual_of(&beta) <= cfg.tol).then_some(beta)
    };

    let rho = cfg.rho;
    let sys = AdmmSystem::new(x, rho)?;
    let mut mu = match warm {
        Some(f) => f.beta_vec(),
        None => DVector::zeros(p),
    };
    let mut u = y - x * &mu;
    let mut z = project_l1_ball(&x.tr_mul(&u), lambda);
    if cfg.polish && warm.is_some() {
        let z_try = project_l1_ball(&(x.tr_mul(&u) + &mu / rho), lambda);
        if let Some(beta) = polish(&z_try, &mu) {
            let r = residual_of(&beta);
            return Ok(finish_linf(beta, 0, r, true));
        }
    }
    let mut gate = 1e-2;
    for it in 1..=cfg.max_iter {
        let rhs = y + x * (&z * rho) - x * &mu;
        u = sys.solve(x, &rhs);
        let xu = x.tr_mul(&u);
        let z_old = z.clone();
        z = project_l1_ball(&(&xu + &mu / rho), lambda);
        mu += (&xu - &z) * rho;
        if it % 10 == 0 || it == cfg.max_iter {
            let r_primal = (&xu - &z).norm() / xu.norm().max(z.norm()).max(1.0);
            let r_dual = rho * (x * (&z - &z_old)).norm() / (x * &mu).norm().max(1.0);
            let score = r_primal.max(r_dual);
            if cfg.polish && score < gate {
                if let Some(beta) = polish(&z, &mu) {
                    let r = residual_of(&beta);
                    return Ok(finish_linf(beta, it, r, true));
                }
                gate = score / 10.0;
            }
            if score <= 1e-14 {
                let r = residual_of(&mu);
                return Ok(finish_linf(mu.clone(), it, r, r <= cfg.tol));
            }
        }
    }
    let r = residual_of(&mu);
    Ok(finish_linf(mu.clone(), cfg.max_iter, r, r <= cfg.tol))
}

/// Generalized lasso `1/2 ||y - X beta||^2 + lambda ||D beta||_1` by ADMM on the
/// split `D beta = z`, polished on the face `{D_{-E} beta = 0}` and certified by a
/// dual vector `u` with `D^T u = X^T (y - X beta)`, `|u| <= lambda`, stored in `aux`.
pub fn gen_lasso_admm(spec: &ModelSpec, data: &Dataset, cfg: &SolverConfig, warm: Option<&FitResult>) -> Result<FitResult> {
    let Regularizer::GenLasso { d } = &spec.reg else {
        return Err(AloError::unsupported("gen_lasso ADMM", spec.reg.name()));
    };
    if spec.loss != Loss::Squared {
        return Err(AloError::unsupported("gen_lasso ADMM", format!("{} loss", spec.loss.name())));
    }
    let c = centered(data, spec.intercept);
    let (x, y) = (&c.x, &c.y);
    let p = data.p();
    let m = d.nrows();
    let lambda = spec.lambda;
    let rho = cfg.rho;

    let certify = |beta: &DVector<f64>| -> Option<(DVector<f64>, f64)> {
        let db = d * beta;
        let dscale = db.amax().max(1.0);
        let e: Vec<usize> = (0..m).filter(|&i| db[i].abs() > 1e-9 * dscale).collect();
        let rest: Vec<usize> = (0..m).filter(|&i| db[i].abs() <= 1e-9 * dscale).collect();
        let r = x.tr_mul(&(y - x * beta));
        let mut u = DVector::zeros(m);
        for &i in &e {
            u[i] = lambda * db[i].signum();
        }
        let target = &r - d.tr_mul(&u);
        let d_rest = linalg::select_rows(d, &rest);
        if !rest.is_empty() {
            let sol = linalg::pinv(&d_rest.transpose(), 1e-12) * &target;
            for (k, &i) in rest.iter().enumerate() {
                u[i] = sol[k];
            }
        }
        let mismatch = (d.tr_mul(&u) - &r).norm() / (r.norm().max(1.0) * lambda.max(1.0));
        let box_ok = u.iter().all(|v| v.abs() <= lambda * (1.0 + 1e-9));
        box_ok.then_some((u, mismatch))
    };
    let polish = |zv: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, f64)> {
        let e: Vec<usize> = (0..m).filter(|&i| zv[i] != 0.0).collect();
        let rest: Vec<usize> = (0..m).filter(|&i| zv[i] == 0.0).collect();
        let basis = linalg::null_space(&linalg::select_rows(d, &rest), p, 1e-10);
        let mut s = DVector::zeros(m);
        for &i in &e {
            s[i] = zv[i].signum();
        }
        let lin = basis.tr_mul(&d.tr_mul(&s));
        let face = Face {
            basis: FaceBasis::Dense(basis),
            lin,
            quad: 0.0,
            groups: Vec::new(),
        };
        let a = face.design(x);
        let g = newton_face(Loss::Squared, &a, y, false, &face, lambda, DVector::zeros(face.dim()))?;
        let beta = face.lift(&g, p);
        // The face solve assumed the signs of D_E beta; reject sign flips.
        let db = &(d * &beta);
        if e.iter().any(|&i| db[i] * s[i] <= 0.0) {
            return None;
        }
        let (u, mismatch) = certify(&beta)?;
        (mismatch <= cfg.tol).then_some((beta, u, mismatch))
    };
    let finish_gl = |beta: DVector<f64>, u: Option<DVector<f64>>, iters: usize, residual: f64, converged: bool| -> FitResult {
        let mut w = beta.clone();
        if spec.intercept {
            w = w.push(c.ybar - c.xbar.dot(&beta));
        }
        let mut f = finish(spec, data, &w, iters, residual, converged);
        f.aux = u.map(|u| u.as_slice().to_vec());
        f
    };

    let gram = x.tr_mul(x);
    let dtd = d.tr_mul(d);
    let sys = cholesky_jitter(&(&gram + &dtd * rho), "gen-lasso ADMM system")?;
    let xty = x.tr_mul(y);
    let mut beta = match warm {
        Some(f) => f.beta_vec(),
        None => DVector::zeros(p),
    };
    let mut z = (d * &beta).map(|v| v.signum() * (v.abs() - lambda / rho).max(0.0));
    let mut w = DVector::zeros(m);
    if cfg.polish && warm.is_some() {
        let z_try = d * &beta;
        let dscale = z_try.amax().max(1.0);
        let z_try = z_try.map(|v| if v.abs() > 1e-9 * dscale { v } else { 0.0 });
        if let Some((b, u, r)) = polish(&z_try) {
            return Ok(finish_gl(b, Some(u), 0, r, true));
        }
    }
    let mut gate = 1e-2;
    for it in 1..=cfg.max_iter {
        beta = sys.solve_vec(&(&xty + d.tr_mul(&(&z - &w)) * rho));
        let db = d * &beta;
        let z_old = z.clone();
        z = (&db + &w).map(|v| v.signum() * (v.abs() - lambda / rho).max(0.0));
        w += &db - &z;
        if it % 10 == 0 || it == cfg.max_iter {
            let r_primal = (&db - &z).norm() / db.norm().max(z.norm()).max(1.0);
            let r_dual = rho * d.tr_mul(&(&z - &z_old)).norm() / (d.tr_mul(&w) * rho).norm().max(1.0);
            let score = r_primal.max(r_dual);
            if cfg.polish && score < gate {
                if let Some((b, u, r)) = polish(&z) {
                    return Ok(finish_gl(b, Some(u), it, r, true));
                }
                gate = score / 10.0;
            }
            if score <= 1e-13 {
                let u = &w * rho;
                return Ok(finish_gl(beta.clone(), Some(u), it, score, score <= cfg.tol));
            }
        }
    }
    Ok(finish_gl(beta, Some(&w * rho), cfg.max_iter, f64::INFINITY, false))
}

// ---------------------------------------------------------------------------
// Duals

/// Dual vector `theta_j = -l'(x_j^T beta + b0; y_j)`. For kinks of a nonsmooth
/// loss the subgradients are recovered from stationarity by least squares.
pub fn dual_from_primal(spec: &ModelSpec, data: &Dataset, fit: &FitResult) -> Result<DVector<f64>> {
    let eta = fit.linear_predictor(data);
    let y = data.y();
    if spec.loss.is_smooth() {
        return Ok(smooth_dual(spec.loss, &eta, y));
    }
    let n = data.n();
    let (v, s) = crate::losses::partition_singular(spec.loss, fit, data, SINGULARITY_TOL);
    let mut theta = DVector::zeros(n);
    for &j in &s {
        theta[j] = -spec.loss.d1(eta[j], y[j]);
    }
    if v.is_empty() {
        return Ok(theta);
    }
    let g = kink_subgradients(spec, data, fit, &v, &s)?;
    for (k, &j) in v.iter().enumerate() {
        theta[j] = -g[k];
    }
    Ok(theta)
}

/// Subgradients `g_V` solving `X_V^T g_V = -(lambda grad R + X_S^T l'_S)` (plus the
/// intercept row `1^T g_V = -1^T l'_S`) in the least-squares sense.
pub fn kink_subgradients(spec: &ModelSpec, data: &Dataset, fit: &FitResult, v: &[usize], s: &[usize]) -> Result<DVector<f64>> {
    let eta = fit.linear_predictor(data);
    let y = data.y();
    let p = data.p();
    let beta = fit.beta_vec();
    let mut rhs_top = spec.reg.gradient(&beta)? * spec.lambda;
    let mut rhs_int = 0.0;
    for &j in s {
        let d = spec.loss.d1(eta[j], y[j]);
        rhs_top += data.x().row(j).transpose() * d;
        rhs_int += d;
    }
    let rows = p + spec.intercept as usize;
    let mut m = DMatrix::zeros(rows, v.len());
    for (k, &j) in v.iter().enumerate() {
        m.view_mut((0, k), (p, 1)).copy_from(&data.x().row(j).transpose());
        if spec.intercept {
            m[(p, k)] = 1.0;
        }
    }
    let mut rhs = DVector::zeros(rows);
    rhs.rows_mut(0, p).copy_from(&(-rhs_top));
    if spec.intercept {
        rhs[p] = -rhs_int;
    }
    let gram = m.tr_mul(&m);
    let fac = cholesky_jitter(&gram, "kink subgradients").map_err(|_| {
        AloError::Assumption("observations on the hinge kink have linearly dependent features".into())
    })?;
    if fac.jitter > 0.0 {
        return Err(AloError::Assumption(
            "observations on the hinge kink have linearly dependent features".into(),
        ));
    }
    Ok(fac.solve_vec(&m.tr_mul(&rhs)))
}

/// Duality gap `P(beta) - D(theta)` for squared loss without intercept, with
/// `theta = y - X beta` rescaled into the dual feasible set.
pub fn primal_dual_gap(spec: &ModelSpec, data: &Dataset, fit: &FitResult) -> Result<f64> {
    if spec.loss != Loss::Squared || spec.intercept || spec.constraint.is_some() {
        return Err(AloError::unsupported("duality gap", "anything but squared loss without intercept"));
    }
    let (x, y) = (data.x(), data.y());
    let beta = fit.beta_vec();
    let mut theta = y - x * &beta;
    let primal = 0.5 * theta.norm_squared() + spec.lambda * spec.reg.value(&beta);
    let xt = x.tr_mul(&theta);
    let dual = match &spec.reg {
        Regularizer::Ridge | Regularizer::FrobSq { .. } => {
            0.5 * y.norm_squared() - 0.5 * (y - &theta).norm_squared() - xt.norm_squared() / (4.0 * spec.lambda)
        }
        reg => {
            let dn = reg.dual_norm(&xt)?;
            if dn > spec.lambda {
                theta *= spec.lambda / dn;
            }
            0.5 * y.norm_squared() - 0.5 * (y - &theta).norm_squared()
        }
    };
    Ok(primal - dual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TaskKind;
    use crate::datagen::{generate, GenConfig, Scenario};

    fn gauss(n: usize, p: usize, seed: u64) -> Dataset {
        generate(&GenConfig::new(Scenario::IidGaussLinear, n, p, seed).with_k(p.min(4))).unwrap().0
    }

    #[test]
    fn ridge_matches_closed_form() {
        let data = gauss(30, 8, 1);
        let spec = ModelSpec::new(Loss::Squared, Regularizer::Ridge, 0.3);
        let f = fit(&spec, &data, &SolverConfig::default()).unwrap();
        let x = data.x();
        let closed = (x.tr_mul(x) + DMatrix::identity(8, 8) * 0.6).lu().solve(&x.tr_mul(data.y())).unwrap();
        assert!((f.beta_vec() - closed).amax() < 1e-8);
        assert!(f.converged);
    }

    #[test]
    fn lasso_null_threshold() {
        let data = gauss(30, 8, 2);
        let lmax = data.x().tr_mul(data.y()).amax();
        let spec = ModelSpec::new(Loss::Squared, Regularizer::Lasso, lmax * 1.0001);
        let f = fit(&spec, &data, &SolverConfig::default()).unwrap();
        assert!(f.beta.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn scalar_lasso_is_soft_threshold() {
        // n = p = 1: minimize (b x - y)^2 / 2 + lambda |b|; a grid search agrees with soft-thresholding.
        let data = Dataset::new(DMatrix::from_element(1, 1, 2.0), DVector::from_element(1, 3.0), TaskKind::Regression).unwrap();
        let spec = ModelSpec::new(Loss::Squared, Regularizer::Lasso, 1.0);
        let f = fit(&spec, &data, &SolverConfig::default()).unwrap();
        let grid_best = (0..=200_000)
            .map(|k| -5.0 + 10.0 * k as f64 / 200_000.0)
            .min_by(|a, b| {
                let fa = 0.5 * (2.0 * a - 3.0f64).powi(2) + a.abs();
                let fb = 0.5 * (2.0 * b - 3.0f64).powi(2) + b.abs();
                fa.total_cmp(&fb)
            })
            .unwrap();
        assert!((f.beta[0] - 1.25).abs() < 1e-12);
        assert!((f.beta[0] - grid_best).abs() < 1e-4);
    }

    #[test]
    fn fits_are_deterministic_and_warm_matches_cold() {
        let data = gauss(40, 15, 3);
        let cfg = SolverConfig::default();
        let spec = ModelSpec::new(Loss::Squared, Regularizer::Lasso, 0.05);
        let a = fit(&spec, &data, &cfg).unwrap();
        let b = fit(&spec, &data, &cfg).unwrap();
        assert_eq!(a, b);
        let warm_from = fit(&spec.with_lambda(0.2), &data, &cfg).unwrap();
        let w = fit_warm(&spec, &data, &cfg, Some(&warm_from)).unwrap();
        assert!((w.beta_vec() - a.beta_vec()).amax() < 1e-8);
    }

    #[test]
    fn primal_dual_gap_small_for_squared_problems() {
        let data = gauss(30, 12, 4);
        let cfg = SolverConfig::default();
        for reg in [Regularizer::Ridge, Regularizer::Lasso, Regularizer::Linf, Regularizer::consecutive_groups(12, 3)] {
            let spec = ModelSpec::new(Loss::Squared, reg.clone(), 0.1);
            let f = fit(&spec, &data, &cfg).unwrap();
            let gap = primal_dual_gap(&spec, &data, &f).unwrap();
            assert!(gap.abs() <= 1e-6, "{}: gap {gap:e}", reg.name());
        }
    }

    #[test]
    fn constrained_interior_matches_unconstrained() {
        // Positive truth with small noise keeps the ridge solution inside the orthant.
        let mut data = gauss(50, 5, 5);
        let beta = DVector::from_element(5, 3.0);
        let y = data.x() * &beta * 10.0;
        data = Dataset::new(data.x() * 10.0, y, TaskKind::Regression).unwrap();
        let spec = ModelSpec::new(Loss::Squared, Regularizer::Ridge, 0.01);
        let free = fit(&spec, &data, &SolverConfig::default()).unwrap();
        assert!(free.beta.iter().all(|&b| b > 0.0));
        let con = fit(&spec.clone().with_constraint(Constraint::PositiveOrthant), &data, &SolverConfig::default()).unwrap();
        assert!((con.beta_vec() - free.beta_vec()).amax() < 1e-8);
    }

    #[test]
    fn positive_ridge_all_negative_goes_to_zero() {
        // Grid search over the 2-d orthant confirms the origin.
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, 0.3, 1.0, 0.5, 0.5]);
        let y = DVector::from_vec(vec![-1.0, -2.0, -1.5]);
        let data = Dataset::new(x.clone(), y.clone(), TaskKind::Regression).unwrap();
        let spec = ModelSpec::new(Loss::Squared, Regularizer::Ridge, 0.1).with_constraint(Constraint::PositiveOrthant);
        let f = fit(&spec, &data, &SolverConfig::default()).unwrap();
        assert_eq!(f.beta, vec![0.0, 0.0]);
        let obj = |b: &DVector<f64>| 0.5 * (&y - &x * b).norm_squared() + 0.1 * b.norm_squared();
        let origin = obj(&DVector::zeros(2));
        for i in 0..50 {
            for j in 0..50 {
                let b = DVector::from_vec(vec![i as f64 * 0.02, j as f64 * 0.02]);
                assert!(obj(&b) >= origin);
            }
        }
    }

    #[test]
    fn psd_ridge_on_diagonal_data_clamps() {
        // Observations are e_k e_k^T, so each diagonal entry is a separate scalar ridge problem.
        let p = 3;
        let targets = [2.0, -1.0, 0.5];
        let mut x = DMatrix::zeros(3, 9);
        for k in 0..3 {
            x[(k, k * p + k)] = 1.0;
        }
        let data = Dataset::new(x, DVector::from_column_slice(&targets), TaskKind::Regression)
            .unwrap()
            .with_matrix_shape(3, 3)
            .unwrap();
        let spec = ModelSpec::new(Loss::Squared, Regularizer::FrobSq { p1: 3, p2: 3 }, 0.25)
            .with_constraint(Constraint::PsdCone { p: 3 });
        let f = fit(&spec, &data, &SolverConfig::default()).unwrap();
        // Scalar problem: min (b - t)^2 / 2 + 0.25 b^2 over b >= 0 gives max(t, 0) / 1.5.
        for k in 0..3 {
            assert!((f.beta[k * p + k] - targets[k].max(0.0) / 1.5).abs() < 1e-8);
        }
        assert!(f.converged);
    }

    #[test]
    fn two_point_svm_is_separable_with_zero_loss() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, -1.0]);
        let y = DVector::from_vec(vec![1.0, -1.0]);
        let data = Dataset::new(x.clone(), y, TaskKind::Binary).unwrap();
        let spec = ModelSpec::new(Loss::Hinge, Regularizer::Ridge, 1e-3);
        let f = fit(&spec, &data, &SolverConfig::default()).unwrap();
        let eta = &x * f.beta_vec();
        assert!(eta[0] >= 1.0 - 1e-9 && eta[1] <= -1.0 + 1e-9);
        // For tiny lambda the fit is the minimum-norm separator. Enumerate which margins
        // are tight: the candidate must satisfy both margin constraints.
        let rows: [DVector<f64>; 2] = [x.row(0).transpose(), -x.row(1).transpose()];
        let mut best: Option<DVector<f64>> = None;
        for mask in 1..4u8 {
            let tight: Vec<&DVector<f64>> = (0..2).filter(|k| mask >> k & 1 == 1).map(|k| &rows[k]).collect();
            let a = DMatrix::from_columns(&tight.iter().map(|r| (*r).clone()).collect::<Vec<_>>());
            let c = a.tr_mul(&a).lu().solve(&DVector::from_element(tight.len(), 1.0)).unwrap();
            let cand = &a * c;
            if rows.iter().all(|r| r.dot(&cand) >= 1.0 - 1e-12) && best.as_ref().is_none_or(|b| cand.norm() < b.norm()) {
                best = Some(cand);
            }
        }
        assert!((f.beta_vec() - best.unwrap()).amax() < 1e-8);
        assert!(f.converged);
    }

    #[test]
    fn svm_shrinks_with_lambda_and_respects_symmetry() {
        let (data, _) = generate(&GenConfig::new(Scenario::LogisticBinary, 30, 4, 7).with_k(4)).unwrap();
        let cfg = SolverConfig::default();
        let big = fit(&ModelSpec::new(Loss::Hinge, Regularizer::Ridge, 1e6), &data, &cfg).unwrap();
        assert!(big.beta_vec().amax() < 1e-4);
        let spec = ModelSpec::new(Loss::Hinge, Regularizer::Ridge, 0.5);
        let a = fit(&spec, &data, &cfg).unwrap();
        let flipped = Dataset::new(-data.x(), -data.y(), TaskKind::Binary).unwrap();
        let b = fit(&spec, &flipped, &cfg).unwrap();
        assert!((a.beta_vec() - b.beta_vec()).amax() < 1e-8);
        assert!(a.converged);
    }

    #[test]
    fn svm_with_intercept_satisfies_kkt() {
        let (data, _) = generate(&GenConfig::new(Scenario::LogisticBinary, 40, 5, 8).with_k(5)).unwrap();
        let spec = ModelSpec::new(Loss::Hinge, Regularizer::Ridge, 0.05).with_intercept(true);
        let f = fit(&spec, &data, &SolverConfig::default()).unwrap();
        assert!(f.converged, "gap {}", f.grad_norm);
        let theta = f.theta_vec().unwrap();
        assert!(theta.dot(&DVector::from_element(40, 1.0)).abs() < 1e-9);
        // Stationarity: 2 lambda beta = X^T theta.
        let lhs = f.beta_vec() * (2.0 * 0.05);
        assert!((lhs - data.x().tr_mul(&theta)).amax() < 1e-9);
    }

    #[test]
    fn linf_with_one_feature_matches_lasso() {
        let data = gauss(20, 1, 9);
        let cfg = SolverConfig::default();
        let a = fit(&ModelSpec::new(Loss::Squared, Regularizer::Linf, 0.05), &data, &cfg).unwrap();
        let b = fit(&ModelSpec::new(Loss::Squared, Regularizer::Lasso, 0.05), &data, &cfg).unwrap();
        assert!((a.beta[0] - b.beta[0]).abs() < 1e-10);
    }

    #[test]
    fn linf_large_lambda_gives_zero_and_dense_z() {
        let data = gauss(20, 4, 10);
        let spec = ModelSpec::new(Loss::Squared, Regularizer::Linf, 1e6);
        let (f, z) = admm_linf_dual(&spec, &data, &SolverConfig::default(), None).unwrap();
        assert!(f.beta.iter().all(|&b| b == 0.0));
        assert!(z.iter().all(|&v| v != 0.0));
    }

    #[test]
    fn linf_small_problem_matches_brute_force_dual() {
        // n = p = 2: the dual is the projection of y onto the parallelogram
        // {theta : ||X^T theta||_1 <= lambda}, whose vertices are X^{-T} (+-lambda e_k).
        // Projecting onto each edge segment gives an exact, independent answer.
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, -0.2, 1.0]);
        let y = DVector::from_vec(vec![1.0, 0.5]);
        let data = Dataset::new(x.clone(), y.clone(), TaskKind::Regression).unwrap();
        let lambda = 0.6;
        let f = fit(&ModelSpec::new(Loss::Squared, Regularizer::Linf, lambda), &data, &SolverConfig::default()).unwrap();
        let theta = &y - &x * f.beta_vec();
        assert!(x.tr_mul(&y).lp_norm(1) > lambda);
        let xinv_t = x.transpose().try_inverse().unwrap();
        let corner = |k: usize, s: f64| -> DVector<f64> {
            let mut e = DVector::zeros(2);
            e[k] = s * lambda;
            &xinv_t * e
        };
        let verts = [corner(0, 1.0), corner(1, 1.0), corner(0, -1.0), corner(1, -1.0)];
        let mut best = (f64::INFINITY, DVector::zeros(2));
        for i in 0..4 {
            let (a, b) = (&verts[i], &verts[(i + 1) % 4]);
            let d = b - a;
            let t = ((&y - a).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
            let proj = a + d * t;
            let dist = (&proj - &y).norm();
            if dist < best.0 {
                best = (dist, proj);
            }
        }
        assert!((&theta - &best.1).amax() < 1e-9, "{theta} vs {}", best.1);
    }

    #[test]
    fn fused_lasso_matches_prox_grad_reference() {
        let (data, _) = generate(&GenConfig::new(Scenario::PiecewiseConstantFused, 40, 12, 11).with_k(3)).unwrap();
        let spec = ModelSpec::new(Loss::Squared, Regularizer::fused(12), 0.5);
        let f = fit(&spec, &data, &SolverConfig::default()).unwrap();
        assert!(f.converged, "residual {}", f.grad_norm);
        // Reference: plain proximal gradient with the iterative gen-lasso prox.
        let sm = Smooth {
            x: data.x(),
            y: data.y(),
            loss: Loss::Squared,
            intercept: false,
            ridge: 0.0,
        };
        let reg = spec.reg.clone();
        let prox = |b: &DVector<f64>, s: f64| reg.prox(b, s * 0.5).unwrap();
        let hval = |b: &DVector<f64>| 0.5 * reg.value(b);
        let cfg = SolverConfig {
            max_iter: 4000,
            polish: false,
            tol: 1e-9,
            ..SolverConfig::default()
        };
        let out = apg(&sm, &prox, &hval, DVector::zeros(12), &cfg, None);
        assert!((out.w - f.beta_vec()).amax() < 1e-5);
        let u = DVector::from_column_slice(f.aux.as_ref().unwrap());
        assert!(u.amax() <= 0.5 * (1.0 + 1e-9));
    }

    #[test]
    fn intercept_fit_has_zero_mean_residual() {
        let data = gauss(40, 6, 12);
        let shifted = Dataset::new(data.x().clone(), data.y().add_scalar(3.0), TaskKind::Regression).unwrap();
        for reg in [Regularizer::Lasso, Regularizer::Ridge, Regularizer::Linf, Regularizer::fused(6)] {
            let spec = ModelSpec::new(Loss::Squared, reg.clone(), 0.05).with_intercept(true);
            let f = fit(&spec, &shifted, &SolverConfig::default()).unwrap();
            let theta = f.theta_vec().unwrap();
            assert!(theta.sum().abs() < 1e-8, "{}: {}", reg.name(), theta.sum());
            assert!(f.converged);
        }
    }

    #[test]
    fn logistic_lasso_and_group_converge() {
        let (data, _) = generate(&GenConfig::new(Scenario::LogisticBinary, 60, 9, 13).with_k(4)).unwrap();
        let cfg = SolverConfig::default();
        for reg in [Regularizer::Lasso, Regularizer::consecutive_groups(9, 3), Regularizer::Ridge, Regularizer::Slope { weights: vec![1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2] }] {
            let spec = ModelSpec::new(Loss::Logistic, reg.clone(), 0.4).with_intercept(true);
            let f = fit(&spec, &data, &cfg).unwrap();
            assert!(f.converged, "{} residual {:e}", reg.name(), f.grad_norm);
        }
    }

    #[test]
    fn dual_from_primal_examples() {
        let data = gauss(10, 3, 14);
        let spec = ModelSpec::new(Loss::Squared, Regularizer::Ridge, 0.2);
        let f = fit(&spec, &data, &SolverConfig::default()).unwrap();
        let theta = dual_from_primal(&spec, &data, &f).unwrap();
        assert!((theta - (data.y() - data.x() * f.beta_vec())).amax() < 1e-14);

        let bin = Dataset::new(DMatrix::from_element(2, 1, 1.0), DVector::from_vec(vec![1.0, 1.0]), TaskKind::Binary).unwrap();
        let zero = FitResult {
            beta: vec![0.0],
            intercept: None,
            theta: None,
            aux: None,
            objective: 0.0,
            iterations: 0,
            grad_norm: 0.0,
            converged: true,
        };
        let t = dual_from_primal(&ModelSpec::new(Loss::Logistic, Regularizer::Ridge, 1.0), &bin, &zero).unwrap();
        assert_eq!(t.as_slice(), &[0.5, 0.5]);
        let t = dual_from_primal(&ModelSpec::new(Loss::Hinge, Regularizer::Ridge, 1.0), &bin, &zero).unwrap();
        assert_eq!(t.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn nuclear_fit_converges() {
        let (data, _) = generate(&GenConfig::matrix(Scenario::LowrankMatrix, 40, 3, 3, 15)).unwrap();
        let spec = ModelSpec::new(Loss::Squared, Regularizer::Nuclear { p1: 3, p2: 3 }, 2.0);
        let f = fit(&spec, &data, &SolverConfig::default()).unwrap();
        assert!(f.converged, "residual {:e}", f.grad_norm);
    }
}
