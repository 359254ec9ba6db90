//! Dense linear-algebra kernels shared by the solvers and the ALO engines.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AloError, Result};

/// Jitter ladder applied to the diagonal before giving up on a Cholesky factorization.
pub const JITTER_STEPS: [f64; 3] = [0.0, 1e-12, 1e-10];

/// Symmetric positive definite factorization plus the smallest pivot that was met.
pub struct SpdFactor {
    pub chol: Cholesky<f64, Dyn>,
    pub min_pivot: f64,
    pub jitter: f64,
}

impl SpdFactor {
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// `L^{-1} B`, used to read quadratic forms `b_i^T M^{-1} b_i` as squared column norms.
    pub fn half_solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let l = self.chol.l();
        l.solve_lower_triangular(b)
            .expect("cholesky factor has a nonzero diagonal")
    }
}

/// Cholesky with the jitter escalation 0, 1e-12, 1e-10 (relative to the mean diagonal).
pub fn cholesky_jitter(m: &DMatrix<f64>, context: &str) -> Result<SpdFactor> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(AloError::dim(format!("{context}: matrix is {}x{}", n, m.ncols())));
    }
    let scale = if n == 0 {
        1.0
    } else {
        (m.diagonal().iter().map(|d| d.abs()).sum::<f64>() / n as f64).max(f64::MIN_POSITIVE)
    };
    let mut last_pivot = f64::NAN;
    for &step in JITTER_STEPS.iter() {
        let mut a = m.clone();
        let jitter = step * scale;
        for i in 0..n {
            a[(i, i)] += jitter;
        }
        if let Some(chol) = a.cholesky() {
            let l = chol.l_dirty();
            let min_pivot = (0..n).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
            last_pivot = min_pivot;
            if min_pivot > 1e-14 * scale || n == 0 {
                return Ok(SpdFactor {
                    chol,
                    min_pivot,
                    jitter,
                });
            }
        }
    }
    Err(AloError::Conditioning {
        context: context.to_string(),
        pivot: if last_pivot.is_nan() { 0.0 } else { last_pivot },
    })
}

/// General square solve through LU; fails when a pivot vanishes.
pub fn lu_solve(m: &DMatrix<f64>, b: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let lu = m.clone().lu();
    let u = lu.u();
    let scale = u.diagonal().iter().fold(0.0_f64, |acc, d| acc.max(d.abs()));
    let pivot = u.diagonal().iter().fold(f64::INFINITY, |acc, d| acc.min(d.abs()));
    if m.nrows() > 0 && (!pivot.is_finite() || pivot <= 1e-13 * scale.max(1e-300)) {
        return Err(AloError::Conditioning {
            context: context.to_string(),
            pivot,
        });
    }
    lu.solve(b).ok_or_else(|| AloError::Conditioning {
        context: context.to_string(),
        pivot,
    })
}

/// Diagonal of the orthogonal projector onto the column span of `a`, and the numerical rank.
pub fn projector_diag(a: &DMatrix<f64>, rel_cutoff: f64) -> (DVector<f64>, usize) {
    let n = a.nrows();
    if a.ncols() == 0 || n == 0 {
        return (DVector::zeros(n), 0);
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| smax > 0.0 && svd.singular_values[k] > rel_cutoff * smax)
        .collect();
    let mut diag = DVector::zeros(n);
    for i in 0..n {
        diag[i] = keep.iter().map(|&k| u[(i, k)] * u[(i, k)]).sum();
    }
    (diag, keep.len())
}

/// Numerical rank via singular values relative to the largest one.
pub fn numerical_rank(a: &DMatrix<f64>, rel_cutoff: f64) -> usize {
    if a.ncols() == 0 || a.nrows() == 0 {
        return 0;
    }
    let sv = a.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|&&s| smax > 0.0 && s > rel_cutoff * smax).count()
}

/// Orthonormal basis for the orthogonal complement of the span of the orthonormal columns `q`.
pub fn orthogonal_complement(q: &DMatrix<f64>) -> DMatrix<f64> {
    let p = q.nrows();
    let r = q.ncols();
    if r == 0 {
        return DMatrix::identity(p, p);
    }
    let proj = DMatrix::identity(p, p) - q * q.transpose();
    let eig = proj.symmetric_eigen();
    let cols: Vec<usize> = (0..p).filter(|&k| eig.eigenvalues[k] > 0.5).collect();
    let mut out = DMatrix::zeros(p, cols.len());
    for (j, &k) in cols.iter().enumerate() {
        out.set_column(j, &eig.eigenvectors.column(k));
    }
    out
}

/// Orthonormal basis of `null(rows)` where `rows` is `m x p`; `rel_cutoff` separates zero singular values.
pub fn null_space(rows: &DMatrix<f64>, p: usize, rel_cutoff: f64) -> DMatrix<f64> {
    if rows.nrows() == 0 {
        return DMatrix::identity(p, p);
    }
    let svd = rows.clone().svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| smax > 0.0 && svd.singular_values[k] > rel_cutoff * smax)
        .collect();
    let mut row_basis = DMatrix::zeros(p, keep.len());
    for (j, &k) in keep.iter().enumerate() {
        row_basis.set_column(j, &vt.row(k).transpose());
    }
    orthogonal_complement(&row_basis)
}

/// Moore-Penrose pseudoinverse with singular values below `rel_cutoff * sigma_max` dropped.
pub fn pinv(a: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return DMatrix::zeros(n, m);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("U");
    let vt = svd.v_t.expect("V^T");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut out = DMatrix::zeros(n, m);
    for k in 0..svd.singular_values.len() {
        let s = svd.singular_values[k];
        if smax > 0.0 && s > rel_cutoff * smax {
            out += vt.row(k).transpose() * u.column(k).transpose() / s;
        }
    }
    out
}

/// Power-iteration estimate of the squared spectral norm `||X||_2^2`.
pub fn spectral_norm_sq(x: &DMatrix<f64>, seed: u64) -> f64 {
    let p = x.ncols();
    if p == 0 || x.nrows() == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = DVector::from_fn(p, |_, _| rng.random::<f64>() - 0.5);
    let mut est = 0.0;
    for _ in 0..100 {
        let nv = v.norm();
        if nv == 0.0 {
            return 0.0;
        }
        v /= nv;
        let w = x.tr_mul(&(x * &v));
        let next = w.norm();
        let done = (next - est).abs() <= 1e-8 * next;
        est = next;
        v = w;
        if done {
            break;
        }
    }
    // Power iteration approaches from below; pad slightly so 1/L stays a valid step.
    est * 1.01
}

/// Columns of `x` at the given indices.
pub fn select_columns(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.nrows(), idx.len());
    for (j, &k) in idx.iter().enumerate() {
        out.set_column(j, &x.column(k));
    }
    out
}

pub fn select_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(idx.len(), x.ncols());
    for (i, &k) in idx.iter().enumerate() {
        out.set_row(i, &x.row(k));
    }
    out
}

pub fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&k| v[k]))
}

/// Row-major reshape of a flattened `p1 x p2` matrix.
pub fn unvec(v: &DVector<f64>, p1: usize, p2: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(p1, p2, v.as_slice())
}

/// Row-major flattening, the inverse of [`unvec`].
pub fn vec_rm(m: &DMatrix<f64>) -> DVector<f64> {
    let (r, c) = m.shape();
    DVector::from_fn(r * c, |k, _| m[(k / c, k % c)])
}

/// Full SVD `A = U diag(s) V^T` with square `U` (`r x r`) and `V` (`c x c`); singular values descending.
pub fn full_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (r, c) = a.shape();
    let svd = a.clone().svd(true, true);
    let u_thin = svd.u.expect("U");
    let v_thin = svd.v_t.expect("V^T").transpose();
    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let s = DVector::from_iterator(k, order.iter().map(|&i| svd.singular_values[i]));
    let u_sorted = select_columns(&u_thin, &order);
    let v_sorted = select_columns(&v_thin, &order);
    let u = complete_basis(&u_sorted, r);
    let v = complete_basis(&v_sorted, c);
    (u, s, v)
}

fn complete_basis(q: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    if q.ncols() >= dim {
        return q.columns(0, dim).into_owned();
    }
    let extra = orthogonal_complement(q);
    let mut out = DMatrix::zeros(dim, dim);
    out.columns_mut(0, q.ncols()).copy_from(q);
    let need = dim - q.ncols();
    out.columns_mut(q.ncols(), need)
        .copy_from(&extra.columns(0, need.min(extra.ncols())));
    out
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vecs = select_columns(&eig.eigenvectors, &order);
    (vals, vecs)
}
