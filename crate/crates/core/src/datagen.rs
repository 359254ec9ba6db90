//! Seeded synthetic problems for tests, demos and benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TaskKind};
use crate::error::{AloError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// `X ~ N(0, 1/n)`, k-sparse `Uniform[-3, 3]` truth, Gaussian noise.
    IidGaussLinear,
    /// Rows `N(0, C/k)` with `C_ij = rho^|i-j|`, k-sparse `N(0, 1)` truth.
    ToeplitzLinear,
    /// `y = f(x^T beta + eps)` with `f(x) = sign(x) sqrt(|x|)`.
    MisspecifiedSqrt,
    /// Student-t (3 degrees of freedom) noise rescaled to variance `noise_sd^2`.
    HeavyTailT3,
    /// Labels `+-1` drawn from a logistic model on `x^T beta + eps`.
    LogisticBinary,
    /// Piecewise-constant truth: cumulative sum of a k-sparse vector, standardized.
    PiecewiseConstantFused,
    /// Matrix observations with a rank-k truth `sum_l z_l w_l^T`.
    LowrankMatrix,
    /// Square matrix observations with truth `C^T C + diag(d)`.
    PsdQuadratic,
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::IidGaussLinear,
        Scenario::ToeplitzLinear,
        Scenario::MisspecifiedSqrt,
        Scenario::HeavyTailT3,
        Scenario::LogisticBinary,
        Scenario::PiecewiseConstantFused,
        Scenario::LowrankMatrix,
        Scenario::PsdQuadratic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::IidGaussLinear => "iid_gauss_linear",
            Scenario::ToeplitzLinear => "toeplitz_linear",
            Scenario::MisspecifiedSqrt => "misspecified_sqrt",
            Scenario::HeavyTailT3 => "heavy_tail_t3",
            Scenario::LogisticBinary => "logistic_binary",
            Scenario::PiecewiseConstantFused => "piecewise_constant_fused",
            Scenario::LowrankMatrix => "lowrank_matrix",
            Scenario::PsdQuadratic => "psd_quadratic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let key = s.replace('-', "_");
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == key)
            .ok_or_else(|| AloError::Config(format!("unknown scenario {s:?}")))
    }

    fn default_noise_sd(self) -> f64 {
        match self {
            Scenario::IidGaussLinear => 0.8,
            Scenario::PsdQuadratic => 7.0,
            _ => 0.5,
        }
    }

    pub fn is_matrix(self) -> bool {
        matches!(self, Scenario::LowrankMatrix | Scenario::PsdQuadratic)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub p: usize,
    /// Observation shape for matrix scenarios; `p = p1 * p2`.
    pub shape: Option<(usize, usize)>,
    /// Sparsity, number of pieces, or rank depending on the scenario.
    pub k: usize,
    pub noise_sd: f64,
    pub rho: f64,
    pub seed: u64,
}

impl GenConfig {
    pub fn new(scenario: Scenario, n: usize, p: usize, seed: u64) -> Self {
        Self {
            scenario,
            n,
            p,
            shape: None,
            k: p.min(10).max(1),
            noise_sd: scenario.default_noise_sd(),
            rho: if scenario == Scenario::ToeplitzLinear { 0.8 } else { 0.0 },
            seed,
        }
    }

    /// Matrix scenario with `p1 x p2` observations.
    pub fn matrix(scenario: Scenario, n: usize, p1: usize, p2: usize, seed: u64) -> Self {
        let mut cfg = Self::new(scenario, n, p1 * p2, seed);
        cfg.shape = Some((p1, p2));
        cfg.k = 1;
        cfg
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_noise(mut self, sd: f64) -> Self {
        self.noise_sd = sd;
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(AloError::Config("n and p must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(AloError::Config(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(AloError::Config("noise_sd must be nonnegative".into()));
        }
        let limit = match (self.scenario, self.shape) {
            (Scenario::LowrankMatrix, Some((p1, p2))) => p1.min(p2),
            _ => self.p,
        };
        if self.k > limit {
            return Err(AloError::Config(format!("k = {} exceeds {limit}", self.k)));
        }
        if self.scenario.is_matrix() {
            match self.shape {
                Some((p1, p2)) if p1 * p2 == self.p => {}
                _ => return Err(AloError::Shape("matrix scenarios need p1 x p2 = p".into())),
            }
            if self.scenario == Scenario::PsdQuadratic && self.shape.map(|(a, b)| a != b).unwrap_or(true) {
                return Err(AloError::Shape("psd_quadratic needs square observations".into()));
            }
        }
        Ok(())
    }
}

/// Ground truth behind a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub scenario: Scenario,
    pub beta: Vec<f64>,
    pub shape: Option<(usize, usize)>,
    pub noise_sd: f64,
    pub seed: u64,
}

/// Standard normal deviate by Box-Muller (one of the pair is used).
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Student-t with three degrees of freedom, `Z / sqrt(chi2_3 / 3)`.
fn student_t3<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let z = normal(rng);
    let chi2: f64 = (0..3).map(|_| normal(rng).powi(2)).sum();
    z / (chi2 / 3.0).sqrt()
}

fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, n: usize, p: usize, sd: f64) -> DMatrix<f64> {
    // Filled row by row so the stream does not depend on storage order.
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = sd * normal(rng);
        }
    }
    x
}

fn sparse_truth<R: Rng + ?Sized>(rng: &mut R, p: usize, k: usize, draw: impl Fn(&mut R) -> f64) -> DVector<f64> {
    let mut beta = DVector::zeros(p);
    let mut idx = sample(rng, p, k).into_vec();
    idx.sort_unstable();
    for j in idx {
        beta[j] = draw(rng);
    }
    beta
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Toeplitz covariance `C_ij = rho^|i-j|`.
pub fn toeplitz(p: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs()))
}

pub fn generate(cfg: &GenConfig) -> Result<(Dataset, Truth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, p, k, sd) = (cfg.n, cfg.p, cfg.k, cfg.noise_sd);
    let nf = n as f64;
    let kf = k.max(1) as f64;
    let mut kind = TaskKind::Regression;
    let (x, beta, y) = match cfg.scenario {
        Scenario::IidGaussLinear => {
            let x = gaussian_matrix(&mut rng, n, p, 1.0 / nf.sqrt());
            let beta = sparse_truth(&mut rng, p, k, |r| uniform(r, -3.0, 3.0));
            let noise = DVector::from_fn(n, |_, _| sd * normal(&mut rng));
            let y = &x * &beta + noise;
            (x, beta, y)
        }
        Scenario::ToeplitzLinear => {
            let z = gaussian_matrix(&mut rng, n, p, 1.0 / kf.sqrt());
            let chol = toeplitz(p, cfg.rho)
                .cholesky()
                .ok_or_else(|| AloError::Config("Toeplitz covariance is not positive definite".into()))?;
            // Rows z_j L^T have covariance L L^T = C.
            let x = z * chol.l().transpose();
            let beta = sparse_truth(&mut rng, p, k, |r| normal(r));
            let noise = DVector::from_fn(n, |_, _| sd * normal(&mut rng));
            let y = &x * &beta + noise;
            (x, beta, y)
        }
        Scenario::MisspecifiedSqrt => {
            let x = gaussian_matrix(&mut rng, n, p, 1.0 / kf.sqrt());
            let beta = sparse_truth(&mut rng, p, k, |r| normal(r));
            let lin = &x * &beta;
            let y = DVector::from_fn(n, |i, _| {
                let v = lin[i] + sd * normal(&mut rng);
                v.signum() * v.abs().sqrt()
            });
            (x, beta, y)
        }
        Scenario::HeavyTailT3 => {
            let x = gaussian_matrix(&mut rng, n, p, 1.0 / kf.sqrt());
            let beta = sparse_truth(&mut rng, p, k, |r| normal(r));
            // Var(t_3) = 3.
            let noise = DVector::from_fn(n, |_, _| sd / 3f64.sqrt() * student_t3(&mut rng));
            let y = &x * &beta + noise;
            (x, beta, y)
        }
        Scenario::LogisticBinary => {
            kind = TaskKind::Binary;
            let x = gaussian_matrix(&mut rng, n, p, 1.0 / nf.sqrt());
            let beta = sparse_truth(&mut rng, p, k, |r| uniform(r, -3.0, 3.0));
            let lin = &x * &beta;
            let y = DVector::from_fn(n, |i, _| {
                let prob = sigmoid(lin[i] + sd * normal(&mut rng));
                if rng.random::<f64>() < prob {
                    1.0
                } else {
                    -1.0
                }
            });
            (x, beta, y)
        }
        Scenario::PiecewiseConstantFused => {
            let x = gaussian_matrix(&mut rng, n, p, 0.05f64.sqrt());
            let jumps = sparse_truth(&mut rng, p, k, |r| normal(r));
            let mut beta = DVector::zeros(p);
            let mut acc = 0.0;
            for j in 0..p {
                acc += jumps[j];
                beta[j] = acc;
            }
            let mean = beta.mean();
            let std = (beta.map(|b| (b - mean).powi(2)).sum() / p as f64).sqrt();
            if std > 0.0 {
                beta /= std;
            }
            let noise = DVector::from_fn(n, |_, _| sd * normal(&mut rng));
            let y = &x * &beta + noise;
            (x, beta, y)
        }
        Scenario::LowrankMatrix => {
            let (p1, p2) = cfg.shape.expect("validated");
            let x = gaussian_matrix(&mut rng, n, p, 1.0);
            let mut b = DMatrix::zeros(p1, p2);
            for _ in 0..k {
                let z = DVector::from_fn(p1, |_, _| normal(&mut rng));
                let w = DVector::from_fn(p2, |_, _| normal(&mut rng));
                b += z * w.transpose();
            }
            let beta = crate::linalg::vec_rm(&b);
            let noise = DVector::from_fn(n, |_, _| sd * normal(&mut rng));
            let y = &x * &beta + noise;
            (x, beta, y)
        }
        Scenario::PsdQuadratic => {
            let (q, _) = cfg.shape.expect("validated");
            let x = gaussian_matrix(&mut rng, n, p, 1.0 / nf.sqrt());
            let c = gaussian_matrix(&mut rng, q, q, 1.0);
            let d = DVector::from_fn(q, |_, _| q as f64 * normal(&mut rng));
            let b = c.transpose() * &c + DMatrix::from_diagonal(&d);
            let beta = crate::linalg::vec_rm(&b);
            let noise = DVector::from_fn(n, |_, _| sd * normal(&mut rng));
            let y = &x * &beta + noise;
            (x, beta, y)
        }
    };
    let mut data = Dataset::new(x, y, kind)?;
    if let Some((p1, p2)) = cfg.shape {
        data = data.with_matrix_shape(p1, p2)?;
    }
    let truth = Truth {
        scenario: cfg.scenario,
        beta: beta.as_slice().to_vec(),
        shape: cfg.shape,
        noise_sd: sd,
        seed: cfg.seed,
    };
    Ok((data, truth))
}
