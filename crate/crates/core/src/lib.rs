//! Approximate leave-one-out (ALO) risk estimation for penalized regression.
//!
//! Fit a model once with [`solvers::fit`], then turn the fit into leave-one-out
//! predictions with [`alo::estimate`]. The [`oracle`] module refits the model
//! for ground truth and [`datagen`] produces reproducible synthetic problems.

pub mod alo;
pub mod constraints;
pub mod data;
pub mod datagen;
pub mod error;
pub mod linalg;
pub mod losses;
pub mod oracle;
pub mod regularizers;
pub mod risk;
pub mod solvers;

pub use alo::{AloReport, Engine};
pub use constraints::Constraint;
pub use data::{Dataset, FitResult, ModelSpec, TargetColumn, TaskKind};
pub use error::{AloError, Result};
pub use losses::Loss;
pub use regularizers::Regularizer;
pub use risk::{eval_risk, ErrorFn, RiskCurve, RiskEntry};
pub use solvers::SolverConfig;
