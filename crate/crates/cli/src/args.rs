use std::path::PathBuf;
use std::str::FromStr;

use alo_core::alo::Engine;
use alo_core::datagen::{GenConfig, Scenario};
use alo_core::regularizers::d_from_triplets;
use alo_core::risk::lambda_grid;
use alo_core::{Constraint, Dataset, ErrorFn, Loss, ModelSpec, Regularizer, SolverConfig, TargetColumn, TaskKind};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{CliError, CliResult};
use crate::manifest::{GridRecord, ModelRecord, Tolerances};

#[derive(Debug, Parser)]
#[command(name = "alo", version, about = "Approximate leave-one-out risk estimation")]
pub struct Cli {
    /// Worker threads for lambda- and fold-parallel work.
    #[arg(long, global = true, env = "ALO_JOBS")]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset from one of the built-in scenarios.
    Generate(GenerateArgs),
    /// Fit one model, optionally with its ALO report.
    Fit(FitArgs),
    /// ALO risk along a lambda grid, optionally next to exact CV.
    Sweep(SweepArgs),
    /// Exact leave-one-out (or K-fold) risk along a lambda grid.
    Loocv(LoocvArgs),
    /// Time path fitting, ALO and LOOCV.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy)]
pub struct Shape(pub usize, pub usize);

impl FromStr for Shape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s.split_once('x').ok_or_else(|| format!("expected P1xP2, got {s:?}"))?;
        let a: usize = a.trim().parse().map_err(|_| format!("bad row count in {s:?}"))?;
        let b: usize = b.trim().parse().map_err(|_| format!("bad column count in {s:?}"))?;
        if a == 0 || b == 0 {
            return Err("shape dimensions must be positive".into());
        }
        Ok(Shape(a, b))
    }
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    #[arg(long, default_value = "iid_gauss_linear")]
    pub scenario: String,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Number of features; ignored when `--shape` is given.
    #[arg(long, default_value_t = 40)]
    pub p: usize,
    /// Matrix observation shape for matrix scenarios, e.g. `4x4`.
    #[arg(long)]
    pub shape: Option<Shape>,
    /// Sparsity, number of pieces or rank, depending on the scenario.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ScenarioArgs {
    pub fn config(&self, seed: u64) -> CliResult<GenConfig> {
        let scenario = Scenario::parse(&self.scenario)?;
        let mut cfg = match self.shape {
            Some(Shape(p1, p2)) => GenConfig::matrix(scenario, self.n, p1, p2, seed),
            None => GenConfig::new(scenario, self.n, self.p, seed),
        };
        if let Some(k) = self.k {
            cfg = cfg.with_k(k);
        }
        if let Some(sd) = self.noise_sd {
            cfg = cfg.with_noise(sd);
        }
        if let Some(rho) = self.rho {
            cfg = cfg.with_rho(rho);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Output CSV; the truth and manifest are written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Input CSV with one observation per row.
    #[arg(long)]
    pub data: PathBuf,
    /// `last` or the header name of the response column.
    #[arg(long, default_value = "last")]
    pub target: String,
    /// Matrix observation shape, e.g. `4x4`, for nuclear, frob-sq and psd models.
    #[arg(long)]
    pub shape: Option<Shape>,
}

impl DataArgs {
    pub fn load(&self, loss: Loss) -> CliResult<Dataset> {
        let target = if self.target == "last" {
            TargetColumn::Last
        } else {
            TargetColumn::Named(self.target.clone())
        };
        let kind = match loss {
            Loss::Squared => TaskKind::Regression,
            Loss::Logistic | Loss::Hinge => TaskKind::Binary,
        };
        if !self.data.exists() {
            return Err(CliError::io(
                &self.data,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
            ));
        }
        let data = Dataset::from_csv(&self.data, &target, kind)?;
        Ok(match self.shape {
            Some(Shape(p1, p2)) => data.with_matrix_shape(p1, p2)?,
            None => data,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegArg {
    Ridge,
    Lasso,
    GroupLasso,
    Fused,
    GenLasso,
    Slope,
    Linf,
    Nuclear,
    FrobSq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Squared,
    Logistic,
    Hinge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConstraintArg {
    PositiveOrthant,
    Psd,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Regularizer.
    #[arg(long, value_enum, default_value_t = RegArg::Lasso)]
    pub model: RegArg,
    #[arg(long, value_enum, default_value_t = LossArg::Squared)]
    pub loss: LossArg,
    /// Fit an unpenalized intercept.
    #[arg(long)]
    pub intercept: bool,
    #[arg(long, value_enum)]
    pub constraint: Option<ConstraintArg>,
    /// Size of the consecutive groups for group-lasso.
    #[arg(long, default_value_t = 5)]
    pub group_size: usize,
    /// `row,col,value` triplets of the gen-lasso matrix D.
    #[arg(long)]
    pub d_triplets: Option<PathBuf>,
    /// Nonincreasing SLOPE weights, comma separated; defaults to a linear ramp from 1 to 1/p.
    #[arg(long, value_delimiter = ',')]
    pub slope_weights: Vec<f64>,
    /// Force an ALO engine instead of the automatic choice.
    #[arg(long)]
    pub engine: Option<String>,
    /// Error function for risks: squared, absolute or zero-one.
    #[arg(long)]
    pub error_fn: Option<String>,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 50_000)]
    pub max_iter: usize,
}

impl ModelArgs {
    pub fn loss(&self) -> Loss {
        match self.loss {
            LossArg::Squared => Loss::Squared,
            LossArg::Logistic => Loss::Logistic,
            LossArg::Hinge => Loss::Hinge,
        }
    }

    pub fn spec(&self, data: &Dataset, lambda: f64) -> CliResult<ModelSpec> {
        let p = data.p();
        let shape = || {
            data.matrix_shape()
                .ok_or_else(|| CliError::Usage(format!("--model {:?} needs --shape P1xP2", self.model)))
        };
        let reg = match self.model {
            RegArg::Ridge => Regularizer::Ridge,
            RegArg::Lasso => Regularizer::Lasso,
            RegArg::GroupLasso => Regularizer::consecutive_groups(p, self.group_size),
            RegArg::Fused => match &self.d_triplets {
                Some(path) => Regularizer::GenLasso { d: d_from_triplets(path, p)? },
                None => Regularizer::fused(p),
            },
            RegArg::GenLasso => {
                let path = self
                    .d_triplets
                    .as_ref()
                    .ok_or_else(|| CliError::Usage("--model gen-lasso needs --d-triplets".into()))?;
                Regularizer::GenLasso { d: d_from_triplets(path, p)? }
            }
            RegArg::Slope => {
                let weights = if self.slope_weights.is_empty() {
                    (0..p).map(|i| 1.0 - i as f64 / p as f64).collect()
                } else {
                    self.slope_weights.clone()
                };
                Regularizer::Slope { weights }
            }
            RegArg::Linf => Regularizer::Linf,
            RegArg::Nuclear => {
                let (p1, p2) = shape()?;
                Regularizer::Nuclear { p1, p2 }
            }
            RegArg::FrobSq => {
                let (p1, p2) = shape()?;
                Regularizer::FrobSq { p1, p2 }
            }
        };
        let mut spec = ModelSpec::new(self.loss(), reg, lambda).with_intercept(self.intercept);
        match self.constraint {
            Some(ConstraintArg::PositiveOrthant) => spec = spec.with_constraint(Constraint::PositiveOrthant),
            Some(ConstraintArg::Psd) => {
                let (p1, p2) = shape()?;
                if p1 != p2 {
                    return Err(CliError::Usage("--constraint psd needs a square --shape".into()));
                }
                spec = spec.with_constraint(Constraint::PsdCone { p: p1 });
            }
            None => {}
        }
        spec.validate(data)?;
        Ok(spec)
    }

    pub fn solver(&self) -> CliResult<SolverConfig> {
        let cfg = SolverConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            ..SolverConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn engine(&self) -> CliResult<Option<Engine>> {
        Ok(self.engine.as_deref().map(Engine::parse).transpose()?)
    }

    pub fn error_fn(&self) -> CliResult<Option<ErrorFn>> {
        Ok(self.error_fn.as_deref().map(ErrorFn::parse).transpose()?)
    }

    pub fn record(&self, spec: &ModelSpec) -> ModelRecord {
        ModelRecord {
            loss: spec.loss.name().to_string(),
            regularizer: spec.reg.name().to_string(),
            intercept: spec.intercept,
            constraint: spec.constraint.as_ref().map(|c| c.name().to_string()),
            error_fn: self.error_fn.clone(),
        }
    }

    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Grid size and range: COUNT MIN MAX.
    #[arg(long, num_args = 3, value_names = ["COUNT", "MIN", "MAX"], required = true, allow_negative_numbers = true)]
    pub lambda_grid: Vec<String>,
    /// Log-spaced grid (the default).
    #[arg(long, conflicts_with = "linear")]
    pub log: bool,
    /// Linearly spaced grid.
    #[arg(long)]
    pub linear: bool,
}

impl GridArgs {
    /// Descending grid; an empty or invalid grid is a usage error.
    pub fn values(&self) -> CliResult<GridRecord> {
        let [count, min, max] = self.lambda_grid.as_slice() else {
            return Err(CliError::Usage("--lambda-grid takes COUNT MIN MAX".into()));
        };
        let usage = |what: &str, v: &str| CliError::Usage(format!("--lambda-grid: cannot parse {what} {v:?}"));
        let count: usize = count.parse().map_err(|_| usage("count", count))?;
        let min: f64 = min.parse().map_err(|_| usage("min", min))?;
        let max: f64 = max.parse().map_err(|_| usage("max", max))?;
        let log = !self.linear;
        let values = lambda_grid(count, min, max, log).map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(GridRecord {
            count,
            min,
            max,
            log,
            values,
        })
    }
}

/// Risk estimate requested from `sweep --methods`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Alo,
    Loocv,
    KFold(usize),
}

impl Method {
    pub fn name(self) -> String {
        match self {
            Method::Alo => "alo".into(),
            Method::Loocv => "loocv".into(),
            Method::KFold(k) => format!("kfold{k}"),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "alo" => Ok(Method::Alo),
            "loocv" => Ok(Method::Loocv),
            other => other
                .strip_prefix("kfold")
                .and_then(|k| k.parse().ok())
                .filter(|&k: &usize| k >= 2)
                .map(Method::KFold)
                .ok_or_else(|| format!("unknown method {other:?}; expected alo, loocv or kfoldK with K >= 2")),
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub lambda: f64,
    /// Output JSON with the fitted coefficients.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the ALO report to this JSON file.
    #[arg(long)]
    pub alo_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Comma-separated risk estimates: alo, loocv, kfoldK.
    #[arg(long, value_delimiter = ',', default_value = "alo")]
    pub methods: Vec<Method>,
    /// Seed for the K-fold split.
    #[arg(long, default_value_t = 0)]
    pub cv_seed: u64,
    /// Output directory for the per-lambda reports, the risk curve and the manifest.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LoocvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Use K-fold cross-validation instead of leave-one-out.
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub cv_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Fit,
    Alo,
    Loocv,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Fit => "fit",
            Stage::Alo => "alo",
            Stage::Loocv => "loocv",
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Benchmark on this CSV instead of simulated data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "last")]
    pub target: String,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Repetitions; simulated data uses seeds `seed..seed+repeats`.
    #[arg(long, default_value_t = 3)]
    pub repeats: i64,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "fit,alo,loocv")]
    pub stages: Vec<Stage>,
    /// Output CSV with columns n, p, stage, mean_s, sd_s, repeats.
    #[arg(long)]
    pub out: PathBuf,
}
