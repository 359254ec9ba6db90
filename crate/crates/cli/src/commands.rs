use std::path::Path;
use std::time::Instant;

use alo_core::alo::{self, AloReport};
use alo_core::datagen;
use alo_core::oracle::{cross_validate_path, CvOutcome, CvPlan};
use alo_core::risk::{assemble_risk_curve, RiskEntry};
use alo_core::solvers::{self, fit_path};
use alo_core::{Dataset, Loss, TaskKind};
use serde::Serialize;

use crate::args::{
    BenchArgs, Command, DataArgs, FitArgs, GenerateArgs, LoocvArgs, Method, ModelArgs, Stage, SweepArgs,
};
use crate::error::{CliError, CliResult};
use crate::manifest::{manifest_path, write_atomic, write_json, GridRecord, RunManifest};

pub fn run(command: &Command, jobs: Option<usize>) -> CliResult<()> {
    match command {
        Command::Generate(a) => generate(a, jobs),
        Command::Fit(a) => fit(a, jobs),
        Command::Sweep(a) => sweep(a, jobs),
        Command::Loocv(a) => loocv(a, jobs),
        Command::Bench(a) => bench(a, jobs),
    }
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> alo_core::Result<()>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn numeric_failure(failures: Vec<String>) -> CliResult<()> {
    if failures.is_empty() {
        return Ok(());
    }
    for f in &failures {
        eprintln!("warning: {f}");
    }
    Err(CliError::Numeric(format!("{} numeric failure(s); outputs were still written", failures.len())))
}

fn generate(args: &GenerateArgs, jobs: Option<usize>) -> CliResult<()> {
    let mut manifest = RunManifest::new("generate");
    let start = Instant::now();
    let cfg = args.scenario.config(args.scenario.seed)?;
    let (data, truth) = datagen::generate(&cfg)?;
    manifest.stage("generate", start.elapsed().as_secs_f64());

    write_atomic(&args.out, &csv_bytes(|b| data.write_csv(b))?)?;
    let truth_path = args.out.with_extension("truth.json");
    write_json(&truth_path, &truth)?;
    manifest.seeds.insert("data".into(), cfg.seed);
    manifest.jobs = jobs;
    manifest.outputs = vec![args.out.clone(), truth_path];
    manifest.write(&manifest_path(&args.out))
}

fn base_manifest(command: &str, model: &ModelArgs, jobs: Option<usize>) -> RunManifest {
    let mut m = RunManifest::new(command);
    m.tolerances = Some(model.tolerances());
    m.engine_override = model.engine.clone();
    m.jobs = jobs;
    m
}

fn fit(args: &FitArgs, jobs: Option<usize>) -> CliResult<()> {
    let mut manifest = base_manifest("fit", &args.model, jobs);
    let data = args.data.load(args.model.loss())?;
    let spec = args.model.spec(&data, args.lambda)?;
    let cfg = args.model.solver()?;
    let engine = args.model.engine()?;
    let error_fn = args.model.error_fn()?;
    manifest.model = Some(args.model.record(&spec));
    manifest.grid = Some(GridRecord {
        count: 1,
        min: args.lambda,
        max: args.lambda,
        log: true,
        values: vec![args.lambda],
    });

    let start = Instant::now();
    let fitted = solvers::fit(&spec, &data, &cfg)?;
    manifest.stage("fit", start.elapsed().as_secs_f64());
    write_json(&args.out, &fitted)?;
    manifest.outputs.push(args.out.clone());

    let mut failures = Vec::new();
    if !fitted.converged {
        failures.push(format!("fit did not converge (residual {:.3e})", fitted.grad_norm));
    }
    if let Some(path) = &args.alo_out {
        let start = Instant::now();
        match alo::estimate(&spec, &data, &fitted, engine, error_fn) {
            Ok(report) => {
                manifest.stage("alo", start.elapsed().as_secs_f64());
                write_json(path, &report)?;
                manifest.outputs.push(path.clone());
            }
            Err(e) => failures.push(format!("alo: {e}")),
        }
    }
    manifest.write(&manifest_path(&args.out))?;
    numeric_failure(failures)
}

/// Exact CV risk entries along the grid, plus failures worth reporting.
fn cv_entries(
    method: Method,
    outcomes: &[CvOutcome],
    grid: &[f64],
    entries: &mut Vec<RiskEntry>,
    failures: &mut Vec<String>,
) {
    for (o, &lambda) in outcomes.iter().zip(grid) {
        let mut e = RiskEntry::new(lambda, method.name(), o.risk.unwrap_or(f64::NAN), o.seconds);
        e.warnings = o.warnings.len();
        entries.push(e);
        if o.failed > 0 || o.risk.is_none() {
            failures.push(format!("{} at lambda {lambda:e}: {} fold(s) failed", method.name(), o.failed));
        }
    }
}

fn cv_plan(method: Method, n: usize, seed: u64) -> CliResult<CvPlan> {
    Ok(match method {
        Method::Loocv => CvPlan::loocv(n),
        Method::KFold(k) => CvPlan::kfold(n, k, seed)?,
        Method::Alo => unreachable!("ALO has no fold plan"),
    })
}

fn write_curve(dir: &Path, entries: &[RiskEntry], manifest: &mut RunManifest) -> CliResult<()> {
    let curve = assemble_risk_curve(entries)?;
    let path = dir.join("risk_curve.csv");
    write_atomic(&path, &csv_bytes(|b| curve.write_csv(b))?)?;
    manifest.outputs.push(path);
    Ok(())
}

fn sweep(args: &SweepArgs, jobs: Option<usize>) -> CliResult<()> {
    let mut manifest = base_manifest("sweep", &args.model, jobs);
    let grid = args.grid.values()?;
    let mut methods: Vec<Method> = Vec::new();
    for m in &args.methods {
        if !methods.contains(m) {
            methods.push(*m);
        }
    }
    let data = args.data.load(args.model.loss())?;
    let spec = args.model.spec(&data, grid.values[0])?;
    let cfg = args.model.solver()?;
    let engine = args.model.engine()?;
    let error_fn = args.model.error_fn()?;
    create_dir(&args.out)?;
    manifest.model = Some(args.model.record(&spec));
    if methods.iter().any(|m| matches!(m, Method::KFold(_))) {
        manifest.seeds.insert("cv".into(), args.cv_seed);
    }

    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for &method in &methods {
        let start = Instant::now();
        if method == Method::Alo {
            let points = alo::sweep(&spec, &data, &grid.values, &cfg, engine, error_fn);
            for (k, pt) in points.iter().enumerate() {
                let seconds = pt.fit_seconds + pt.alo_seconds;
                let mut e = RiskEntry::new(pt.lambda, "alo", f64::NAN, seconds);
                match &pt.report {
                    Ok(report) => {
                        let path = args.out.join(format!("alo_{k:03}.json"));
                        write_json(&path, report)?;
                        manifest.outputs.push(path);
                        e.risk = report.risk.unwrap_or(f64::NAN);
                        e.warnings = report.warnings.len();
                        if report.risk.is_none() {
                            failures.push(format!("alo at lambda {:e}: no risk", pt.lambda));
                        }
                    }
                    Err(err) => {
                        e.warnings = 1;
                        failures.push(format!("alo at lambda {:e}: {err}", pt.lambda));
                    }
                }
                entries.push(e);
            }
        } else {
            let plan = cv_plan(method, data.n(), args.cv_seed)?;
            let outcomes = cross_validate_path(&spec, &data, &cfg, &plan, &grid.values, error_fn)?;
            cv_entries(method, &outcomes, &grid.values, &mut entries, &mut failures);
        }
        manifest.stage(&method.name(), start.elapsed().as_secs_f64());
    }
    write_curve(&args.out, &entries, &mut manifest)?;
    manifest.grid = Some(grid);
    manifest.write(&args.out.join("manifest.json"))?;
    numeric_failure(failures)
}

#[derive(Serialize)]
struct CvRecord<'a> {
    lambda: f64,
    method: String,
    #[serde(flatten)]
    outcome: &'a CvOutcome,
}

fn loocv(args: &LoocvArgs, jobs: Option<usize>) -> CliResult<()> {
    let mut manifest = base_manifest("loocv", &args.model, jobs);
    let grid = args.grid.values()?;
    let data = args.data.load(args.model.loss())?;
    let spec = args.model.spec(&data, grid.values[0])?;
    let cfg = args.model.solver()?;
    let error_fn = args.model.error_fn()?;
    let method = match args.folds {
        Some(k) => Method::KFold(k),
        None => Method::Loocv,
    };
    let plan = cv_plan(method, data.n(), args.cv_seed)?;
    create_dir(&args.out)?;
    manifest.model = Some(args.model.record(&spec));
    if args.folds.is_some() {
        manifest.seeds.insert("cv".into(), args.cv_seed);
    }

    let start = Instant::now();
    let outcomes = cross_validate_path(&spec, &data, &cfg, &plan, &grid.values, error_fn)?;
    manifest.stage(&method.name(), start.elapsed().as_secs_f64());
    for (k, (o, &lambda)) in outcomes.iter().zip(&grid.values).enumerate() {
        let path = args.out.join(format!("cv_{k:03}.json"));
        let record = CvRecord {
            lambda,
            method: method.name(),
            outcome: o,
        };
        write_json(&path, &record)?;
        manifest.outputs.push(path);
    }
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    cv_entries(method, &outcomes, &grid.values, &mut entries, &mut failures);
    write_curve(&args.out, &entries, &mut manifest)?;
    manifest.grid = Some(grid);
    manifest.write(&args.out.join("manifest.json"))?;
    numeric_failure(failures)
}

/// Sample mean and standard deviation; the deviation is undefined for one sample.
fn mean_sd(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

fn bench_data(args: &BenchArgs, rep: u64) -> CliResult<Dataset> {
    match &args.data {
        Some(path) => DataArgs {
            data: path.clone(),
            target: args.target.clone(),
            shape: args.scenario.shape,
        }
        .load(args.model.loss()),
        None => {
            let cfg = args.scenario.config(args.scenario.seed + rep)?;
            let (data, _) = datagen::generate(&cfg)?;
            if data.kind() == TaskKind::Binary || args.model.loss() == Loss::Squared {
                Ok(data)
            } else {
                Err(CliError::Usage(format!(
                    "scenario {} gives real-valued responses; {} loss needs labels",
                    args.scenario.scenario,
                    args.model.loss().name()
                )))
            }
        }
    }
}

fn bench(args: &BenchArgs, jobs: Option<usize>) -> CliResult<()> {
    if args.repeats < 1 {
        return Err(CliError::Usage(format!("--repeats must be at least 1, got {}", args.repeats)));
    }
    let repeats = args.repeats as usize;
    let mut manifest = base_manifest("bench", &args.model, jobs);
    let grid = args.grid.values()?;
    let cfg = args.model.solver()?;
    let engine = args.model.engine()?;
    let error_fn = args.model.error_fn()?;
    let mut stages: Vec<Stage> = Vec::new();
    for s in &args.stages {
        if !stages.contains(s) {
            stages.push(*s);
        }
    }

    let mut times: Vec<Vec<f64>> = vec![Vec::with_capacity(repeats); stages.len()];
    let mut failures = Vec::new();
    let mut dims = (0, 0);
    for rep in 0..repeats as u64 {
        let data = bench_data(args, rep)?;
        dims = (data.n(), data.p());
        let spec = args.model.spec(&data, grid.values[0])?;
        if manifest.model.is_none() {
            manifest.model = Some(args.model.record(&spec));
        }
        let start = Instant::now();
        let path = fit_path(&spec, &data, &grid.values, &cfg);
        let t_fit = start.elapsed().as_secs_f64();
        let start = Instant::now();
        if stages.contains(&Stage::Alo) {
            for (f, &lambda) in path.iter().zip(&grid.values) {
                let res = match f {
                    Ok(f) => alo::estimate(&spec.with_lambda(lambda), &data, f, engine, error_fn).map(|_: AloReport| ()),
                    Err(e) => Err(e.clone()),
                };
                if let Err(e) = res {
                    failures.push(format!("repeat {rep}, lambda {lambda:e}: {e}"));
                }
            }
        }
        let t_alo = t_fit + start.elapsed().as_secs_f64();
        for (slot, stage) in stages.iter().enumerate() {
            let t = match stage {
                Stage::Fit => t_fit,
                Stage::Alo => t_alo,
                Stage::Loocv => {
                    let start = Instant::now();
                    let plan = CvPlan::loocv(data.n());
                    let out = cross_validate_path(&spec, &data, &cfg, &plan, &grid.values, error_fn)?;
                    let failed: usize = out.iter().map(|o| o.failed).sum();
                    if failed > 0 {
                        failures.push(format!("repeat {rep}: {failed} leave-one-out refit(s) failed"));
                    }
                    start.elapsed().as_secs_f64()
                }
            };
            times[slot].push(t);
        }
    }

    let mut wr = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Usage(format!("cannot format bench table: {e}"));
    wr.write_record(["n", "p", "stage", "mean_s", "sd_s", "repeats"]).map_err(csv_err)?;
    for (stage, ts) in stages.iter().zip(&times) {
        let (mean, sd) = mean_sd(ts);
        wr.write_record([
            dims.0.to_string(),
            dims.1.to_string(),
            stage.name().to_string(),
            format!("{mean:.6}"),
            sd.map(|s| format!("{s:.6}")).unwrap_or_default(),
            repeats.to_string(),
        ])
        .map_err(csv_err)?;
        manifest.stage(stage.name(), ts.iter().sum());
    }
    let bytes = wr.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
    write_atomic(&args.out, &bytes)?;
    if args.data.is_none() {
        for rep in 0..repeats as u64 {
            manifest.seeds.insert(format!("data_{rep}"), args.scenario.seed + rep);
        }
    }
    manifest.grid = Some(grid);
    manifest.outputs.push(args.out.clone());
    manifest.write(&manifest_path(&args.out))?;
    numeric_failure(failures)
}
