//! Command-line front end: dataset ingestion and the `fit`, `select`, `df`
//! and `simulate` commands.
//!
//! Every command writes `report.json` (deterministic: no wall-clock fields)
//! and `table.csv` into the output directory; commands that time their work
//! also write `timing.json`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::criteria::{self, GridSpec, Method, SelectOptions, DEFAULT_LAMBDA_MIN_RATIO};
use crate::dataset::{Shape, TraceDataset};
use crate::dof::{degrees_of_freedom_with, DofOptions};
use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DEFAULT_RANK_TOL};
use crate::simulate::{self, SimulationConfig, StudyMethod};
use crate::solver::{self, SolverOptions, DEFAULT_KKT_TOLERANCE, DEFAULT_MAX_ITERATIONS};
use crate::weights::{weights_for, DEFAULT_GAMMA};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Name of the environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "TRACEREG_OUT_DIR";

/// Exit status when outputs were written but some fit did not converge.
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "tracereg",
    version,
    about = "Adaptive nuclear-norm trace regression"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit at a single penalty level.
    Fit(FitArgs),
    /// Choose the penalty level over a grid.
    Select(SelectArgs),
    /// Degrees of freedom of the fit at a single penalty level.
    Df(FitArgs),
    /// Synthetic study comparing the selectors.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridArg {
    Log,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    Bic,
    Aic,
    Aicc,
    Cv,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Bic => Method::Bic,
            MethodArg::Aic => Method::Aic,
            MethodArg::Aicc => Method::Aicc,
            MethodArg::Cv => Method::Cv,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SolverArgs {
    /// Optimality-certificate tolerance.
    #[arg(long, default_value_t = DEFAULT_KKT_TOLERANCE)]
    pub tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERATIONS)]
    pub max_iter: usize,
    /// Exponent of the adaptive weights, in (0, 1].
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    pub gamma: f64,
}

impl SolverArgs {
    fn options(&self) -> SolverOptions {
        SolverOptions {
            max_iterations: self.max_iter,
            kkt_tolerance: self.tol,
            svd_rel_tol: DEFAULT_RANK_TOL,
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DataArgs {
    /// CSV of samples; the `{p1, p2, n}` header lives in the sibling `.json`.
    #[arg(long)]
    pub data: PathBuf,
    /// Center and scale every design column.
    #[arg(long)]
    pub standardize: bool,
    /// Also center and scale the response.
    #[arg(long)]
    pub standardize_response: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GridArgs {
    #[arg(long, value_enum, default_value_t = GridArg::Geometric)]
    pub grid: GridArg,
    #[arg(long, default_value_t = 20)]
    pub grid_count: usize,
    /// `λ_min/λ_max` of the log grid.
    #[arg(long, default_value_t = DEFAULT_LAMBDA_MIN_RATIO)]
    pub lambda_min_ratio: f64,
}

impl GridArgs {
    fn spec(&self) -> GridSpec {
        match self.grid {
            GridArg::Log => GridSpec::Log {
                count: self.grid_count,
                lambda_min_ratio: self.lambda_min_ratio,
            },
            GridArg::Geometric => GridSpec::Geometric {
                count: self.grid_count,
            },
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub lambda: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, env = OUT_DIR_ENV, default_value = "tracereg-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::Bic)]
    pub method: MethodArg,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = criteria::DEFAULT_FOLDS)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, env = OUT_DIR_ENV, default_value = "tracereg-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 8)]
    pub p1: usize,
    #[arg(long, default_value_t = 10)]
    pub p2: usize,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub rank: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 20)]
    pub replicates: usize,
    /// Comma-separated subset of bic, aic, aicc, cv<k>.
    #[arg(long, value_delimiter = ',', default_value = "bic,aic,aicc,cv5,cv10")]
    pub methods: Vec<String>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, env = OUT_DIR_ENV, default_value = "tracereg-out")]
    pub out: PathBuf,
}

/// Parsed dataset plus what standardization did to it.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub data: TraceDataset,
    /// Zero-variance design columns: centered, not scaled.
    pub constant_columns: Vec<usize>,
    pub standardized: bool,
    pub response_standardized: bool,
}

/// Sidecar header path: the data path with its extension replaced by `json`.
pub fn header_path(data: &Path) -> PathBuf {
    data.with_extension("json")
}

/// Reads a dataset: `n` CSV rows of `p₁·p₂` predictor values in column-major
/// `vec` order followed by the response.
pub fn read_dataset(path: &Path) -> Result<TraceDataset> {
    let header_file = header_path(path);
    let header: Shape =
        serde_json::from_str(&fs::read_to_string(&header_file).map_err(|e| Error::Parse {
            path: header_file.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?)?;
    let width = header.p1 * header.p2 + 1;
    let display = path.display().to_string();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: display.clone(),
        line,
        msg,
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut values = Vec::with_capacity(header.n * width);
    let mut rows = 0;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        if record.len() != width {
            return Err(parse_err(
                line,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("`{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value `{field}`")));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows != header.n {
        return Err(parse_err(
            rows,
            format!(
                "header declares n = {} but the file has {rows} rows",
                header.n
            ),
        ));
    }
    let table = DenseMatrix::from_row_slice(rows, width, &values);
    let design = table.columns(0, width - 1).into_owned();
    let responses = table.column(width - 1).into_owned();
    TraceDataset::from_design(header.p1, header.p2, design, responses)
}

/// Writes `data` in the format read by [`read_dataset`].
pub fn write_dataset(data: &TraceDataset, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    for i in 0..data.n() {
        let row: Vec<String> = data
            .design()
            .row(i)
            .iter()
            .chain(std::iter::once(&data.responses()[i]))
            .map(|v| format!("{v:?}"))
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    fs::write(
        header_path(path),
        serde_json::to_string_pretty(&data.shape())?,
    )?;
    Ok(())
}

/// Population mean and standard deviation.
fn moments(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn is_constant(mean: f64, sd: f64) -> bool {
    sd <= 1e-12 * (1.0 + mean.abs())
}

/// Centers each design column and divides it by its (population) standard
/// deviation; zero-variance columns are only centered and reported.
pub fn standardize_columns(data: &TraceDataset) -> Result<(TraceDataset, Vec<usize>)> {
    let mut design = data.design().clone();
    let mut constant = Vec::new();
    for (j, mut col) in design.column_iter_mut().enumerate() {
        let (mean, sd) = moments(col.as_slice());
        col.add_scalar_mut(-mean);
        if is_constant(mean, sd) {
            constant.push(j);
        } else {
            col /= sd;
        }
    }
    let out = TraceDataset::from_design(data.p1(), data.p2(), design, data.responses().clone())?;
    Ok((out, constant))
}

fn standardize_response(data: &TraceDataset) -> Result<TraceDataset> {
    let (mean, sd) = moments(data.responses().as_slice());
    let scale = if is_constant(mean, sd) { 1.0 } else { sd };
    let y: DVector<f64> = data.responses().map(|v| (v - mean) / scale);
    data.with_responses(y)
}

pub fn ingest(args: &DataArgs) -> Result<Ingested> {
    let mut data = read_dataset(&args.data)?;
    let mut constant_columns = Vec::new();
    if args.standardize {
        (data, constant_columns) = standardize_columns(&data)?;
    }
    if args.standardize_response {
        data = standardize_response(&data)?;
    }
    Ok(Ingested {
        data,
        constant_columns,
        standardized: args.standardize,
        response_standardized: args.standardize_response,
    })
}

/// Removes wall-clock fields so that reruns give byte-identical JSON.
pub fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.retain(|k, _| k != "wall_time_seconds" && k != "time_seconds");
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn envelope(command: &str, config: &impl Serialize, body: Value) -> Result<Value> {
    let mut report = json!({
        "tool": "tracereg",
        "version": VERSION,
        "command": command,
        "config": serde_json::to_value(config)?,
    });
    if let (Value::Object(r), Value::Object(b)) = (&mut report, body) {
        r.extend(b);
    }
    Ok(report)
}

fn ingest_summary(ing: &Ingested) -> Value {
    json!({
        "shape": ing.data.shape(),
        "standardized": ing.standardized,
        "response_standardized": ing.response_standardized,
        "constant_columns": ing.constant_columns,
    })
}

/// Paths written by a command.
#[derive(Debug, Clone)]
pub struct Outputs {
    pub report: PathBuf,
    pub table: PathBuf,
    pub timing: Option<PathBuf>,
    /// Every fit converged.
    pub clean: bool,
}

impl Outputs {
    pub fn exit_code(&self) -> i32 {
        if self.clean {
            0
        } else {
            EXIT_PARTIAL
        }
    }
}

fn prepare(out: &Path) -> Result<(PathBuf, PathBuf, PathBuf)> {
    fs::create_dir_all(out)?;
    Ok((
        out.join("report.json"),
        out.join("table.csv"),
        out.join("timing.json"),
    ))
}

pub fn run_fit(args: &FitArgs) -> Result<Outputs> {
    let ing = ingest(&args.data)?;
    let data = &ing.data;
    let w = weights_for(data, args.solver.gamma)?;
    let fit = solver::solve(data, &w, args.lambda, &args.solver.options())?;
    let (report_path, table_path, _) = prepare(&args.out)?;
    let body = json!({
        "data": ingest_summary(&ing),
        "lambda_max": solver::lambda_max(data, &w)?,
        "fit": serde_json::to_value(&fit)?,
    });
    write_json(&report_path, &envelope("fit", args, body)?)?;

    let mut t = csv::Writer::from_path(&table_path)?;
    t.write_record([
        "lambda",
        "rank",
        "rss",
        "objective",
        "optimality_residual",
        "iterations",
        "converged",
    ])?;
    t.write_record([
        fit.lambda.to_string(),
        fit.rank.to_string(),
        fit.rss().to_string(),
        fit.objective.to_string(),
        fit.optimality_residual.to_string(),
        fit.iterations.to_string(),
        fit.converged.to_string(),
    ])?;
    t.flush()?;
    Ok(Outputs {
        report: report_path,
        table: table_path,
        timing: None,
        clean: fit.converged,
    })
}

pub fn run_df(args: &FitArgs) -> Result<Outputs> {
    let ing = ingest(&args.data)?;
    let data = &ing.data;
    let w = weights_for(data, args.solver.gamma)?;
    let fit = solver::solve(data, &w, args.lambda, &args.solver.options())?;
    let dof = degrees_of_freedom_with(data, &w, &fit, args.lambda, &DofOptions::default())?;
    let (report_path, table_path, _) = prepare(&args.out)?;
    let body = json!({
        "data": ingest_summary(&ing),
        "fit": {
            "lambda": fit.lambda,
            "rank": fit.rank,
            "rss": fit.rss(),
            "optimality_residual": fit.optimality_residual,
            "converged": fit.converged,
        },
        "dof": serde_json::to_value(&dof)?,
    });
    write_json(&report_path, &envelope("df", args, body)?)?;

    let mut t = csv::Writer::from_path(&table_path)?;
    t.write_record([
        "lambda",
        "df",
        "rank",
        "gram_rank",
        "branch",
        "condition_estimate",
    ])?;
    t.write_record([
        fit.lambda.to_string(),
        dof.df.to_string(),
        fit.rank.to_string(),
        dof.gram_rank.to_string(),
        serde_json::to_value(dof.branch)?
            .as_str()
            .unwrap_or_default()
            .to_string(),
        dof.condition_estimate.to_string(),
    ])?;
    t.flush()?;
    println!("df = {}", dof.df);
    Ok(Outputs {
        report: report_path,
        table: table_path,
        timing: None,
        clean: fit.converged,
    })
}

fn select_options(args: &SelectArgs) -> SelectOptions {
    SelectOptions {
        gamma: args.solver.gamma,
        solver: args.solver.options(),
        dof: DofOptions::default(),
        folds: args.folds,
        seed: args.seed,
    }
}

pub fn run_select(args: &SelectArgs) -> Result<Outputs> {
    let ing = ingest(&args.data)?;
    let report = criteria::select(
        &ing.data,
        &args.grid.spec(),
        args.method.into(),
        &select_options(args),
    )?;
    let (report_path, table_path, timing_path) = prepare(&args.out)?;
    let mut selection = serde_json::to_value(&report)?;
    strip_timing(&mut selection);
    let body = json!({
        "data": ingest_summary(&ing),
        "selection": selection,
    });
    write_json(&report_path, &envelope("select", args, body)?)?;
    write_json(
        &timing_path,
        &json!({ "wall_time_seconds": report.wall_time_seconds }),
    )?;

    let mut t = csv::Writer::from_path(&table_path)?;
    t.write_record(["method", "lambda_star", "mse", "rank", "time_seconds"])?;
    t.write_record([
        serde_json::to_value(report.method)?
            .as_str()
            .unwrap_or_default()
            .to_string(),
        report.chosen_lambda.to_string(),
        report.mse.to_string(),
        report.chosen_rank.to_string(),
        report.wall_time_seconds.to_string(),
    ])?;
    t.flush()?;

    let mut p = csv::Writer::from_path(args.out.join("path.csv"))?;
    for r in &report.per_lambda {
        p.serialize(r)?;
    }
    p.flush()?;

    println!(
        "method = {:?}, chosen lambda = {}, rank = {}, mse = {}",
        report.method, report.chosen_lambda, report.chosen_rank, report.mse
    );
    Ok(Outputs {
        report: report_path,
        table: table_path,
        timing: Some(timing_path),
        clean: report.all_converged,
    })
}

pub fn simulation_config(args: &SimulateArgs) -> Result<SimulationConfig> {
    let methods = args
        .methods
        .iter()
        .map(|m| m.trim().parse::<StudyMethod>())
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulationConfig {
        p1: args.p1,
        p2: args.p2,
        n: args.n,
        true_rank: args.rank,
        noise_std: args.noise_std,
        seed: args.seed,
        replicates: args.replicates,
        grid: args.grid.spec(),
        methods,
        options: SelectOptions {
            gamma: args.solver.gamma,
            solver: args.solver.options(),
            dof: DofOptions::default(),
            folds: criteria::DEFAULT_FOLDS,
            seed: args.seed,
        },
    })
}

pub fn run_simulate(args: &SimulateArgs) -> Result<Outputs> {
    let cfg = simulation_config(args)?;
    let study = simulate::replicate_study(&cfg)?;
    let (report_path, table_path, timing_path) = prepare(&args.out)?;
    let mut body = serde_json::to_value(&study)?;
    strip_timing(&mut body);
    write_json(
        &report_path,
        &envelope("simulate", args, json!({ "study": body }))?,
    )?;
    let timing: Vec<Value> = study
        .rows
        .iter()
        .map(|r| json!({ "method": r.method, "time_seconds": r.time_seconds }))
        .collect();
    write_json(&timing_path, &Value::Array(timing))?;
    simulate::write_study_csv(&study, &table_path)?;
    for r in &study.rows {
        println!(
            "{:>5}  lambda* = {:.4e}  mse = {:.4e}  rank = {:.2}  time = {:.3}s  recovery = {:.2}",
            r.method.to_string(),
            r.lambda_star,
            r.mse,
            r.rank,
            r.time_seconds,
            r.rank_recovery_rate
        );
    }
    let clean = study
        .replicates
        .iter()
        .all(|r| r.failures.is_empty() && r.outcomes.iter().all(|o| o.all_converged));
    Ok(Outputs {
        report: report_path,
        table: table_path,
        timing: Some(timing_path),
        clean,
    })
}

pub fn run(cli: &Cli) -> Result<Outputs> {
    match &cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Select(a) => run_select(a),
        Command::Df(a) => run_df(a),
        Command::Simulate(a) => run_simulate(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{gaussian, rng};

    fn sample(n: usize) -> TraceDataset {
        let mut r = rng(3);
        let design = gaussian(&mut r, n, 6);
        let y = gaussian(&mut r, n, 1).column(0).into_owned();
        TraceDataset::from_design(2, 3, design, y).unwrap()
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let data = sample(2);
        write_dataset(&data, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), data);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(header_path(&path), r#"{"p1":1,"p2":2,"n":2}"#).unwrap();
        for (body, line) in [
            ("1,2,3\n1,2\n", 2),
            ("1,2,3\n1,x,3\n", 2),
            ("1,NaN,3\n1,2,3\n", 1),
            ("1,2,inf\n1,2,3\n", 1),
        ] {
            fs::write(&path, body).unwrap();
            match read_dataset(&path) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{body:?}"),
                other => panic!("{body:?}: {other:?}"),
            }
        }
        fs::write(&path, "1,2,3\n").unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn standardization_and_constant_columns() {
        let mut data = sample(30);
        let mut design = data.design().clone();
        design.column_mut(4).fill(7.5);
        data = TraceDataset::from_design(2, 3, design, data.responses().clone()).unwrap();
        let (s, constant) = standardize_columns(&data).unwrap();
        assert_eq!(constant, vec![4]);
        for (j, col) in s.design().column_iter().enumerate() {
            let (mean, sd) = moments(col.as_slice());
            assert!(mean.abs() < 1e-10);
            if j == 4 {
                assert_eq!(sd, 0.0);
            } else {
                assert!((sd * sd - 1.0).abs() < 1e-10);
            }
        }
        assert_eq!(s.responses(), data.responses());
    }

    #[test]
    fn strip_timing_is_recursive() {
        let mut v =
            json!({"a": 1, "wall_time_seconds": 2.0, "rows": [{"time_seconds": 1.0, "mse": 3}]});
        strip_timing(&mut v);
        assert_eq!(v, json!({"a": 1, "rows": [{"mse": 3}]}));
    }

    #[test]
    fn parses_every_command() {
        let c = Cli::try_parse_from([
            "tracereg", "select", "--data", "x.csv", "--method", "cv", "--folds", "3",
        ])
        .unwrap();
        assert!(
            matches!(c.command, Command::Select(ref a) if a.folds == 3 && a.method == MethodArg::Cv)
        );
        assert!(
            Cli::try_parse_from(["tracereg", "fit", "--data", "x.csv", "--lambda", "0.1"]).is_ok()
        );
        assert!(
            Cli::try_parse_from(["tracereg", "df", "--data", "x.csv", "--lambda", "0"]).is_ok()
        );
        let c = Cli::try_parse_from(["tracereg", "simulate", "--methods", "bic,cv5"]).unwrap();
        let Command::Simulate(a) = c.command else {
            panic!()
        };
        assert_eq!(
            simulation_config(&a).unwrap().methods,
            vec![StudyMethod::Bic, StudyMethod::Cv(5)]
        );
        assert!(
            Cli::try_parse_from(["tracereg", "select", "--data", "x", "--grid", "spiral"]).is_err()
        );
    }
}
