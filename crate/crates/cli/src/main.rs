#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod bench;
mod model;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use levy_scale::applications::{two_sided_exit, StationaryWorkload};
use levy_scale::mc::{estimate_hitting, estimate_stationary_workload_with, estimate_two_sided_exit, McConfig, McEstimate};
use levy_scale::roots::{compare_spectrum, find_zq};
use levy_scale::scale::{solve, solve_ladder, ReprParams, Residuals, ScaleRepr, SolveOptions, SolveReport};
use levy_scale::{Error, LevyModel};
use num_complex::Complex64;
use serde_json::{json, Value};

use crate::model::ModelFile;

#[derive(Debug)]
pub enum CliError {
    Lib(Error),
    Usage { kind: &'static str, message: String },
    /// Stdout was closed by the reader.
    Closed,
}

impl CliError {
    pub fn usage(kind: &'static str, message: impl Into<String>) -> Self {
        CliError::Usage {
            kind,
            message: message.into(),
        }
    }

    pub fn io(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            CliError::Closed
        } else {
            CliError::usage("Io", e.to_string())
        }
    }

    pub fn json(e: serde_json::Error) -> Self {
        match e.io_error_kind() {
            Some(kind) => CliError::io(kind.into()),
            None => CliError::usage("Io", e.to_string()),
        }
    }

    pub fn csv(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(e) => CliError::io(e),
            other => CliError::usage("Io", format!("{other:?}")),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Closed => 0,
            CliError::Usage { .. } => 2,
            CliError::Lib(e) if e.is_validation() => 2,
            CliError::Lib(e) if e.is_root_failure() => 4,
            CliError::Lib(_) => 3,
        }
    }

    fn to_json(&self) -> Value {
        match self {
            CliError::Usage { kind, message } => json!({ "error": kind, "message": message }),
            CliError::Lib(e) => json!({ "error": e.kind(), "message": e.to_string() }),
            CliError::Closed => Value::Null,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "levy-scale", version, about = "Scale functions of spectrally-negative Levy processes with phase-type jumps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the first-passage generator and report the iteration.
    Solve(SolveArgs),
    /// Evaluate W_q on a grid.
    Eval(EvalArgs),
    /// Benchmark the iteration on random Coxian ensembles.
    Bench(bench::BenchArgs),
    /// Monte Carlo estimate against the analytic value.
    Simulate(SimulateArgs),
    /// Eigenvalues of G against the zeros Z_q.
    Spectrum(SpectrumArgs),
}

#[derive(clap::Args)]
struct SolverFlags {
    /// Stopping tolerance on consecutive scalar iterates.
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    /// Starting value a_0 (sigma > 0).
    #[arg(long, conflicts_with = "pi0t")]
    a0: Option<f64>,
    /// Starting value pi_0 t (sigma = 0).
    #[arg(long)]
    pi0t: Option<f64>,
}

impl SolverFlags {
    fn options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            start: self.a0.or(self.pi0t),
        }
    }
}

#[derive(clap::Args)]
struct CriticalFlag {
    /// Killing rate used in place of q = 0 when E X_1 = 0.
    #[arg(long)]
    q_epsilon: Option<f64>,
}

impl CriticalFlag {
    fn effective_q(&self, model: &LevyModel, q: f64) -> CliResult<f64> {
        match self.q_epsilon {
            Some(eps) if !(eps > 0.0 && eps.is_finite()) => {
                Err(CliError::usage("BadParameter", format!("--q-epsilon must be positive, got {eps}")))
            }
            Some(eps) if model.violates_a1(q) => Ok(eps),
            _ => Ok(q),
        }
    }
}

#[derive(clap::Args)]
struct SolveArgs {
    model: PathBuf,
    #[command(flatten)]
    critical: CriticalFlag,
    /// Killing rate; defaults to the model file's q_list.
    #[arg(long)]
    q: Option<f64>,
    #[command(flatten)]
    solver: SolverFlags,
    /// Solve each q of q_list from the default start.
    #[arg(long)]
    no_warm_start: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    New,
    Roots,
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

#[derive(clap::Args)]
struct EvalArgs {
    model: PathBuf,
    #[command(flatten)]
    critical: CriticalFlag,
    #[arg(long)]
    q: f64,
    /// Inclusive grid `start:stop:step`.
    #[arg(long)]
    x_grid: String,
    #[arg(long, value_enum, default_value_t = Method::New)]
    method: Method,
    #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
    out: OutFormat,
    #[arg(long, default_value_t = 1e-13)]
    tol: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum What {
    Hit,
    Exit,
    Workload,
}

#[derive(clap::Args)]
struct SimulateArgs {
    model: PathBuf,
    #[command(flatten)]
    critical: CriticalFlag,
    #[arg(long, default_value_t = 0.0)]
    q: f64,
    #[arg(long, value_enum)]
    what: What,
    #[arg(long)]
    x: f64,
    #[arg(long)]
    y: Option<f64>,
    #[arg(long, default_value_t = 100_000)]
    paths: u64,
    /// Euler step for sigma > 0.
    #[arg(long, default_value_t = 1e-4)]
    dt: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1e3)]
    horizon: f64,
}

#[derive(clap::Args)]
struct SpectrumArgs {
    model: PathBuf,
    #[command(flatten)]
    critical: CriticalFlag,
    #[arg(long)]
    q: f64,
}

fn complex_json(z: Complex64) -> Value {
    json!([z.re, z.im])
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn residuals_json(r: &Residuals) -> Value {
    match r {
        Residuals::Brownian {
            scalar_eq,
            vector_eq,
            reduced_eq,
        } => json!({ "scalar_eq": scalar_eq, "vector_eq": vector_eq, "reduced_eq": reduced_eq }),
        Residuals::CompoundPoisson { vector_eq, reduced_eq } => {
            json!({ "vector_eq": vector_eq, "reduced_eq": reduced_eq })
        }
    }
}

fn solve_json(model: &LevyModel, repr: &ScaleRepr, report: &SolveReport, seconds: f64) -> Value {
    let root = repr.phi_root();
    let mut out = json!({
        "q": repr.q(),
        "phi": root.phi,
        "psi_prime_at_phi": root.psi_prime_at_phi,
        "mean_x1": model.mean_x1(),
        "explicit": report.explicit,
        "iterations": report.iterations,
        "start_value": report.start_value,
        "final_gap": report.final_gap,
        "empirical_rate": report.empirical_rate,
        "theoretical_rate": report.theoretical_rate,
        "interval": [report.interval.0, report.interval.1],
        "residuals": residuals_json(&report.residuals),
        "residuals_ok": report.residuals_ok,
        "wall_time_s": seconds,
    });
    let obj = out.as_object_mut().expect("object");
    match repr.params() {
        ReprParams::Brownian { a, b } => {
            obj.insert("kind".into(), json!("brownian"));
            obj.insert("a".into(), json!(a));
            obj.insert("b".into(), json!(b.iter().copied().collect::<Vec<f64>>()));
        }
        ReprParams::CompoundPoisson { pi } => {
            obj.insert("kind".into(), json!("compound_poisson"));
            obj.insert("pi".into(), json!(pi.iter().copied().collect::<Vec<f64>>()));
        }
    }
    out
}

fn cmd_solve(args: &SolveArgs) -> CliResult<Value> {
    let file = ModelFile::read(&args.model)?;
    let model = file.to_model()?;
    let opts = args.solver.options();
    match (args.q, &file.q_list) {
        (Some(q), _) => {
            let q = args.critical.effective_q(&model, q)?;
            let start = Instant::now();
            let (repr, report) = solve(&model, q, &opts)?;
            Ok(solve_json(&model, &repr, &report, start.elapsed().as_secs_f64()))
        }
        (None, Some(qs)) if !qs.is_empty() => {
            let start = Instant::now();
            let qs = qs
                .iter()
                .map(|&q| args.critical.effective_q(&model, q))
                .collect::<CliResult<Vec<f64>>>()?;
            let results = solve_ladder(&model, &qs, &opts, !args.no_warm_start);
            let seconds = start.elapsed().as_secs_f64();
            let mut out = Vec::with_capacity(results.len());
            for r in results {
                let (repr, report) = r?;
                out.push(solve_json(&model, &repr, &report, seconds));
            }
            Ok(json!({ "warm_start": !args.no_warm_start, "wall_time_s": seconds, "solutions": out }))
        }
        _ => Err(CliError::usage("BadParameter", "give --q or a non-empty q_list in the model file")),
    }
}

/// Inclusive uniform grid from `start:stop:step`.
fn parse_grid(spec: &str) -> CliResult<(f64, f64, usize)> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || CliError::usage("BadParameter", format!("grid must be start:stop:step, got {spec:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<CliResult<_>>()?;
    let (start, stop, step) = (nums[0], nums[1], nums[2]);
    if !(start >= 0.0) || !(step > 0.0) || !stop.is_finite() || stop < start {
        return Err(CliError::usage("BadParameter", format!("empty or invalid grid {spec:?}")));
    }
    let count = ((stop - start) / step * (1.0 + 1e-12)).floor() as usize + 1;
    Ok((start, step, count))
}

struct EvalTable {
    xs: Vec<f64>,
    new: Option<Vec<f64>>,
    roots: Option<Vec<f64>>,
}

fn cmd_eval(args: &EvalArgs) -> CliResult<(EvalTable, OutFormat)> {
    let (start, step, count) = parse_grid(&args.x_grid)?;
    let model = ModelFile::read(&args.model)?.to_model()?;
    let q = args.critical.effective_q(&model, args.q)?;
    let xs: Vec<f64> = (0..count).map(|k| start + k as f64 * step).collect();
    let new = if args.method != Method::Roots {
        let (repr, _) = solve(&model, q, &SolveOptions::with_tol(args.tol))?;
        Some(repr.eval_w_grid(start, step, count)?)
    } else {
        None
    };
    let roots = if args.method != Method::New {
        let r = find_zq(&model, q)?;
        Some(xs.iter().map(|&x| r.eval_w_roots(x)).collect::<levy_scale::Result<Vec<_>>>()?)
    } else {
        None
    };
    Ok((EvalTable { xs, new, roots }, args.out))
}

fn write_eval(table: &EvalTable, format: OutFormat) -> CliResult<()> {
    let io = CliError::io;
    let stdout = std::io::stdout();
    match format {
        OutFormat::Csv => {
            let mut w = csv::Writer::from_writer(stdout.lock());
            let mut header = vec!["x"];
            if table.new.is_some() {
                header.push("W_q");
            }
            if table.roots.is_some() {
                header.push("W_q_roots");
            }
            if table.new.is_some() && table.roots.is_some() {
                header.push("abs_err");
            }
            let csv_err = CliError::csv;
            w.write_record(&header).map_err(csv_err)?;
            for (k, x) in table.xs.iter().enumerate() {
                let mut row = vec![fmt_float(*x)];
                if let Some(v) = &table.new {
                    row.push(fmt_float(v[k]));
                }
                if let Some(v) = &table.roots {
                    row.push(fmt_float(v[k]));
                }
                if let (Some(a), Some(b)) = (&table.new, &table.roots) {
                    row.push(fmt_float((a[k] - b[k]).abs()));
                }
                w.write_record(&row).map_err(csv_err)?;
            }
            w.flush().map_err(io)?;
        }
        OutFormat::Json => {
            let rows: Vec<Value> = table
                .xs
                .iter()
                .enumerate()
                .map(|(k, x)| {
                    let mut row = json!({ "x": x });
                    let obj = row.as_object_mut().expect("object");
                    if let Some(v) = &table.new {
                        obj.insert("W_q".into(), json!(v[k]));
                    }
                    if let Some(v) = &table.roots {
                        obj.insert("W_q_roots".into(), json!(v[k]));
                    }
                    if let (Some(a), Some(b)) = (&table.new, &table.roots) {
                        obj.insert("abs_err".into(), json!((a[k] - b[k]).abs()));
                    }
                    row
                })
                .collect();
            let max_abs_err = match (&table.new, &table.roots) {
                (Some(a), Some(b)) => json!(a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)),
                _ => Value::Null,
            };
            let out = json!({ "rows": rows, "max_abs_err": max_abs_err });
            let mut lock = stdout.lock();
            serde_json::to_writer_pretty(&mut lock, &out).map_err(CliError::json)?;
            writeln!(lock).map_err(io)?;
        }
    }
    Ok(())
}

fn estimate_json(e: &McEstimate) -> Value {
    json!({
        "value": e.value,
        "stderr": e.stderr,
        "n_paths": e.n_paths,
        "scheme": e.scheme.name(),
        "dt": e.dt,
        "undecided": e.undecided,
        "bias_bound": e.bias_bound,
    })
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult<Value> {
    if args.paths == 0 {
        return Err(CliError::usage("BadParameter", "--paths must be positive"));
    }
    let model = ModelFile::read(&args.model)?.to_model()?;
    let cfg = McConfig {
        n_paths: args.paths,
        seed: args.seed,
        dt: args.dt,
        horizon: args.horizon,
    };
    let q = match args.what {
        What::Workload => args.q,
        _ => args.critical.effective_q(&model, args.q)?,
    };
    let tight = SolveOptions::with_tol(1e-13);
    let (estimate, analytic) = match args.what {
        What::Hit => {
            let (repr, _) = solve(&model, q, &tight)?;
            (estimate_hitting(&model, q, args.x, &cfg)?, repr.hitting_prob(args.x)?)
        }
        What::Exit => {
            let y = args
                .y
                .ok_or_else(|| CliError::usage("BadParameter", "--what exit needs --y"))?;
            let (repr, _) = solve(&model, q, &tight)?;
            let analytic = two_sided_exit(&repr, args.x, y)?;
            (estimate_two_sided_exit(&model, q, args.x, y, &cfg)?, analytic)
        }
        What::Workload => {
            if args.q != 0.0 {
                return Err(CliError::usage("BadParameter", "the stationary workload has no killing; omit --q"));
            }
            let analytic = StationaryWorkload::new(&model)?.cdf(args.x)?;
            (estimate_stationary_workload_with(&model, args.x, &cfg)?, analytic)
        }
    };
    let diff = (estimate.value - analytic).abs();
    Ok(json!({
        "what": match args.what { What::Hit => "hit", What::Exit => "exit", What::Workload => "workload" },
        "q": q,
        "x": args.x,
        "y": args.y,
        "seed": args.seed,
        "estimate": estimate_json(&estimate),
        "analytic": analytic,
        "abs_diff": diff,
        "z_score": estimate.z_score(analytic),
        "within_3_stderr": diff <= 3.0 * estimate.stderr,
    }))
}

fn cmd_spectrum(args: &SpectrumArgs) -> CliResult<Value> {
    let model = ModelFile::read(&args.model)?.to_model()?;
    let q = args.critical.effective_q(&model, args.q)?;
    let (repr, _) = solve(&model, q, &SolveOptions::with_tol(1e-13))?;
    let roots = find_zq(&model, q)?;
    let cmp = compare_spectrum(&repr, &roots)?;
    let pairs: Vec<Value> = cmp
        .pairs
        .iter()
        .map(|(e, z, d)| json!({ "eigenvalue": complex_json(*e), "zero": complex_json(*z), "distance": d }))
        .collect();
    Ok(json!({
        "q": q,
        "phi": roots.phi_root.phi,
        "pairs": pairs,
        "max_distance": cmp.max_distance,
        "unmatched": {
            "eigenvalues": cmp.unmatched_eigenvalues.iter().map(|z| complex_json(*z)).collect::<Vec<_>>(),
            "zeros": cmp.unmatched_zeros.iter().map(|z| complex_json(*z)).collect::<Vec<_>>(),
        },
        "cancelled": roots.cancelled.iter().map(|z| complex_json(*z)).collect::<Vec<_>>(),
        "counts_match": cmp.counts_match(),
    }))
}

fn print_json(v: &Value) -> CliResult<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v).map_err(CliError::json)?;
    writeln!(out).map_err(CliError::io)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Solve(args) => print_json(&cmd_solve(&args)?),
        Command::Eval(args) => {
            let (table, format) = cmd_eval(&args)?;
            write_eval(&table, format)
        }
        Command::Bench(args) => print_json(&bench::run(&args)?),
        Command::Simulate(args) => print_json(&cmd_simulate(&args)?),
        Command::Spectrum(args) => print_json(&cmd_spectrum(&args)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Closed) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
