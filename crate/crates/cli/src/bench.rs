use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use levy_scale::ph::sample_coxian;
use levy_scale::rng::derive_seed;
use levy_scale::scale::{solve, SolveOptions};
use levy_scale::LevyModel;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::{CliError, CliResult};

const RATE_BIN: f64 = 0.02;

#[derive(clap::Args)]
pub struct BenchArgs {
    /// Number of Coxian phases.
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 1000)]
    replications: usize,
    /// Comma-separated killing rates.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 0.1, 0.0])]
    q: Vec<f64>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    drift: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Upper bound for the per-phase exit probabilities of the Coxian sampler.
    #[arg(long, default_value_t = 0.9)]
    pkill_max: f64,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    /// Directory for replications.csv, iterations_hist.csv and rates_hist.csv.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct Row {
    pub replication: usize,
    pub q: f64,
    pub mean_x1: f64,
    pub explicit: bool,
    pub iterations: usize,
    pub empirical_rate: Option<f64>,
    pub theoretical_rate: Option<f64>,
    pub seconds: f64,
    pub error: Option<String>,
}

fn thread_cap() -> CliResult<Option<usize>> {
    match std::env::var("LEVY_SCALE_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::usage("BadParameter", format!("LEVY_SCALE_THREADS must be a positive integer, got {s:?}"))),
        },
        Err(_) => Ok(None),
    }
}

fn replicate(args: &BenchArgs, rep: usize) -> Vec<Row> {
    let seed = derive_seed(args.seed, rep as u64);
    let model = sample_coxian(args.n, seed, args.pkill_max)
        .and_then(|ph| LevyModel::new(args.sigma, args.drift, args.lambda, ph));
    let model = match model {
        Ok(m) => m,
        Err(e) => {
            return args
                .q
                .iter()
                .map(|&q| Row {
                    replication: rep,
                    q,
                    mean_x1: f64::NAN,
                    explicit: false,
                    iterations: 0,
                    empirical_rate: None,
                    theoretical_rate: None,
                    seconds: 0.0,
                    error: Some(e.kind().to_string()),
                })
                .collect()
        }
    };
    let opts = SolveOptions::with_tol(args.tol);
    args.q
        .iter()
        .map(|&q| {
            let start = Instant::now();
            let res = solve(&model, q, &opts);
            let seconds = start.elapsed().as_secs_f64();
            match res {
                Ok((repr, report)) => Row {
                    replication: rep,
                    q,
                    mean_x1: model.mean_x1(),
                    explicit: report.explicit,
                    iterations: report.iterations,
                    empirical_rate: report.empirical_rate,
                    theoretical_rate: repr.theoretical_rate().ok(),
                    seconds,
                    error: None,
                },
                Err(e) => Row {
                    replication: rep,
                    q,
                    mean_x1: model.mean_x1(),
                    explicit: false,
                    iterations: 0,
                    empirical_rate: None,
                    theoretical_rate: None,
                    seconds,
                    error: Some(e.kind().to_string()),
                },
            }
        })
        .collect()
}

fn validate(args: &BenchArgs) -> CliResult<()> {
    let bad = |m: &str| Err(CliError::usage("BadParameter", m.to_string()));
    if args.replications == 0 {
        return bad("--replications must be positive");
    }
    if args.n == 0 {
        return bad("--n must be positive");
    }
    if args.q.is_empty() || args.q.iter().any(|q| !(*q >= 0.0) || !q.is_finite()) {
        return bad("--q must be a non-empty list of non-negative numbers");
    }
    if !(args.tol > 0.0) {
        return bad("--tol must be positive");
    }
    if !(args.pkill_max > 0.0 && args.pkill_max < 1.0) {
        return bad("--pkill-max must lie in (0, 1)");
    }
    Ok(())
}

pub fn run_rows(args: &BenchArgs) -> CliResult<Vec<Row>> {
    validate(args)?;
    let work = || -> Vec<Row> {
        (0..args.replications)
            .into_par_iter()
            .map(|rep| replicate(args, rep))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    };
    let rows = match thread_cap()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::usage("BadParameter", e.to_string()))?
            .install(work),
        None => work(),
    };
    Ok(rows)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn max(v: &[f64]) -> Option<f64> {
    v.iter().copied().reduce(f64::max)
}

fn q_summary(rows: &[Row], q: f64, negative_subset: &[usize]) -> Value {
    let here: Vec<&Row> = rows.iter().filter(|r| r.q == q).collect();
    let solved: Vec<&Row> = here.iter().copied().filter(|r| r.error.is_none()).collect();
    let iterative: Vec<&Row> = solved.iter().copied().filter(|r| !r.explicit).collect();
    let theo: Vec<f64> = iterative.iter().filter_map(|r| r.theoretical_rate).collect();
    let emp: Vec<f64> = iterative.iter().filter_map(|r| r.empirical_rate).collect();
    let iters: Vec<f64> = iterative.iter().map(|r| r.iterations as f64).collect();
    let subset_theo: Vec<f64> = iterative
        .iter()
        .filter(|r| negative_subset.binary_search(&r.replication).is_ok())
        .filter_map(|r| r.theoretical_rate)
        .collect();
    json!({
        "q": q,
        "cases": here.len(),
        "failures": here.len() - solved.len(),
        "explicit_cases": solved.len() - iterative.len(),
        "positive_mean_cases": here.iter().filter(|r| r.mean_x1 > 0.0).count(),
        "iterations": { "mean": mean(&iters), "max": max(&iters) },
        "theoretical_rate": { "mean": mean(&theo), "max": max(&theo) },
        "empirical_rate": { "mean": mean(&emp), "max": max(&emp) },
        "negative_mean_subset": { "cases": subset_theo.len(), "mean_theoretical_rate": mean(&subset_theo) },
        "wall_time_s": here.iter().map(|r| r.seconds).sum::<f64>(),
    })
}

pub fn summarize(args: &BenchArgs, rows: &[Row], seconds: f64) -> Value {
    let mut negative: Vec<usize> = rows
        .iter()
        .filter(|r| r.mean_x1 < 0.0)
        .map(|r| r.replication)
        .collect();
    negative.dedup();
    let positive = (0..args.replications)
        .filter(|rep| rows.iter().any(|r| r.replication == *rep && r.mean_x1 > 0.0))
        .count();
    let per_q: Vec<Value> = args.q.iter().map(|&q| q_summary(rows, q, &negative)).collect();
    json!({
        "n": args.n,
        "replications": args.replications,
        "seed": args.seed,
        "sigma": args.sigma,
        "drift": args.drift,
        "lambda": args.lambda,
        "pkill_max": args.pkill_max,
        "tol": args.tol,
        "positive_mean_fraction": positive as f64 / args.replications as f64,
        "negative_mean_replications": negative.len(),
        "per_q": per_q,
        "wall_time_s": seconds,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

fn write_csvs(dir: &Path, rows: &[Row]) -> CliResult<()> {
    let io = CliError::io;
    let csv_err = CliError::csv;
    std::fs::create_dir_all(dir).map_err(io)?;

    let mut w = csv::Writer::from_path(dir.join("replications.csv")).map_err(csv_err)?;
    w.write_record([
        "replication",
        "q",
        "mean_x1",
        "explicit",
        "iterations",
        "empirical_rate",
        "theoretical_rate",
        "seconds",
        "error",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.replication.to_string(),
            format!("{:.16e}", r.q),
            format!("{:.16e}", r.mean_x1),
            r.explicit.to_string(),
            r.iterations.to_string(),
            opt(r.empirical_rate),
            opt(r.theoretical_rate),
            format!("{:.16e}", r.seconds),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io)?;

    let mut iter_hist: BTreeMap<(u64, usize), usize> = BTreeMap::new();
    let mut rate_hist: BTreeMap<(u64, i64), usize> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.error.is_none() && !r.explicit) {
        *iter_hist.entry((r.q.to_bits(), r.iterations)).or_default() += 1;
        if let Some(rate) = r.theoretical_rate {
            let bin = (rate / RATE_BIN).floor() as i64;
            *rate_hist.entry((r.q.to_bits(), bin)).or_default() += 1;
        }
    }

    let mut w = csv::Writer::from_path(dir.join("iterations_hist.csv")).map_err(csv_err)?;
    w.write_record(["q", "iterations", "count"]).map_err(csv_err)?;
    for ((q, it), c) in &iter_hist {
        w.write_record([f64::from_bits(*q).to_string(), it.to_string(), c.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(io)?;

    let mut w = csv::Writer::from_path(dir.join("rates_hist.csv")).map_err(csv_err)?;
    w.write_record(["q", "bin_lo", "bin_hi", "count"]).map_err(csv_err)?;
    for ((q, bin), c) in &rate_hist {
        let lo = *bin as f64 * RATE_BIN;
        w.write_record([
            f64::from_bits(*q).to_string(),
            format!("{lo:.2}"),
            format!("{:.2}", lo + RATE_BIN),
            c.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io)
}

pub fn run(args: &BenchArgs) -> CliResult<Value> {
    let start = Instant::now();
    let rows = run_rows(args)?;
    let seconds = start.elapsed().as_secs_f64();
    if let Some(dir) = &args.out_dir {
        write_csvs(dir, &rows)?;
    }
    Ok(summarize(args, &rows, seconds))
}
