#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{coxian_model, transform_residual};
use levy_scale::applications::two_sided_exit;
use levy_scale::mc::{estimate_hitting, estimate_two_sided_exit, McConfig};
use levy_scale::rng::derive_seed;
use levy_scale::roots::{compare_spectrum, find_zq};
use levy_scale::scale::{bm_interval, solve, solve_bm, Direction, ReprParams, SolveOptions};
use levy_scale::{LevyModel, PhaseTypeDist};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

const SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn tight() -> SolveOptions {
    SolveOptions::with_tol(1e-13)
}

fn within_budget(elapsed: Duration, secs: f64) -> bool {
    elapsed.as_secs_f64() <= secs
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for m in 0..50u64 {
        for sigma in [0.0, 1.0] {
            let model = coxian_model(8, derive_seed(SEED, m), sigma, 1.0, 1.0);
            for q in [0.1, 1.0] {
                let run = || -> levy_scale::Result<f64> {
                    let (repr, _) = solve(&model, q, &tight())?;
                    let roots = find_zq(&model, q)?;
                    let ws = repr.eval_w_grid(0.0, 0.01, 1001)?;
                    let mut err: f64 = 0.0;
                    for (k, w) in ws.iter().enumerate() {
                        let r = roots.eval_w_roots(0.01 * k as f64)?;
                        err = err.max((w - r).abs() / w.abs().max(1.0));
                    }
                    Ok(err)
                };
                match run() {
                    Ok(err) => worst = worst.max(err),
                    Err(e) => failures.push(format!("model {m} sigma {sigma} q {q}: {e}")),
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures.is_empty() && worst <= 1e-8 && within_budget(elapsed, 30.0),
        format!("max scaled |W - W_roots| = {worst:.2e}, errors {failures:?}, {:.1} s", elapsed.as_secs_f64()),
    )
}

fn transform_identity() -> Outcome {
    let start = Instant::now();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(SEED + 2);
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for m in 0..200 {
        let n = rng.random_range(1..=100);
        let sigma = if m % 2 == 0 { 0.0 } else { 1.0 };
        let q = if m % 4 < 2 { 0.1 } else { 1.0 };
        let model = coxian_model(n, rng.random(), sigma, 1.0, 1.0);
        match solve(&model, q, &tight()) {
            Ok((repr, _)) => worst = worst.max(transform_residual(&repr)),
            Err(e) => failures.push(format!("model {m} (n {n}): {e}")),
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures.is_empty() && worst <= 1e-9 && within_budget(elapsed, 60.0),
        format!("max relative transform error {worst:.2e}, errors {failures:?}, {:.1} s", elapsed.as_secs_f64()),
    )
}

fn closed_forms() -> Outcome {
    let model_a = LevyModel::new(0.0, 2.0, 1.0, PhaseTypeDist::exponential(1.0).unwrap()).unwrap();
    let model_b = LevyModel::new(2f64.sqrt(), 1.0, 1.0, PhaseTypeDist::exponential(2.0).unwrap()).unwrap();
    let r2 = 2f64.sqrt();
    let r3 = 3f64.sqrt();
    let nan3 = (f64::NAN, f64::NAN, f64::NAN);
    let pi_of = |model: &LevyModel, q| -> (f64, f64, f64) {
        let Ok((repr, _)) = solve(model, q, &tight()) else { return nan3 };
        let ReprParams::CompoundPoisson { pi } = repr.params() else { return nan3 };
        (pi[0], repr.phi_root().phi, repr.theoretical_rate().unwrap_or(f64::NAN))
    };
    let nan4 = (f64::NAN, f64::NAN, f64::NAN, f64::NAN);
    let ab_of = |model: &LevyModel, q| -> (f64, f64, f64, f64) {
        let Ok((repr, _)) = solve(model, q, &tight()) else { return nan4 };
        let ReprParams::Brownian { a, b } = repr.params() else { return nan4 };
        (*a, b[0], repr.phi_root().phi, repr.theoretical_rate().unwrap_or(f64::NAN))
    };
    let a1 = pi_of(&model_a, 1.0);
    let a0 = pi_of(&model_a, 0.0);
    let b1 = ab_of(&model_b, 1.0);
    let b0 = ab_of(&model_b, 0.0);
    let checks = [
        ("A q=1 pi", a1.0, 1.0 - r2 / 2.0),
        ("A q=1 phi", a1.1, 1.0 / r2),
        // Derivative of s -> 1 / (2 (2 - s)) at the fixed point.
        ("A q=1 rate", a1.2, 1.0 / (2.0 * (1.0 + r2 / 2.0).powi(2))),
        ("A q=0 pi", a0.0, 0.5),
        ("A q=0 phi", a0.1, 0.0),
        ("B q=1 a", b1.0, r3),
        ("B q=1 b", b1.1, (r3 - 1.0) / 2.0),
        ("B q=1 phi", b1.2, r3 - 1.0),
        // Derivative of a -> (1 + sqrt(9 - 8 / (a + 1))) / 2 at a = sqrt 3.
        ("B q=1 rate", b1.3, 1.0 / (3.0 * r3 + 4.0)),
        ("B q=0 a", b0.0, 1.0),
        ("B q=0 b", b0.1, 0.5),
        ("B q=0 phi", b0.2, 0.0),
    ];
    let bad: Vec<String> = checks
        .iter()
        .filter(|(_, got, want)| !((got - want).abs() <= 1e-9))
        .map(|(name, got, want)| format!("{name}: {got} vs {want}"))
        .collect();
    let worst = checks.iter().map(|(_, g, w)| (g - w).abs()).fold(0.0, f64::max);
    outcome(
        bad.is_empty(),
        format!("{} constants, max deviation {worst:.2e}, mismatches {bad:?}", checks.len()),
    )
}

struct EnsembleCase {
    sigma: f64,
    drift: f64,
    w0: f64,
}

fn monotone_scheme(boundary: &mut Vec<EnsembleCase>) -> Outcome {
    let start = Instant::now();
    let mut problems = Vec::new();
    let mut rate_checked = 0;
    let mut worst_rate_gap: f64 = 0.0;
    for m in 0..500u64 {
        let sigma = if m % 2 == 0 { 0.0 } else { 1.0 };
        let q = [0.0, 0.1, 1.0][(m % 3) as usize];
        let model = coxian_model(50, derive_seed(SEED + 4, m), sigma, 1.0, 1.0);
        let (repr, report) = match solve(&model, q, &SolveOptions::with_tol(1e-12)) {
            Ok(r) => r,
            Err(e) => {
                problems.push(format!("model {m}: {e}"));
                continue;
            }
        };
        boundary.push(EnsembleCase {
            sigma,
            drift: 1.0,
            w0: solve(&model, q, &SolveOptions::with_tol(1e-14))
                .and_then(|(r, _)| r.eval_w(0.0))
                .unwrap_or(f64::NAN),
        });
        if report.explicit {
            continue;
        }
        let h = &report.iterate_history;
        let monotone = match report.direction {
            Direction::Increasing => h.windows(2).all(|w| w[1] > w[0]),
            Direction::Decreasing => h.windows(2).all(|w| w[1] < w[0]),
            Direction::Constant => h.len() <= 1,
        };
        if !monotone {
            problems.push(format!("model {m}: history not strictly monotone"));
        }
        let (lo, hi) = if sigma > 0.0 { bm_interval(&model, q) } else { (0.0, 1.0) };
        if !h.iter().all(|&v| v > lo && v < hi) {
            problems.push(format!("model {m}: iterate outside ({lo}, {hi})"));
        }
        if report.iterations >= 10 {
            rate_checked += 1;
            let theo = repr.theoretical_rate().unwrap_or(f64::NAN);
            let gap = report.empirical_rate.map_or(f64::NAN, |e| (e - theo).abs() / theo);
            worst_rate_gap = worst_rate_gap.max(gap);
            if !(gap <= 0.05) {
                problems.push(format!("model {m}: rate gap {gap:.3}"));
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        problems.is_empty(),
        format!(
            "500 models, {rate_checked} rate checks, worst relative rate gap {worst_rate_gap:.3}, problems {problems:?}, {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn boundary_values(cases: &[EnsembleCase]) -> Outcome {
    let mut worst_bm: f64 = 0.0;
    let mut worst_cpp: f64 = 0.0;
    for c in cases {
        if c.sigma > 0.0 {
            worst_bm = worst_bm.max(c.w0.abs());
        } else {
            worst_cpp = worst_cpp.max((c.w0 - 1.0 / c.drift).abs());
        }
    }
    outcome(
        cases.len() == 500 && worst_bm <= 1e-10 && worst_cpp <= 1e-9,
        format!(
            "{} cases, max |W(0)| (sigma > 0) {worst_bm:.2e}, max |W(0) - 1/d| (sigma = 0) {worst_cpp:.2e}",
            cases.len()
        ),
    )
}

struct BenchRow {
    replication: usize,
    mean_x1: f64,
    rate: Option<f64>,
}

fn statistical_reproduction() -> Outcome {
    let start = Instant::now();
    let qs = [0.0, 0.1, 1.0];
    let reps = 1000;
    let mut rows: Vec<Vec<BenchRow>> = vec![Vec::new(), Vec::new(), Vec::new()];
    let mut errors = 0;
    for rep in 0..reps {
        let model = coxian_model(50, derive_seed(SEED + 5, rep as u64), 1.0, 1.0, 1.0);
        for (k, &q) in qs.iter().enumerate() {
            match solve(&model, q, &SolveOptions::with_tol(1e-5)) {
                Ok((repr, report)) => rows[k].push(BenchRow {
                    replication: rep,
                    mean_x1: model.mean_x1(),
                    rate: (!report.explicit).then(|| repr.theoretical_rate().ok()).flatten(),
                }),
                Err(_) => errors += 1,
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let rates = |k: usize| -> Vec<f64> { rows[k].iter().filter_map(|r| r.rate).collect() };
    let mean_q1 = mean(&rates(2));
    let mean_q01 = mean(&rates(1));
    let positive = rows[0].iter().filter(|r| r.mean_x1 > 0.0).count() as f64 / reps as f64;
    let negative: Vec<usize> = rows[0].iter().filter(|r| r.mean_x1 < 0.0).map(|r| r.replication).collect();
    let subset_mean = |k: usize| -> f64 {
        let v: Vec<f64> = rows[k]
            .iter()
            .filter(|r| negative.binary_search(&r.replication).is_ok())
            .filter_map(|r| r.rate)
            .collect();
        mean(&v)
    };
    let sub = [subset_mean(0), subset_mean(1), subset_mean(2)];
    let pass = errors == 0
        && (mean_q1 - 0.11).abs() <= 0.04
        && (mean_q01 - 0.41).abs() <= 0.06
        && (positive - 0.47).abs() <= 0.05
        && sub[0] > sub[1]
        && sub[1] > sub[2];
    outcome(
        pass,
        format!(
            "mean rate q=1 {mean_q1:.4}, q=0.1 {mean_q01:.4}, E X1 > 0 fraction {positive:.3}, \
             E X1 < 0 subset ({} models) means q=0/0.1/1 {:.4}/{:.4}/{:.4}, errors {errors}, {:.1} s",
            negative.len(),
            sub[0],
            sub[1],
            sub[2],
            start.elapsed().as_secs_f64()
        ),
    )
}

fn monte_carlo() -> Outcome {
    let start = Instant::now();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(SEED + 7);
    let mut ok = [0usize; 2];
    let mut misses = Vec::new();
    let mut errors = Vec::new();
    for (s, sigma) in [0.0, 1.0].into_iter().enumerate() {
        for case in 0..20u64 {
            let n = rng.random_range(1..=6);
            let model = coxian_model(n, rng.random(), sigma, rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
            let q = rng.random_range(0.5..2.0);
            let x = rng.random_range(0.1..2.0);
            let y = rng.random_range(0.1..2.0);
            let mut cfg = McConfig::new(if sigma > 0.0 { 20_000 } else { 100_000 }, derive_seed(SEED + 8, case));
            cfg.dt = 1e-4;
            let run = || -> levy_scale::Result<(f64, f64, f64)> {
                let (repr, _) = solve(&model, q, &tight())?;
                let (est, analytic) = if case % 2 == 0 {
                    (estimate_hitting(&model, q, x, &cfg)?, repr.hitting_prob(x)?)
                } else {
                    (estimate_two_sided_exit(&model, q, x, y, &cfg)?, two_sided_exit(&repr, x, y)?)
                };
                Ok((est.value, est.stderr, analytic))
            };
            match run() {
                Ok((value, stderr, analytic)) => {
                    let band = if sigma > 0.0 { (3.0 * stderr).max(0.01) } else { 3.0 * stderr };
                    let hit = (value - analytic).abs() <= band;
                    if !hit {
                        misses.push(format!(
                            "{} sigma {sigma} q {q:.2} x {x:.2} y {y:.2}: {value:.4} vs {analytic:.4}",
                            if case % 2 == 0 { "hit" } else { "exit" }
                        ));
                    }
                    ok[s] += usize::from(hit);
                }
                Err(e) => errors.push(format!("sigma {sigma} case {case}: {e}")),
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        ok[0] >= 18 && ok[1] >= 18 && errors.is_empty() && within_budget(elapsed, 300.0),
        format!(
            "within band: sigma = 0 {}/20, sigma > 0 {}/20, misses {misses:?}, errors {errors:?}, {:.1} s",
            ok[0],
            ok[1],
            elapsed.as_secs_f64()
        ),
    )
}

fn spectrum_correspondence() -> Outcome {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(SEED + 9);
    let mut worst: f64 = 0.0;
    let mut problems = Vec::new();
    for m in 0..50 {
        let n = rng.random_range(1..=10);
        let sigma = if m % 2 == 0 { 0.0 } else { 1.0 };
        let q = [0.0, 0.1, 1.0][m % 3];
        let model = coxian_model(n, rng.random(), sigma, 1.0, 1.0);
        let run = || -> levy_scale::Result<_> {
            let (repr, _) = solve(&model, q, &tight())?;
            let roots = find_zq(&model, q)?;
            compare_spectrum(&repr, &roots)
        };
        match run() {
            Ok(cmp) => {
                worst = worst.max(cmp.max_distance);
                if !cmp.unmatched_eigenvalues.is_empty() || !cmp.unmatched_zeros.is_empty() {
                    problems.push(format!("model {m}: unmatched entries"));
                }
            }
            Err(e) => problems.push(format!("model {m}: {e}")),
        }
    }
    outcome(
        problems.is_empty() && worst <= 1e-6,
        format!("max matched distance {worst:.2e}, problems {problems:?}"),
    )
}

fn large_phase_counts() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for n in [100, 200] {
        let model = coxian_model(n, derive_seed(SEED + 10, n as u64), 1.0, 1.0, 1.0);
        match solve_bm(&model, 1.0, &SolveOptions::with_tol(1e-13)) {
            Ok((repr, report)) => {
                let residual = transform_residual(&repr);
                pass &= report.iterations <= 200 && residual <= 1e-8;
                parts.push(format!("n={n}: {} iterations, transform residual {residual:.2e}", report.iterations));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("n={n}: {e}"));
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        pass && within_budget(elapsed, 10.0),
        format!("{}, {:.1} s", parts.join("; "), elapsed.as_secs_f64()),
    )
}

fn main() -> ExitCode {
    let mut boundary = Vec::new();
    let results = [
        ("1 oracle equivalence", oracle_equivalence()),
        ("2 transform identity", transform_identity()),
        ("3 closed-form regression", closed_forms()),
        ("4 monotone scheme", monotone_scheme(&mut boundary)),
        ("5 statistical reproduction", statistical_reproduction()),
        ("6 boundary values", boundary_values(&boundary)),
        ("7 Monte Carlo cross-check", monte_carlo()),
        ("8 spectrum correspondence", spectrum_correspondence()),
        ("9 large phase counts", large_phase_counts()),
    ];
    let mut all = true;
    for (name, r) in &results {
        println!("{} criterion {name}: {}", if r.pass { "PASS" } else { "FAIL" }, r.detail);
        all &= r.pass;
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
