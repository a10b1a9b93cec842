//! Monte Carlo estimates by direct path simulation.
//!
//! Without a Brownian part the paths are simulated exactly: linear drift
//! between Poisson jump epochs, phase-type jump sizes drawn by running the
//! underlying chain and an exponential killing clock. With a Brownian part a
//! plain Euler scheme is used; jump epochs are still exact but a level is
//! only detected at step ends.

use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::levy::LevyModel;
use crate::rng::{derive_seed, rng_from_seed, Rng64};

/// Paths per independently seeded chunk.
const CHUNK: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    ExactEvents,
    Euler,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::ExactEvents => "exact_events",
            Scheme::Euler => "euler",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_paths: u64,
    pub scheme: Scheme,
    /// Euler step; `None` for exact simulation.
    pub dt: Option<f64>,
    /// Paths still undecided at the horizon.
    pub undecided: u64,
    /// Bound on the bias caused by stopping at the horizon.
    pub bias_bound: f64,
}

impl McEstimate {
    /// `(value - reference) / stderr`.
    pub fn z_score(&self, reference: f64) -> f64 {
        (self.value - reference) / self.stderr.max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub n_paths: u64,
    pub seed: u64,
    /// Euler step, used only when `sigma > 0`.
    pub dt: f64,
    /// Simulation horizon; paths still undecided there count as misses.
    pub horizon: f64,
}

impl McConfig {
    pub fn new(n_paths: u64, seed: u64) -> Self {
        Self {
            n_paths,
            seed,
            dt: 1e-4,
            horizon: 1e3,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Target {
    /// Hit the point `-x`.
    Hit { x: f64 },
    /// Pass above `x` before going below `-y`.
    Exit { x: f64, y: f64 },
    /// Stay at or above `-x`.
    Workload { x: f64 },
}

enum Outcome {
    Success,
    Failure,
    Horizon(f64),
}

struct Path<'a> {
    model: &'a LevyModel,
    q: f64,
    target: Target,
    dt: f64,
    horizon: f64,
}

impl Path<'_> {
    fn clock(rng: &mut Rng64, rate: f64) -> f64 {
        if rate > 0.0 {
            let e: f64 = Exp1.sample(rng);
            e / rate
        } else {
            f64::INFINITY
        }
    }

    /// Verdict after a downward jump to `x`.
    fn after_jump(&self, x: f64) -> Option<Outcome> {
        match self.target {
            Target::Exit { y, .. } if x < -y => Some(Outcome::Failure),
            Target::Workload { x: level } if x < -level => Some(Outcome::Failure),
            _ => None,
        }
    }

    fn run(&self, rng: &mut Rng64) -> Outcome {
        match self.target {
            Target::Exit { x: 0.0, .. } => return Outcome::Success,
            Target::Hit { x } if x == 0.0 && self.model.has_brownian() => return Outcome::Success,
            _ => {}
        }
        let kill = Self::clock(rng, self.q);
        if self.model.has_brownian() {
            self.run_euler(rng, kill)
        } else {
            self.run_exact(rng, kill)
        }
    }

    fn run_exact(&self, rng: &mut Rng64, kill: f64) -> Outcome {
        let (d, lambda) = (self.model.drift(), self.model.lambda());
        let jumps = self.model.jumps();
        let (mut t, mut x) = (0.0, 0.0);
        loop {
            let next_jump = t + Self::clock(rng, lambda);
            let end = next_jump.min(kill).min(self.horizon);
            let top = x + d * (end - t);
            match self.target {
                Target::Hit { x: level } if x < -level && top >= -level => return Outcome::Success,
                Target::Exit { x: level, .. } if top >= level => return Outcome::Success,
                _ => {}
            }
            x = top;
            t = end;
            if end == kill {
                return Outcome::Failure;
            }
            if end == self.horizon {
                return Outcome::Horizon(x);
            }
            x -= jumps.sample_lifetime(rng);
            if let Some(out) = self.after_jump(x) {
                return out;
            }
        }
    }

    fn run_euler(&self, rng: &mut Rng64, kill: f64) -> Outcome {
        let (d, lambda, sigma) = (self.model.drift(), self.model.lambda(), self.model.sigma());
        let jumps = self.model.jumps();
        let stop = kill.min(self.horizon);
        let (mut t, mut x) = (0.0, 0.0);
        let mut next_jump = Self::clock(rng, lambda);
        loop {
            let h = self.dt.min(stop - t);
            let z: f64 = StandardNormal.sample(rng);
            let moved = x + d * h + sigma * h.sqrt() * z;
            match self.target {
                Target::Hit { x: level } => {
                    if (x + level) * (moved + level) <= 0.0 {
                        return Outcome::Success;
                    }
                }
                Target::Exit { x: up, y: down } => {
                    if moved >= up {
                        return Outcome::Success;
                    }
                    if moved < -down {
                        return Outcome::Failure;
                    }
                }
                Target::Workload { x: level } => {
                    if moved < -level {
                        return Outcome::Failure;
                    }
                }
            }
            x = moved;
            t += h;
            while next_jump <= t {
                x -= jumps.sample_lifetime(rng);
                next_jump += Self::clock(rng, lambda);
                if let Some(out) = self.after_jump(x) {
                    return out;
                }
            }
            if t >= kill {
                return Outcome::Failure;
            }
            if t >= self.horizon {
                return Outcome::Horizon(x);
            }
        }
    }
}

/// Chunk totals: successes, undecided paths, and the summed per-path bias
/// bound of undecided paths.
#[derive(Default, Clone, Copy)]
struct Tally {
    hits: u64,
    undecided: u64,
    tail: f64,
}

fn simulate(
    path: &Path<'_>,
    cfg: &McConfig,
    horizon_counts_as_success: bool,
    tail_bound: impl Fn(f64) -> f64 + Sync,
) -> Result<McEstimate> {
    if cfg.n_paths == 0 {
        return Err(Error::BadParameter("n_paths must be positive".into()));
    }
    if path.model.has_brownian() && !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
        return Err(Error::BadParameter(format!("dt must be positive, got {}", cfg.dt)));
    }
    if !(cfg.horizon > 0.0) {
        return Err(Error::BadParameter(format!("horizon must be positive, got {}", cfg.horizon)));
    }
    let chunks = cfg.n_paths.div_ceil(CHUNK);
    let tally = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_from_seed(derive_seed(cfg.seed, c));
            let count = CHUNK.min(cfg.n_paths - c * CHUNK);
            let mut t = Tally::default();
            for _ in 0..count {
                match path.run(&mut rng) {
                    Outcome::Success => t.hits += 1,
                    Outcome::Failure => {}
                    Outcome::Horizon(level) => {
                        t.undecided += 1;
                        t.tail += tail_bound(level);
                        if horizon_counts_as_success {
                            t.hits += 1;
                        }
                    }
                }
            }
            t
        })
        // Integer sums are exact; the float sum is reduced in chunk order.
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Tally::default(), |a, b| Tally {
            hits: a.hits + b.hits,
            undecided: a.undecided + b.undecided,
            tail: a.tail + b.tail,
        });
    let n = cfg.n_paths as f64;
    let value = tally.hits as f64 / n;
    let model = path.model;
    Ok(McEstimate {
        value,
        stderr: binomial_stderr(tally.hits, cfg.n_paths),
        n_paths: cfg.n_paths,
        scheme: if model.has_brownian() {
            Scheme::Euler
        } else {
            Scheme::ExactEvents
        },
        dt: model.has_brownian().then_some(cfg.dt),
        undecided: tally.undecided,
        bias_bound: tally.tail / n,
    })
}

/// Sample standard error of a proportion. With all or none of the paths
/// succeeding the sample variance is zero, so the Laplace estimate
/// `(k + 1) / (n + 2)` stands in for the proportion.
fn binomial_stderr(hits: u64, n_paths: u64) -> f64 {
    let n = n_paths as f64;
    let p = if hits == 0 || hits == n_paths {
        (hits as f64 + 1.0) / (n + 2.0)
    } else {
        hits as f64 / n
    };
    (p * (1.0 - p) / n).sqrt()
}

fn check_inputs(q: f64, levels: &[f64]) -> Result<()> {
    if q < 0.0 || !q.is_finite() {
        return Err(Error::BadParameter(format!("q must be non-negative, got {q}")));
    }
    for &x in levels {
        if x < 0.0 || !x.is_finite() {
            return Err(Error::BadParameter(format!("levels must be non-negative, got {x}")));
        }
    }
    Ok(())
}

/// `P(tau_{-x} < e_q)`: probability that the path visits the point `-x`
/// before the killing time.
pub fn estimate_hitting(model: &LevyModel, q: f64, x: f64, cfg: &McConfig) -> Result<McEstimate> {
    check_inputs(q, &[x])?;
    let path = Path {
        model,
        q,
        target: Target::Hit { x },
        dt: cfg.dt,
        horizon: cfg.horizon,
    };
    simulate(&path, cfg, false, |_| 1.0)
}

/// `P(tau_x^+ < tau_{-y}^- and tau_x^+ < e_q)`.
pub fn estimate_two_sided_exit(
    model: &LevyModel,
    q: f64,
    x: f64,
    y: f64,
    cfg: &McConfig,
) -> Result<McEstimate> {
    check_inputs(q, &[x, y])?;
    let path = Path {
        model,
        q,
        target: Target::Exit { x, y },
        dt: cfg.dt,
        horizon: cfg.horizon,
    };
    simulate(&path, cfg, false, |_| 1.0)
}

/// Adjustment coefficient `R > 0` with `psi(-R) = 0`, if it exists.
pub fn adjustment_coefficient(model: &LevyModel) -> Option<f64> {
    if !(model.mean_x1() > 0.0) {
        return None;
    }
    let eig = crate::matfun::eigenvalues(model.jumps().sub_generator()).ok()?;
    let pole = eig.iter().map(|z| -z.re).fold(f64::INFINITY, f64::min);
    let f = |r: f64| model.psi_at(-r).ok();
    let mut lo = 0.0;
    let mut hi = pole * (1.0 - 1e-12);
    // psi(-r) < 0 just right of 0 and grows to +inf at the pole.
    let top = f(hi)?;
    if top <= 0.0 {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        match f(mid) {
            Some(v) if v < 0.0 => lo = mid,
            Some(_) => hi = mid,
            None => return None,
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    (lo > 0.0).then_some(lo)
}

/// `P(sup_{t <= horizon} (-X_t) <= x)`, which approximates the stationary
/// workload distribution from above. The bias bound is the mean over
/// surviving paths of the Lundberg bound `e^{-R (X_H + x)}` on a later ruin.
pub fn estimate_stationary_workload(
    model: &LevyModel,
    x: f64,
    n_paths: u64,
    horizon: f64,
    seed: u64,
) -> Result<McEstimate> {
    check_inputs(0.0, &[x])?;
    let mean = model.mean_x1();
    if !(mean > 0.0) {
        return Err(Error::Unstable(mean));
    }
    let cfg = McConfig {
        n_paths,
        seed,
        horizon,
        ..McConfig::new(n_paths, seed)
    };
    let path = Path {
        model,
        q: 0.0,
        target: Target::Workload { x },
        dt: cfg.dt,
        horizon,
    };
    let r = adjustment_coefficient(model);
    simulate(&path, &cfg, true, move |level| match r {
        Some(r) => (-r * (level + x)).exp().min(1.0),
        None => 1.0,
    })
}

/// Same as [`estimate_stationary_workload`] with an explicit Euler step.
pub fn estimate_stationary_workload_with(model: &LevyModel, x: f64, cfg: &McConfig) -> Result<McEstimate> {
    check_inputs(0.0, &[x])?;
    let mean = model.mean_x1();
    if !(mean > 0.0) {
        return Err(Error::Unstable(mean));
    }
    let path = Path {
        model,
        q: 0.0,
        target: Target::Workload { x },
        dt: cfg.dt,
        horizon: cfg.horizon,
    };
    let r = adjustment_coefficient(model);
    simulate(&path, cfg, true, move |level| match r {
        Some(r) => (-r * (level + x)).exp().min(1.0),
        None => 1.0,
    })
}
