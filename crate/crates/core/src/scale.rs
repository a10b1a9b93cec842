//! Scale functions through the first-passage transition-rate matrix.
//!
//! For a spectrally-negative Lévy process with phase-type jumps the scale
//! function is
//!
//! ```text
//! W_q(x) = (e^{Phi_q x} - f e^{G x} nu) / psi'(Phi_q),
//! ```
//!
//! where `G` is the generator of the phase process observed at the first
//! passage over increasing levels of the fluid embedding, `nu` collects the
//! probabilities of returning to the Brownian phase and `f` is the initial
//! phase distribution at level zero. `G` is explicit up to a single number:
//! the rate `a` out of the Brownian phase when `sigma > 0`, or the scalar
//! `pi t` when `sigma = 0`. Both are found by monotone fixed-point iterations
//! which converge Q-linearly.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::levy::{LevyModel, PhiRoot};
use crate::matfun::{eigenvalues, expm_metzler, solve_left, solve_linear, GeneratorMatrix};

/// Number of trailing increment ratios used for the empirical rate.
const RATE_WINDOW: usize = 5;
const RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    /// Stop once two consecutive scalar iterates differ by less than this.
    pub tol: f64,
    pub max_iter: usize,
    /// Starting value: `a_0` for `sigma > 0`, `pi_0 t` for `sigma = 0`.
    pub start: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            max_iter: 10_000,
            start: None,
        }
    }
}

impl SolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

/// The unknowns characterizing `G`.
#[derive(Debug, Clone, PartialEq)]
pub enum ReprParams {
    /// `G = [[-a, b], [t, T]]`.
    Brownian { a: f64, b: RowDVector<f64> },
    /// `G = T + t pi`.
    CompoundPoisson { pi: RowDVector<f64> },
}

/// A solved representation of `W_q`.
#[derive(Debug, Clone)]
pub struct ScaleRepr {
    model: LevyModel,
    phi_root: PhiRoot,
    params: ReprParams,
    front: RowDVector<f64>,
    generator: DMatrix<f64>,
    nu: DVector<f64>,
    explicit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Increasing,
    Decreasing,
    Constant,
}

/// Residuals of the defining equations at the returned solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Residuals {
    Brownian {
        /// `|sigma^2 (a^2 + b t) / 2 - d a - (lambda + q)|`
        scalar_eq: f64,
        /// `|sigma^2 (b T - a b) / 2 + d b + lambda alpha|_inf`
        vector_eq: f64,
        /// `|(sigma^2 a / 2 - d)(a - b 1) - q|`
        reduced_eq: f64,
    },
    CompoundPoisson {
        /// `|pi ((lambda + q - d pi t) I - d T) - lambda alpha|_inf`
        vector_eq: f64,
        /// `|(lambda - d pi t)(1 - pi 1) - q pi 1|`
        reduced_eq: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Scalar iterates `a_0, a_1, ...` or `pi_0 t, pi_1 t, ...`; empty for the
    /// explicit case.
    pub iterate_history: Vec<f64>,
    pub direction: Direction,
    pub final_gap: f64,
    pub empirical_rate: Option<f64>,
    pub theoretical_rate: Option<f64>,
    pub start_value: Option<f64>,
    pub explicit: bool,
    /// Open interval known to contain the scalar unknown.
    pub interval: (f64, f64),
    pub residuals: Residuals,
    /// Whether every residual is within `1e-9` of the appropriate scale.
    pub residuals_ok: bool,
}

impl ScaleRepr {
    pub fn model(&self) -> &LevyModel {
        &self.model
    }

    pub fn q(&self) -> f64 {
        self.phi_root.q
    }

    pub fn phi_root(&self) -> PhiRoot {
        self.phi_root
    }

    pub fn params(&self) -> &ReprParams {
        &self.params
    }

    /// Initial phase distribution at level zero: `e_1` or `pi`.
    pub fn front(&self) -> &RowDVector<f64> {
        &self.front
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    /// `G` as a validated transition-rate matrix.
    pub fn generator_matrix(&self) -> Result<GeneratorMatrix> {
        GeneratorMatrix::new(self.generator.clone())
    }

    pub fn nu(&self) -> &DVector<f64> {
        &self.nu
    }

    pub fn is_explicit(&self) -> bool {
        self.explicit
    }

    pub fn eigenvalues(&self) -> Result<Vec<num_complex::Complex64>> {
        eigenvalues(&self.generator)
    }

    fn check_x(x: f64) -> Result<()> {
        if x < 0.0 || x.is_nan() {
            Err(Error::NegativeArgument(x))
        } else {
            Ok(())
        }
    }

    /// `e^{G x} nu`.
    fn propagated_nu(&self, x: f64) -> DVector<f64> {
        expm_metzler(&self.generator, x) * &self.nu
    }

    /// Probability of hitting level `-x` before the killing time:
    /// `f e^{G x} nu`.
    pub fn hitting_prob(&self, x: f64) -> Result<f64> {
        Self::check_x(x)?;
        Ok(self.front.dot(&self.propagated_nu(x).transpose()).clamp(0.0, 1.0))
    }

    pub fn eval_w(&self, x: f64) -> Result<f64> {
        Self::check_x(x)?;
        let v = self.propagated_nu(x);
        Ok(self.w_from(x, &v))
    }

    pub fn eval_w_prime(&self, x: f64) -> Result<f64> {
        Self::check_x(x)?;
        let v = self.propagated_nu(x);
        Ok(self.w_prime_from(x, &v))
    }

    fn w_from(&self, x: f64, propagated: &DVector<f64>) -> f64 {
        let PhiRoot { phi, psi_prime_at_phi, .. } = self.phi_root;
        let h = self.front.dot(&propagated.transpose());
        ((phi * x).exp() - h) / psi_prime_at_phi
    }

    fn w_prime_from(&self, x: f64, propagated: &DVector<f64>) -> f64 {
        let PhiRoot { phi, psi_prime_at_phi, .. } = self.phi_root;
        let dh = (&self.front * &self.generator).dot(&propagated.transpose());
        (phi * (phi * x).exp() - dh) / psi_prime_at_phi
    }

    /// `W_q` on the uniform grid `start + k step`, `k < count`.
    ///
    /// One matrix exponential per grid spacing; the vector `e^{G x} nu` is
    /// carried from point to point.
    pub fn eval_w_grid(&self, start: f64, step: f64, count: usize) -> Result<Vec<f64>> {
        Ok(self
            .grid(start, step, count)?
            .into_iter()
            .map(|(x, v)| self.w_from(x, &v))
            .collect())
    }

    /// `(W_q, W_q')` on a uniform grid.
    pub fn eval_w_and_prime_grid(
        &self,
        start: f64,
        step: f64,
        count: usize,
    ) -> Result<Vec<(f64, f64)>> {
        Ok(self
            .grid(start, step, count)?
            .into_iter()
            .map(|(x, v)| (self.w_from(x, &v), self.w_prime_from(x, &v)))
            .collect())
    }

    /// Hitting probability `f e^{G x} nu` and its derivative in `x` on a grid.
    pub(crate) fn hitting_grid(&self, start: f64, step: f64, count: usize) -> Result<Vec<(f64, f64)>> {
        let fg = &self.front * &self.generator;
        Ok(self
            .grid(start, step, count)?
            .into_iter()
            .map(|(_, v)| (self.front.dot(&v.transpose()), fg.dot(&v.transpose())))
            .collect())
    }

    fn grid(&self, start: f64, step: f64, count: usize) -> Result<Vec<(f64, DVector<f64>)>> {
        Self::check_x(start)?;
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::BadParameter(format!("grid step must be positive, got {step}")));
        }
        let step_matrix = expm_metzler(&self.generator, step);
        let mut v = self.propagated_nu(start);
        let mut out = Vec::with_capacity(count);
        for k in 0..count {
            if k > 0 {
                v = &step_matrix * v;
            }
            out.push((start + k as f64 * step, v.clone()));
        }
        Ok(out)
    }

    /// Laplace transform of the representation at `theta > Phi_q`:
    /// `(1/(theta - Phi_q) - f (theta I - G)^{-1} nu) / psi'(Phi_q)`.
    pub fn w_transform(&self, theta: f64) -> Result<f64> {
        let PhiRoot { phi, psi_prime_at_phi, .. } = self.phi_root;
        if !(theta > phi) {
            return Err(Error::BadParameter(format!(
                "transform needs theta > Phi_q = {phi}, got {theta}"
            )));
        }
        let m = self.generator.nrows();
        let mut shifted = -&self.generator;
        for i in 0..m {
            shifted[(i, i)] += theta;
        }
        let y = solve_linear(&shifted, &self.nu)?;
        Ok((1.0 / (theta - phi) - self.front.dot(&y.transpose())) / psi_prime_at_phi)
    }

    /// Q-linear convergence rate of the scalar iteration at the solution.
    pub fn theoretical_rate(&self) -> Result<f64> {
        if self.explicit {
            return Err(Error::ExplicitCase);
        }
        let model = &self.model;
        let jumps = model.jumps();
        let n = jumps.n();
        let (d, lambda, q) = (model.drift(), model.lambda(), self.q());
        match &self.params {
            ReprParams::Brownian { a, b } => {
                let s2 = model.sigma() * model.sigma();
                let shift = a - 2.0 * d / s2;
                let mut m = -jumps.sub_generator();
                for i in 0..n {
                    m[(i, i)] += shift;
                }
                let y = solve_linear(&m, jumps.exit_rates())?;
                Ok(b.dot(&y.transpose()) / (2.0 * a - 2.0 * d / s2))
            }
            ReprParams::CompoundPoisson { pi } => {
                let pit = pi.dot(&jumps.exit_rates().transpose());
                let shift = (lambda + q) / d - pit;
                let mut m = -jumps.sub_generator();
                for i in 0..n {
                    m[(i, i)] += shift;
                }
                let y = solve_linear(&m, jumps.exit_rates())?;
                Ok(pi.dot(&y.transpose()))
            }
        }
    }

    fn residuals(&self) -> (Residuals, bool) {
        let model = &self.model;
        let jumps = model.jumps();
        let (t_mat, t_vec, alpha) = (jumps.sub_generator(), jumps.exit_rates(), jumps.alpha());
        let (d, lambda, q) = (model.drift(), model.lambda(), self.q());
        let ones = DVector::from_element(jumps.n(), 1.0);
        match &self.params {
            ReprParams::Brownian { a, b } => {
                let s2 = model.sigma() * model.sigma();
                let bt = b.dot(&t_vec.transpose());
                let b1 = b.dot(&ones.transpose());
                let scalar_eq = (0.5 * s2 * (a * a + bt) - d * a - (lambda + q)).abs();
                let vec = (b * t_mat - b * *a) * (0.5 * s2) + b * d + alpha * lambda;
                let vector_eq = vec.amax();
                let reduced_eq = ((0.5 * s2 * a - d) * (a - b1) - q).abs();
                let ok = scalar_eq <= RESIDUAL_TOL * (lambda + q + 1.0)
                    && vector_eq <= RESIDUAL_TOL * lambda
                    && reduced_eq <= RESIDUAL_TOL * (q + 1.0);
                (
                    Residuals::Brownian {
                        scalar_eq,
                        vector_eq,
                        reduced_eq,
                    },
                    ok,
                )
            }
            ReprParams::CompoundPoisson { pi } => {
                let pit = pi.dot(&t_vec.transpose());
                let pi1 = pi.dot(&ones.transpose());
                let vec = pi * (lambda + q - d * pit) - pi * t_mat * d - alpha * lambda;
                let vector_eq = vec.amax();
                let reduced_eq = ((lambda - d * pit) * (1.0 - pi1) - pi1 * q).abs();
                let ok = vector_eq <= RESIDUAL_TOL * lambda && reduced_eq <= RESIDUAL_TOL * lambda;
                (
                    Residuals::CompoundPoisson {
                        vector_eq,
                        reduced_eq,
                    },
                    ok,
                )
            }
        }
    }
}

/// `(Phi_q I - T)^{-1} t`.
fn return_probabilities(model: &LevyModel, phi: f64) -> Result<DVector<f64>> {
    model.jumps().resolvent_exit(phi)
}

/// `alpha (shift I - T)^{-1}`.
fn alpha_resolvent(model: &LevyModel, shift: f64) -> Result<RowDVector<f64>> {
    let jumps = model.jumps();
    let mut m = -jumps.sub_generator();
    for i in 0..jumps.n() {
        m[(i, i)] += shift;
    }
    solve_left(&m, jumps.alpha())
}

fn increment_stats(history: &[f64]) -> (Direction, f64, Option<f64>) {
    let steps: Vec<f64> = history.windows(2).map(|w| w[1] - w[0]).collect();
    let direction = match steps.first() {
        Some(s) if *s > 0.0 => Direction::Increasing,
        Some(s) if *s < 0.0 => Direction::Decreasing,
        _ => Direction::Constant,
    };
    let final_gap = steps.last().map_or(0.0, |s| s.abs());
    let empirical = if steps.len() > RATE_WINDOW {
        let last = steps[steps.len() - 1].abs();
        let earlier = steps[steps.len() - 1 - RATE_WINDOW].abs();
        (earlier > 0.0 && last > 0.0).then(|| (last / earlier).powf(1.0 / RATE_WINDOW as f64))
    } else {
        None
    };
    (direction, final_gap, empirical)
}

fn check_options(opts: &SolveOptions) -> Result<()> {
    if !(opts.tol > 0.0) {
        return Err(Error::BadParameter(format!("tolerance must be positive, got {}", opts.tol)));
    }
    if opts.max_iter == 0 {
        return Err(Error::BadParameter("max_iter must be positive".into()));
    }
    Ok(())
}

/// Bounds on `a` for `sigma > 0`: `(2 d^+ / sigma^2, (d + sqrt(d^2 + 2 sigma^2 (lambda + q))) / sigma^2)`.
pub fn bm_interval(model: &LevyModel, q: f64) -> (f64, f64) {
    let s2 = model.sigma() * model.sigma();
    let d = model.drift();
    (2.0 * d.max(0.0) / s2, model.phi_upper_bound(q))
}

/// Solves for `(a, b)` when `sigma > 0`.
///
/// In the explicit case `q = 0`, `E X_1 > 0` the solution is
/// `a = 2d/sigma^2`, `b = (2 lambda / sigma^2) alpha (-T)^{-1}`. Otherwise
/// `b_n = (2 lambda / sigma^2) alpha ((a_{n-1} - 2d/sigma^2) I - T)^{-1}` and
/// `a_n` solves the scalar quadratic given `b_n`; the iterates are monotone
/// and stop once `|a_n - a_{n-1}| < tol`.
pub fn solve_bm(model: &LevyModel, q: f64, opts: &SolveOptions) -> Result<(ScaleRepr, SolveReport)> {
    if !model.has_brownian() {
        return Err(Error::SigmaZero);
    }
    check_options(opts)?;
    let phi_root = model.phi(q)?;
    let jumps = model.jumps();
    let n = jumps.n();
    let (d, lambda) = (model.drift(), model.lambda());
    let s2 = model.sigma() * model.sigma();
    let spurious = 2.0 * d / s2;
    let interval = bm_interval(model, q);
    let t_vec = jumps.exit_rates();

    let explicit = q == 0.0 && model.mean_x1() > 0.0;
    let (a, b, history, start_value) = if explicit {
        let b = alpha_resolvent(model, 0.0)? * (2.0 * lambda / s2);
        (spurious, b, Vec::new(), None)
    } else {
        let width = interval.1 - interval.0;
        let mut a0 = opts.start.unwrap_or(0.5 * (interval.0 + interval.1));
        if !a0.is_finite() || a0 <= spurious {
            return Err(Error::BadStart(format!(
                "a0 = {a0} must exceed 2d/sigma^2 = {spurious}"
            )));
        }
        if q == 0.0 {
            // 2d/sigma^2 is an absorbing spurious fixed point when q = 0.
            a0 = a0.max(spurious + 1e-6 * width);
        }
        let mut history = vec![a0];
        let mut a_prev = a0;
        let mut b;
        let mut iter = 0;
        loop {
            iter += 1;
            b = alpha_resolvent(model, a_prev - spurious)? * (2.0 * lambda / s2);
            let bt = b.dot(&t_vec.transpose());
            let radicand = d * d + s2 * (2.0 * lambda + 2.0 * q - s2 * bt);
            let a = (d + radicand.max(0.0).sqrt()) / s2;
            history.push(a);
            let gap = (a - a_prev).abs();
            a_prev = a;
            if gap < opts.tol {
                break;
            }
            if iter >= opts.max_iter {
                return Err(Error::MaxIterExceeded {
                    iterations: iter,
                    last: a,
                    gap,
                });
            }
        }
        (a_prev, b, history, Some(a0))
    };

    let mut generator = DMatrix::zeros(n + 1, n + 1);
    generator[(0, 0)] = -a;
    for j in 0..n {
        generator[(0, j + 1)] = b[j];
        generator[(j + 1, 0)] = t_vec[j];
        for k in 0..n {
            generator[(j + 1, k + 1)] = jumps.sub_generator()[(j, k)];
        }
    }
    let tail = return_probabilities(model, phi_root.phi)?;
    let mut nu = DVector::zeros(n + 1);
    nu[0] = 1.0;
    nu.rows_mut(1, n).copy_from(&tail);
    let mut front = RowDVector::zeros(n + 1);
    front[0] = 1.0;

    let repr = ScaleRepr {
        model: model.clone(),
        phi_root,
        params: ReprParams::Brownian { a, b },
        front,
        generator,
        nu,
        explicit,
    };
    Ok(finish(repr, history, start_value, interval))
}

/// Solves for `pi` when `sigma = 0`.
///
/// Explicit case `q = 0`, `E X_1 > 0`: `pi = (lambda/d) alpha (-T)^{-1}`.
/// Otherwise `pi_n = lambda alpha ((lambda + q - d pi_{n-1} t) I - d T)^{-1}`,
/// which depends on `pi_{n-1}` only through `pi_{n-1} t`; the default start
/// is `pi_0 t = lambda / (2d)`.
pub fn solve_cpp(model: &LevyModel, q: f64, opts: &SolveOptions) -> Result<(ScaleRepr, SolveReport)> {
    if model.has_brownian() {
        return Err(Error::SigmaPositive);
    }
    check_options(opts)?;
    let phi_root = model.phi(q)?;
    let jumps = model.jumps();
    let (d, lambda) = (model.drift(), model.lambda());
    let ceiling = lambda / d;
    let interval = (0.0, ceiling);
    let t_vec = jumps.exit_rates();

    let explicit = q == 0.0 && model.mean_x1() > 0.0;
    let (pi, history, start_value) = if explicit {
        (alpha_resolvent(model, 0.0)? * (lambda / d), Vec::new(), None)
    } else {
        let mut s0 = opts.start.unwrap_or(0.5 * ceiling);
        if !s0.is_finite() || s0 >= ceiling {
            return Err(Error::BadStart(format!(
                "pi0 t = {s0} must be below lambda/d = {ceiling}"
            )));
        }
        if q == 0.0 {
            // lambda/d is a spurious fixed point when q = 0.
            s0 = s0.min(ceiling * (1.0 - 1e-6));
        }
        let mut history = vec![s0];
        let mut s_prev = s0;
        let mut pi;
        let mut iter = 0;
        loop {
            iter += 1;
            // lambda alpha ((lambda + q - d s) I - d T)^{-1}
            //   = (lambda / d) alpha (((lambda + q)/d - s) I - T)^{-1}
            pi = alpha_resolvent(model, (lambda + q) / d - s_prev)? * (lambda / d);
            let s = pi.dot(&t_vec.transpose());
            history.push(s);
            let gap = (s - s_prev).abs();
            s_prev = s;
            if gap < opts.tol {
                break;
            }
            if iter >= opts.max_iter {
                return Err(Error::MaxIterExceeded {
                    iterations: iter,
                    last: s,
                    gap,
                });
            }
        }
        (pi, history, Some(s0))
    };

    let generator = jumps.sub_generator() + t_vec * &pi;
    let nu = return_probabilities(model, phi_root.phi)?;
    let repr = ScaleRepr {
        model: model.clone(),
        phi_root,
        front: pi.clone(),
        params: ReprParams::CompoundPoisson { pi },
        generator,
        nu,
        explicit,
    };
    Ok(finish(repr, history, start_value, interval))
}

fn finish(
    repr: ScaleRepr,
    history: Vec<f64>,
    start_value: Option<f64>,
    interval: (f64, f64),
) -> (ScaleRepr, SolveReport) {
    let (direction, final_gap, empirical_rate) = increment_stats(&history);
    let theoretical_rate = repr.theoretical_rate().ok();
    let (residuals, residuals_ok) = repr.residuals();
    let report = SolveReport {
        iterations: history.len().saturating_sub(1),
        iterate_history: history,
        direction,
        final_gap,
        empirical_rate,
        theoretical_rate,
        start_value,
        explicit: repr.explicit,
        interval,
        residuals,
        residuals_ok,
    };
    (repr, report)
}

/// Dispatches to [`solve_bm`] or [`solve_cpp`] according to `sigma`.
pub fn solve(model: &LevyModel, q: f64, opts: &SolveOptions) -> Result<(ScaleRepr, SolveReport)> {
    if model.has_brownian() {
        solve_bm(model, q, opts)
    } else {
        solve_cpp(model, q, opts)
    }
}

/// Solves for several killing rates, largest first.
///
/// With `warm_start` each solve starts from the previous solution's scalar
/// unknown (unless `opts.start` is set). Results are returned in the order
/// of `qs`.
pub fn solve_ladder(
    model: &LevyModel,
    qs: &[f64],
    opts: &SolveOptions,
    warm_start: bool,
) -> Vec<Result<(ScaleRepr, SolveReport)>> {
    let mut order: Vec<usize> = (0..qs.len()).collect();
    order.sort_by(|&i, &j| qs[j].total_cmp(&qs[i]));
    let mut results: Vec<Option<Result<(ScaleRepr, SolveReport)>>> = vec![None; qs.len()];
    let mut previous: Option<f64> = None;
    for idx in order {
        let mut local = opts.clone();
        if warm_start && local.start.is_none() {
            local.start = previous;
        }
        let mut result = solve(model, qs[idx], &local);
        if matches!(result, Err(Error::BadStart(_))) && local.start != opts.start {
            result = solve(model, qs[idx], opts);
        }
        if let Ok((repr, _)) = &result {
            if !repr.explicit {
                previous = Some(scalar_unknown(repr));
            }
        }
        results[idx] = Some(result);
    }
    results.into_iter().map(|r| r.expect("every index solved")).collect()
}

/// `a` for `sigma > 0`, `pi t` for `sigma = 0`.
pub fn scalar_unknown(repr: &ScaleRepr) -> f64 {
    match &repr.params {
        ReprParams::Brownian { a, .. } => *a,
        ReprParams::CompoundPoisson { pi } => pi.dot(&repr.model.jumps().exit_rates().transpose()),
    }
}
