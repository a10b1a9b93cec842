//! Phase-type distributions.
//!
//! `PH(alpha, T)` is the absorption time of a transient continuous-time
//! Markov chain started from `alpha` with sub-generator `T`. The exit rate
//! vector `t = -T 1` is kept alongside and always recomputed from `T`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, RowDVector};
use num_complex::Complex64;
use rand::distr::{Distribution, Open01};
use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::matfun::{expm_metzler, solve_complex, solve_linear};
use crate::rng::rng_from_seed;

const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTypeDist {
    alpha: RowDVector<f64>,
    sub_generator: DMatrix<f64>,
    exit: DVector<f64>,
    /// Per phase: total outflow rate and cumulative jump probabilities over
    /// phases `0..n` followed by the exit.
    jump_table: Vec<(f64, Vec<f64>)>,
    alpha_cdf: Vec<f64>,
}

impl PhaseTypeDist {
    /// Validates `(alpha, T)` and derives the exit vector.
    pub fn new(alpha: Vec<f64>, sub_generator: DMatrix<f64>) -> Result<Self> {
        let n = alpha.len();
        if n == 0 {
            return Err(Error::DimensionMismatch("empty phase space".into()));
        }
        if sub_generator.nrows() != n || sub_generator.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "alpha has {n} entries but T is {}x{}",
                sub_generator.nrows(),
                sub_generator.ncols()
            )));
        }
        if alpha.iter().chain(sub_generator.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite entry in alpha or T".into()));
        }

        if let Some(i) = alpha.iter().position(|&a| a < 0.0) {
            return Err(Error::NotADistribution(format!("alpha[{i}] = {} < 0", alpha[i])));
        }
        let mass: f64 = alpha.iter().sum();
        if (mass - 1.0).abs() > PROB_TOL {
            return Err(Error::NotADistribution(format!("entries sum to {mass}")));
        }

        let scale = sub_generator
            .diagonal()
            .iter()
            .fold(1.0f64, |acc, v| acc.max(v.abs()));
        let mut exit = DVector::zeros(n);
        for i in 0..n {
            if sub_generator[(i, i)] >= 0.0 {
                return Err(Error::NotASubGenerator(format!(
                    "diagonal entry T[{i}][{i}] = {} is not negative",
                    sub_generator[(i, i)]
                )));
            }
            for j in 0..n {
                if i != j && sub_generator[(i, j)] < 0.0 {
                    return Err(Error::NotASubGenerator(format!(
                        "off-diagonal entry T[{i}][{j}] = {} is negative",
                        sub_generator[(i, j)]
                    )));
                }
            }
            let row_sum: f64 = sub_generator.row(i).sum();
            if row_sum > PROB_TOL * scale {
                return Err(Error::NotASubGenerator(format!("row {i} sums to {row_sum} > 0")));
            }
            exit[i] = (-row_sum).max(0.0);
        }

        let expected_time = solve_linear(&(-&sub_generator), &DVector::from_element(n, 1.0))
            .map_err(|_| Error::SingularT("(-T) x = 1 has no solution".into()))?;
        if expected_time.iter().any(|&v| v <= 0.0) {
            return Err(Error::SingularT(
                "(-T)^{-1} 1 is not strictly positive".into(),
            ));
        }

        check_reachability(&alpha, &sub_generator, &exit)?;

        let jump_table = (0..n)
            .map(|i| {
                let rate = -sub_generator[(i, i)];
                let mut acc = 0.0;
                let mut cdf: Vec<f64> = (0..n)
                    .map(|j| {
                        if j != i {
                            acc += sub_generator[(i, j)] / rate;
                        }
                        acc
                    })
                    .collect();
                cdf.push(1.0);
                (rate, cdf)
            })
            .collect();
        let mut acc = 0.0;
        let alpha_cdf = alpha
            .iter()
            .map(|a| {
                acc += a;
                acc
            })
            .collect();

        Ok(Self {
            alpha: RowDVector::from_vec(alpha),
            sub_generator,
            exit,
            jump_table,
            alpha_cdf,
        })
    }

    /// Like [`PhaseTypeDist::new`], additionally checking a supplied exit vector
    /// against `-T 1`.
    pub fn with_exit(alpha: Vec<f64>, sub_generator: DMatrix<f64>, exit: &[f64]) -> Result<Self> {
        let dist = Self::new(alpha, sub_generator)?;
        if exit.len() != dist.n() {
            return Err(Error::DimensionMismatch(format!(
                "exit vector has {} entries, expected {}",
                exit.len(),
                dist.n()
            )));
        }
        for (i, (&given, &derived)) in exit.iter().zip(dist.exit.iter()).enumerate() {
            if (given - derived).abs() > PROB_TOL {
                return Err(Error::NotASubGenerator(format!(
                    "exit rate t[{i}] = {given} differs from -T 1 = {derived}"
                )));
            }
        }
        Ok(dist)
    }

    /// Exponential distribution with the given rate.
    pub fn exponential(rate: f64) -> Result<Self> {
        Self::new(vec![1.0], DMatrix::from_element(1, 1, -rate))
    }

    /// Erlang distribution with `k` phases of the given rate.
    pub fn erlang(k: usize, rate: f64) -> Result<Self> {
        let mut t = DMatrix::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = -rate;
            if i + 1 < k {
                t[(i, i + 1)] = rate;
            }
        }
        let mut alpha = vec![0.0; k];
        if k > 0 {
            alpha[0] = 1.0;
        }
        Self::new(alpha, t)
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &RowDVector<f64> {
        &self.alpha
    }

    pub fn sub_generator(&self) -> &DMatrix<f64> {
        &self.sub_generator
    }

    pub fn exit_rates(&self) -> &DVector<f64> {
        &self.exit
    }

    /// `alpha (-T)^{-1} 1`.
    pub fn mean(&self) -> f64 {
        let ones = DVector::from_element(self.n(), 1.0);
        // Solvability was established at construction.
        let x = solve_linear(&(-&self.sub_generator), &ones).expect("T is invertible");
        self.alpha.dot(&x.transpose())
    }

    /// `alpha e^{T x} t`.
    pub fn density(&self, x: f64) -> Result<f64> {
        if x < 0.0 || x.is_nan() {
            return Err(Error::NegativeArgument(x));
        }
        let e = expm_metzler(&self.sub_generator, x);
        Ok((&self.alpha * e * &self.exit)[0].max(0.0))
    }

    /// `P(C > x) = alpha e^{T x} 1`.
    pub fn survival(&self, x: f64) -> Result<f64> {
        if x < 0.0 || x.is_nan() {
            return Err(Error::NegativeArgument(x));
        }
        let e = expm_metzler(&self.sub_generator, x);
        Ok((&self.alpha * e).sum().clamp(0.0, 1.0))
    }

    /// Laplace transform `alpha (theta I - T)^{-1} t` for `theta >= 0`.
    pub fn transform(&self, theta: f64) -> Result<f64> {
        if theta < 0.0 || theta.is_nan() {
            return Err(Error::NegativeArgument(theta));
        }
        self.transform_at(theta)
    }

    /// The transform at any real point where `theta I - T` is invertible,
    /// including negative points right of the spectral abscissa of `T`.
    pub(crate) fn transform_at(&self, theta: f64) -> Result<f64> {
        let y = self.resolvent_exit(theta)?;
        Ok(self.alpha.dot(&y.transpose()))
    }

    /// Derivative in `theta` of the transform: `-alpha (theta I - T)^{-2} t`.
    pub fn transform_derivative(&self, theta: f64) -> Result<f64> {
        let y = self.resolvent_exit(theta)?;
        let mut m = -&self.sub_generator;
        for i in 0..self.n() {
            m[(i, i)] += theta;
        }
        let z = solve_linear(&m, &y)?;
        Ok(-self.alpha.dot(&z.transpose()))
    }

    /// `(theta I - T)^{-1} t`.
    pub(crate) fn resolvent_exit(&self, theta: f64) -> Result<DVector<f64>> {
        let mut m = -&self.sub_generator;
        for i in 0..self.n() {
            m[(i, i)] += theta;
        }
        solve_linear(&m, &self.exit)
    }

    /// Transform and its derivative at a complex point off the spectrum of `T`.
    pub(crate) fn transform_complex(&self, z: Complex64) -> Result<(Complex64, Complex64)> {
        let n = self.n();
        let mut m: DMatrix<Complex64> = self.sub_generator.map(|v| Complex64::new(-v, 0.0));
        for i in 0..n {
            m[(i, i)] += z;
        }
        let exit = self.exit.map(|v| Complex64::new(v, 0.0));
        let y = solve_complex(&m, &exit)?;
        let w = solve_complex(&m, &y)?;
        let alpha = self.alpha.map(|v| Complex64::new(v, 0.0));
        let value = (0..n).map(|i| alpha[i] * y[i]).sum();
        let derivative = -(0..n).map(|i| alpha[i] * w[i]).sum::<Complex64>();
        Ok((value, derivative))
    }

    /// Exact draw by simulating the underlying chain until absorption.
    pub fn sample_lifetime<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut state = pick(&self.alpha_cdf, rng.random::<f64>());
        let n = self.n();
        let mut time = 0.0;
        loop {
            let (rate, cdf) = &self.jump_table[state];
            let hold: f64 = Exp1.sample(rng);
            time += hold / rate;
            let next = pick(cdf, rng.random::<f64>());
            if next == n {
                return time;
            }
            state = next;
        }
    }
}

fn pick(cdf: &[f64], u: f64) -> usize {
    let u = u * cdf[cdf.len() - 1];
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
}

/// Every phase must be visited with positive probability and must be able to
/// reach absorption.
fn check_reachability(alpha: &[f64], t: &DMatrix<f64>, exit: &DVector<f64>) -> Result<()> {
    let n = alpha.len();
    let mut forward = vec![false; n];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for (i, &a) in alpha.iter().enumerate() {
        if a > 0.0 {
            forward[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for j in 0..n {
            if j != i && t[(i, j)] > 0.0 && !forward[j] {
                forward[j] = true;
                queue.push_back(j);
            }
        }
    }
    if let Some(i) = forward.iter().position(|r| !r) {
        return Err(Error::UnreachablePhase(i));
    }

    let mut backward = vec![false; n];
    for i in 0..n {
        if exit[i] > 0.0 {
            backward[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(j) = queue.pop_front() {
        for i in 0..n {
            if i != j && t[(i, j)] > 0.0 && !backward[i] {
                backward[i] = true;
                queue.push_back(i);
            }
        }
    }
    if let Some(i) = backward.iter().position(|r| !r) {
        return Err(Error::UnreachablePhase(i));
    }
    Ok(())
}

/// Random Coxian distribution with `n` phases.
///
/// The chain starts in phase 1. Phase `i` is left at rate `1 / U_i` with
/// `U_i` uniform on (0, 1); from phase `i < n` it exits with probability
/// `p_i`, uniform on (0, `pkill_max`), and otherwise moves to phase `i + 1`.
/// The last phase always exits. Draws are taken phase by phase, `U_i` before
/// `p_i`.
pub fn sample_coxian(n: usize, seed: u64, pkill_max: f64) -> Result<PhaseTypeDist> {
    let mut rng = rng_from_seed(seed);
    sample_coxian_with(n, pkill_max, &mut rng)
}

/// [`sample_coxian`] drawing from a caller-supplied generator.
pub fn sample_coxian_with<R: Rng + ?Sized>(
    n: usize,
    pkill_max: f64,
    rng: &mut R,
) -> Result<PhaseTypeDist> {
    if n == 0 {
        return Err(Error::BadParameter("number of phases must be positive".into()));
    }
    if !(pkill_max > 0.0 && pkill_max < 1.0) {
        return Err(Error::BadParameter(format!(
            "pkill_max must lie in (0, 1), got {pkill_max}"
        )));
    }
    let mut t = DMatrix::zeros(n, n);
    for i in 0..n {
        let u: f64 = Open01.sample(rng);
        let rate = 1.0 / u;
        t[(i, i)] = -rate;
        if i + 1 < n {
            let v: f64 = Open01.sample(rng);
            let p = pkill_max * v;
            t[(i, i + 1)] = rate * (1.0 - p);
        }
    }
    let mut alpha = vec![0.0; n];
    alpha[0] = 1.0;
    PhaseTypeDist::new(alpha, t)
}
