//! Fluctuation identities expressed through `W_q`.

use crate::error::{Error, Result};
use crate::levy::LevyModel;
use crate::scale::{solve, ScaleRepr, SolveOptions};

/// Tolerance used when solving for the representations built here.
const SOLVE_TOL: f64 = 1e-13;
/// Absolute mass below which the outer quadrature stops extending.
const TAIL_MASS: f64 = 1e-9;

fn check_level(x: f64) -> Result<()> {
    if x < 0.0 || x.is_nan() {
        Err(Error::NegativeArgument(x))
    } else {
        Ok(())
    }
}

/// `E(e^{-q tau_x^+}; tau_x^+ < tau_{-y}^-) = W_q(y) / W_q(x + y)`.
pub fn two_sided_exit(repr: &ScaleRepr, x: f64, y: f64) -> Result<f64> {
    check_level(x)?;
    check_level(y)?;
    if x == 0.0 && y == 0.0 {
        return Err(Error::DegenerateLevels);
    }
    let den = repr.eval_w(x + y)?;
    if den <= 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok((repr.eval_w(y)? / den).clamp(0.0, 1.0))
}

/// `E e^{-q tau_x^+} = e^{-Phi_q x}`.
pub fn first_passage_up(model: &LevyModel, q: f64, x: f64) -> Result<f64> {
    check_level(x)?;
    Ok((-model.phi(q)?.phi * x).exp())
}

/// Law of the stationary workload `sup_t (-X_t)` of a stable queue.
#[derive(Debug, Clone)]
pub struct StationaryWorkload {
    mean: f64,
    repr: ScaleRepr,
}

impl StationaryWorkload {
    pub fn new(model: &LevyModel) -> Result<Self> {
        let mean = model.mean_x1();
        if !(mean > 0.0) {
            return Err(Error::Unstable(mean));
        }
        let (repr, _) = solve(model, 0.0, &SolveOptions::with_tol(SOLVE_TOL))?;
        Ok(Self { mean, repr })
    }

    /// `P(V <= x) = E X_1 W_0(x)`.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        Ok((self.mean * self.repr.eval_w(x)?).clamp(0.0, 1.0))
    }

    pub fn repr(&self) -> &ScaleRepr {
        &self.repr
    }
}

pub fn stationary_workload_cdf(model: &LevyModel, x: f64) -> Result<f64> {
    StationaryWorkload::new(model)?.cdf(x)
}

/// Law of the workload at an independent exponential time of rate `q`,
/// started from level `v`.
#[derive(Debug, Clone)]
pub struct WorkloadAtEq {
    pub atom_at_zero: f64,
    pub v: f64,
    pub q: f64,
    repr: ScaleRepr,
    /// `q / psi'(Phi_q)`
    factor: f64,
    /// `e^{-Phi_q v} / Phi_q`
    damp: f64,
}

/// `P(V_{e_q} in dx) = q (e^{-Phi_q v} W_q'(x) / Phi_q - W_q(x - v)) dx` on
/// `x > 0`, plus an atom `(q / Phi_q) e^{-Phi_q v} W_q(0)` at zero.
pub fn workload_at_eq(model: &LevyModel, q: f64, v: f64) -> Result<WorkloadAtEq> {
    if !(q > 0.0) {
        return Err(Error::NonpositiveQ(q));
    }
    check_level(v)?;
    let (repr, _) = solve(model, q, &SolveOptions::with_tol(SOLVE_TOL))?;
    let root = repr.phi_root();
    let damp = (-root.phi * v).exp() / root.phi;
    let atom_at_zero = q * damp * repr.eval_w(0.0)?;
    Ok(WorkloadAtEq {
        atom_at_zero,
        v,
        q,
        factor: q / root.psi_prime_at_phi,
        damp,
        repr,
    })
}

impl WorkloadAtEq {
    pub fn repr(&self) -> &ScaleRepr {
        &self.repr
    }

    /// The density, written so that the growing exponentials cancel
    /// analytically: with `h(x) = f e^{Gx} nu` it equals
    /// `q/psi' (h(x - v) - damp h'(x))` for `x >= v` and
    /// `q/psi' (e^{Phi (x - v)} - damp h'(x))` below `v`.
    pub fn density(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::BadParameter(format!("density needs x > 0, got {x}")));
        }
        self.limit_at(x)
    }

    /// One-sided limits of the density at the kink `x = v > 0`.
    pub fn density_at_kink(&self) -> Result<(f64, f64)> {
        if !(self.v > 0.0) {
            return Err(Error::BadParameter("no kink when v = 0".into()));
        }
        let dh = self.repr.hitting_grid(self.v, 1.0, 1)?[0].1;
        let left = self.factor * (1.0 - self.damp * dh);
        let right = self.factor * (self.repr.hitting_prob(0.0)? - self.damp * dh);
        Ok((left, right))
    }

    /// Density on `start + k step`, `k < count`, with `start > 0`.
    pub fn density_grid(&self, start: f64, step: f64, count: usize) -> Result<Vec<f64>> {
        if !(start > 0.0) {
            return Err(Error::BadParameter(format!("density needs x > 0, got {start}")));
        }
        let dh = self.repr.hitting_grid(start, step, count)?;
        let phi = self.repr.phi_root().phi;
        // h(x - v) on the part of the grid at or above v.
        let first_above = (0..count).find(|&k| start + k as f64 * step >= self.v);
        let shifted = match first_above {
            Some(k0) => self
                .repr
                .hitting_grid(start + k0 as f64 * step - self.v, step, count - k0)?,
            None => Vec::new(),
        };
        Ok((0..count)
            .map(|k| {
                let x = start + k as f64 * step;
                let base = match first_above {
                    Some(k0) if k >= k0 => shifted[k - k0].0,
                    _ => (phi * (x - self.v)).exp(),
                };
                self.factor * (base - self.damp * dh[k].1)
            })
            .collect())
    }

    fn simpson(&self, a: f64, b: f64, intervals: usize) -> Result<f64> {
        let m = intervals + intervals % 2;
        let h = (b - a) / m as f64;
        // End values are one-sided limits: the density jumps at the kink.
        let mut values = if a == 0.0 {
            let mut rest = self.density_grid(h, h, m)?;
            rest.insert(0, self.limit_at(0.0)?);
            rest
        } else {
            self.density_grid(a, h, m + 1)?
        };
        if b == self.v && self.v > 0.0 {
            values[m] = self.density_at_kink()?.0;
        }
        let interior: f64 = values[1..m]
            .iter()
            .enumerate()
            .map(|(i, f)| if i % 2 == 0 { 4.0 * f } else { 2.0 * f })
            .sum();
        Ok(h / 3.0 * (values[0] + interior + values[m]))
    }

    /// Right limit of the density at `x`.
    fn limit_at(&self, x: f64) -> Result<f64> {
        let dh = self.repr.hitting_grid(x, 1.0, 1)?[0].1;
        let base = if x >= self.v {
            self.repr.hitting_grid(x - self.v, 1.0, 1)?[0].0
        } else {
            (self.repr.phi_root().phi * (x - self.v)).exp()
        };
        Ok(self.factor * (base - self.damp * dh))
    }

    /// Atom plus the integral of the density, by composite Simpson split at
    /// the kink and extended in blocks until a block carries less than `1e-9`.
    pub fn total_mass(&self) -> Result<f64> {
        let rates = self.repr.eigenvalues()?;
        let fastest = rates.iter().map(|z| z.norm()).fold(self.repr.phi_root().phi, f64::max);
        let slowest = rates
            .iter()
            .map(|z| -z.re)
            .filter(|r| *r > 0.0)
            .fold(f64::INFINITY, f64::min)
            .min(self.repr.phi_root().phi);
        let step = (0.02 / fastest).min(0.01);
        let block = (5.0 / slowest).max(1.0);
        let intervals = |len: f64| ((len / step).ceil() as usize).clamp(2, 4_000_000);

        let mut mass = self.atom_at_zero;
        if self.v > 0.0 {
            mass += self.simpson(0.0, self.v, intervals(self.v))?;
        }
        let mut a = self.v;
        for _ in 0..200 {
            let b = a + block;
            let part = if a == 0.0 {
                self.simpson(0.0, b, intervals(block))?
            } else {
                self.simpson(a, b, intervals(block))?
            };
            mass += part;
            a = b;
            if part.abs() < TAIL_MASS {
                break;
            }
        }
        Ok(mass)
    }
}
