//! Spectrally-negative Lévy process `X_t = d t + sigma B_t - sum_{i <= N_t} C_i`
//! with Poisson(lambda) arrivals of phase-type jumps `C_i`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::ph::PhaseTypeDist;

const ROOT_TOL: f64 = 1e-10;
const MAX_ROOT_ITER: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct LevyModel {
    sigma: f64,
    drift: f64,
    lambda: f64,
    jumps: PhaseTypeDist,
}

/// `Phi_q` together with `psi'(Phi_q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiRoot {
    pub q: f64,
    pub phi: f64,
    pub psi_prime_at_phi: f64,
}

impl LevyModel {
    pub fn new(sigma: f64, drift: f64, lambda: f64, jumps: PhaseTypeDist) -> Result<Self> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::InvalidModel(format!("sigma must be >= 0, got {sigma}")));
        }
        if !drift.is_finite() {
            return Err(Error::InvalidModel(format!("drift must be finite, got {drift}")));
        }
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::InvalidModel(format!("lambda must be > 0, got {lambda}")));
        }
        if sigma == 0.0 && drift <= 0.0 {
            return Err(Error::InvalidModel(
                "drift must be positive when sigma = 0 (paths would be monotone)".into(),
            ));
        }
        Ok(Self {
            sigma,
            drift,
            lambda,
            jumps,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn drift(&self) -> f64 {
        self.drift
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn jumps(&self) -> &PhaseTypeDist {
        &self.jumps
    }

    pub fn has_brownian(&self) -> bool {
        self.sigma > 0.0
    }

    /// Laplace exponent `psi(theta) = log E e^{theta X_1}` for `theta >= 0`.
    pub fn psi(&self, theta: f64) -> Result<f64> {
        if theta < 0.0 || theta.is_nan() {
            return Err(Error::NegativeArgument(theta));
        }
        self.psi_at(theta)
    }

    /// `psi` at any real point where the jump transform is defined.
    pub(crate) fn psi_at(&self, theta: f64) -> Result<f64> {
        let s2 = self.sigma * self.sigma;
        Ok(0.5 * s2 * theta * theta
            + self.drift * theta
            + self.lambda * (self.jumps.transform_at(theta)? - 1.0))
    }

    pub fn psi_prime(&self, theta: f64) -> Result<f64> {
        if theta < 0.0 || theta.is_nan() {
            return Err(Error::NegativeArgument(theta));
        }
        Ok(self.sigma * self.sigma * theta
            + self.drift
            + self.lambda * self.jumps.transform_derivative(theta)?)
    }

    /// `psi(z) - q` and its derivative at a complex point off the spectrum of `T`.
    pub(crate) fn psi_q_complex(&self, z: Complex64, q: f64) -> Result<(Complex64, Complex64)> {
        let s2 = self.sigma * self.sigma;
        let (tr, dtr) = self.jumps.transform_complex(z)?;
        let value = 0.5 * s2 * z * z + self.drift * z + self.lambda * (tr - 1.0) - q;
        let derivative = s2 * z + self.drift + self.lambda * dtr;
        Ok((value, derivative))
    }

    /// `E X_1 = d - lambda E C`.
    pub fn mean_x1(&self) -> f64 {
        self.drift - self.lambda * self.jumps.mean()
    }

    /// Whether `q = 0` with zero mean, the one case excluded throughout.
    pub fn violates_a1(&self, q: f64) -> bool {
        if q > 0.0 {
            return false;
        }
        let scale = self.drift.abs() + self.lambda * self.jumps.mean();
        self.mean_x1().abs() <= 1e-14 * scale
    }

    /// Upper bound on `Phi_q` obtained by dropping the (non-negative) jump
    /// transform from `psi`.
    pub fn phi_upper_bound(&self, q: f64) -> f64 {
        let (d, s2) = (self.drift, self.sigma * self.sigma);
        if s2 > 0.0 {
            (d + (d * d + 2.0 * s2 * (self.lambda + q)).sqrt()) / s2
        } else {
            (self.lambda + q) / d
        }
    }

    /// Right-most non-negative root of `psi(theta) = q`.
    ///
    /// Newton's method started at [`LevyModel::phi_upper_bound`] descends
    /// monotonically onto the right-most root since `psi` is convex; a
    /// bracket is carried along and bisection takes over whenever a Newton
    /// step leaves it.
    pub fn phi(&self, q: f64) -> Result<PhiRoot> {
        if q < 0.0 || q.is_nan() {
            return Err(Error::NegativeArgument(q));
        }
        if self.violates_a1(q) {
            return Err(Error::AssumptionA1Violated);
        }
        let mean = self.mean_x1();
        if q == 0.0 && mean > 0.0 {
            return Ok(PhiRoot {
                q,
                phi: 0.0,
                psi_prime_at_phi: mean,
            });
        }

        let f = |theta: f64| -> Result<f64> { Ok(self.psi(theta)? - q) };
        let mut hi = self.phi_upper_bound(q);
        let mut lo = if q > 0.0 {
            0.0
        } else {
            // q = 0 and E X_1 < 0: psi dips below zero right of the origin.
            let mut lo = 0.5 * hi;
            while f(lo)? >= 0.0 {
                lo *= 0.5;
                if lo < f64::MIN_POSITIVE {
                    return Err(Error::NoConvergence);
                }
            }
            lo
        };

        let tol = ROOT_TOL * q.max(1.0);
        let mut theta = hi;
        let mut value = f(theta)?;
        for _ in 0..MAX_ROOT_ITER {
            if value.abs() <= 1e-3 * tol && value >= 0.0 {
                break;
            }
            if value > 0.0 {
                hi = theta;
            } else {
                lo = theta;
            }
            let slope = self.psi_prime(theta)?;
            let newton = theta - value / slope;
            let next = if slope > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if next == theta || (hi - lo) <= f64::EPSILON * hi {
                break;
            }
            theta = next;
            value = f(theta)?;
        }
        if value.abs() > tol {
            return Err(Error::NoConvergence);
        }
        let psi_prime_at_phi = self.psi_prime(theta)?;
        Ok(PhiRoot {
            q,
            phi: theta,
            psi_prime_at_phi,
        })
    }
}
