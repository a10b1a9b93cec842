//! The classical root-based representation of the scale function.
//!
//! Writing `psi(theta) - q = P(theta) / Q(theta)` with `Q` the characteristic
//! polynomial of `T`, the zeros of `P` other than `Phi_q` form the set `Z_q`
//! and, when they are simple,
//!
//! ```text
//! W_q(x) = e^{Phi_q x} / psi'(Phi_q) + sum_{z in Z_q} e^{z x} / psi'(z).
//! ```

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::levy::{LevyModel, PhiRoot};
use crate::matfun::{eigenvalues, poly_eval};
use crate::scale::ScaleRepr;

const PHI_MATCH_TOL: f64 = 1e-7;
const SIMPLE_TOL: f64 = 1e-7;
const REAL_TOL: f64 = 1e-9;
const RESIDUAL_TOL: f64 = 1e-8;
const CANCEL_TOL: f64 = 1e-6;
const MAX_POLISH_SHIFT: f64 = 1e-2;
const NEWTON_ITER: usize = 50;

/// Numerator polynomial in the scaled variable `u = theta / scale`.
#[derive(Debug, Clone)]
struct ScaledNumerator {
    scale: f64,
    /// Ascending coefficients in `u`.
    coeffs: Vec<f64>,
    eig_t: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RootsDiagnostics {
    /// Largest `|P(z)| / (max|coef| max(1,|z|)^deg)` over `Z_q`, in the
    /// scaled variable.
    pub max_residual: f64,
    pub residuals_ok: bool,
    /// Roots whose Newton polishing on `psi_q` failed; kept unpolished.
    pub unpolished: usize,
    /// Largest displacement applied by polishing, relative to `max(1,|z|)`.
    pub max_polish_shift: f64,
    /// Number of zeros with strictly positive real part (should be none).
    pub positive_real_part: usize,
    /// Zeros next to a pole of `psi` whose weight came from the eigenvectors
    /// of the linearization.
    pub pole_adjacent: usize,
}

#[derive(Debug, Clone)]
pub struct RootsRepr {
    pub q: f64,
    pub phi_root: PhiRoot,
    /// `Z_q`, conjugate-closed; real zeros first, then pairs `z, conj(z)`.
    pub zq: Vec<Complex64>,
    /// `1 / psi'(z)` for each `z` in `zq`.
    pub weights: Vec<Complex64>,
    pub count: usize,
    /// Zeros of the numerator shared with `Q` (non-minimal representations).
    pub cancelled: Vec<Complex64>,
    pub diagnostics: RootsDiagnostics,
}

/// Coefficients of `prod (u - r_i)` with conjugate-closed `r`.
fn poly_from_roots(roots: &[Complex64]) -> Vec<f64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (k, &ck) in c.iter().enumerate() {
            next[k + 1] += ck;
            next[k] -= r * ck;
        }
        c = next;
    }
    c.into_iter().map(|z| z.re).collect()
}

/// Monomial coefficients of the interpolant through `(nodes[i], values[i])`
/// (Björck–Pereyra).
fn interpolate(nodes: &[f64], values: &[f64]) -> Vec<f64> {
    let m = nodes.len();
    let mut c = values.to_vec();
    for k in 0..m.saturating_sub(1) {
        for i in (k + 1..m).rev() {
            c[i] = (c[i] - c[i - 1]) / (nodes[i] - nodes[i - k - 1]);
        }
    }
    for k in (0..m.saturating_sub(1)).rev() {
        for i in k..m - 1 {
            c[i] -= c[i + 1] * nodes[k];
        }
    }
    c
}

fn scaled_numerator(model: &LevyModel, q: f64) -> Result<ScaledNumerator> {
    if q < 0.0 || q.is_nan() {
        return Err(Error::NegativeArgument(q));
    }
    let jumps = model.jumps();
    let n = jumps.n();
    let eig_t = eigenvalues(jumps.sub_generator())?;
    let radius = eig_t.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let scale = radius.max(model.phi_upper_bound(q)).max(f64::MIN_POSITIVE);

    let scaled_eig: Vec<Complex64> = eig_t.iter().map(|z| z / scale).collect();
    let q_poly = poly_from_roots(&scaled_eig);

    // R(u) = Q(u) * transform(scale u) has degree at most n - 1.
    let nodes: Vec<f64> = (0..n)
        .map(|j| 1.0 + ((2 * j + 1) as f64 * std::f64::consts::PI / (2 * n) as f64).cos())
        .collect();
    let mut sorted = nodes.clone();
    sorted.sort_by(f64::total_cmp);
    let values: Vec<f64> = sorted
        .iter()
        .map(|&u| {
            let qv = poly_eval(&q_poly, Complex64::new(u, 0.0)).re;
            Ok(qv * jumps.transform(scale * u)?)
        })
        .collect::<Result<_>>()?;
    let r_poly = interpolate(&sorted, &values);

    let s2 = model.sigma() * model.sigma();
    let quad = [-(model.lambda() + q), model.drift() * scale, 0.5 * s2 * scale * scale];
    let mut coeffs = vec![0.0; n + 3];
    for (i, &a) in quad.iter().enumerate() {
        for (k, &b) in q_poly.iter().enumerate() {
            coeffs[i + k] += a * b;
        }
    }
    for (k, &r) in r_poly.iter().enumerate() {
        coeffs[k] += model.lambda() * r;
    }
    if s2 == 0.0 {
        coeffs.pop();
    }
    Ok(ScaledNumerator {
        scale,
        coeffs,
        eig_t,
    })
}

/// Ascending coefficients of `P(theta) = Q(theta) (psi(theta) - q)`, up to a
/// positive factor. The degree is `n + 2` when `sigma > 0` and `n + 1`
/// otherwise.
pub fn numerator_poly(model: &LevyModel, q: f64) -> Result<Vec<f64>> {
    let num = scaled_numerator(model, q)?;
    let mut power = 1.0;
    Ok(num
        .coeffs
        .iter()
        .map(|&c| {
            let out = c / power;
            power *= num.scale;
            out
        })
        .collect())
}

fn normalized_residual(coeffs: &[f64], u: Complex64) -> f64 {
    let cmax = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let deg = (coeffs.len() - 1) as i32;
    poly_eval(coeffs, u).norm() / (cmax * u.norm().max(1.0).powi(deg))
}

/// Newton's method on `psi(z) - q`; `None` when it does not settle.
fn polish(model: &LevyModel, q: f64, start: Complex64) -> Option<Complex64> {
    let mut z = start;
    for _ in 0..NEWTON_ITER {
        let (f, df) = model.psi_q_complex(z, q).ok()?;
        if df.norm() == 0.0 || !f.is_finite() {
            return None;
        }
        let step = f / df;
        z -= step;
        if !z.is_finite() {
            return None;
        }
        if step.norm() <= 4.0 * f64::EPSILON * z.norm().max(1.0) {
            return Some(z);
        }
    }
    let (f, _) = model.psi_q_complex(z, q).ok()?;
    (f.norm() <= 1e-10 * (1.0 + q + model.lambda())).then_some(z)
}

/// Matrix whose characteristic polynomial is the numerator `P`, up to a
/// constant factor.
///
/// With `v = (z I - T)^{-1} t v_0` the equation `psi(z) = q` becomes linear in
/// `(v_0, z v_0, v)` (the middle block is dropped when `sigma = 0`).
pub fn linearization(model: &LevyModel, q: f64) -> DMatrix<f64> {
    let jumps = model.jumps();
    let n = jumps.n();
    let (d, lambda) = (model.drift(), model.lambda());
    let (t_mat, t_vec, alpha) = (jumps.sub_generator(), jumps.exit_rates(), jumps.alpha());
    let s2 = model.sigma() * model.sigma();
    let off = usize::from(s2 > 0.0) + 1;
    let mut m = DMatrix::zeros(n + off, n + off);
    if s2 > 0.0 {
        let h = 0.5 * s2;
        m[(0, 1)] = 1.0;
        m[(1, 0)] = (lambda + q) / h;
        m[(1, 1)] = -d / h;
        for j in 0..n {
            m[(1, off + j)] = -lambda * alpha[j] / h;
        }
    } else {
        m[(0, 0)] = (lambda + q) / d;
        for j in 0..n {
            m[(0, off + j)] = -lambda * alpha[j] / d;
        }
    }
    for i in 0..n {
        m[(off + i, 0)] = t_vec[i];
        for j in 0..n {
            m[(off + i, off + j)] = t_mat[(i, j)];
        }
    }
    m
}

/// `1 / psi'(z)` as the residue of `1 / (psi - q)` at an eigenvalue `z` of the
/// linearization `L`: one entry of `(zI - L)^{-1}` equals `c / (psi(z) - q)`,
/// with `c = d` (entry `(0,0)`) when `sigma = 0` and `c = sigma^2 / 2`
/// (entry `(0,1)`) otherwise.
fn residue_weight(model: &LevyModel, lin: &DMatrix<f64>, z: Complex64) -> Complex64 {
    let m = lin.nrows();
    let shift = z + Complex64::new(1e-13, 1e-13) * z.norm().max(1.0);
    let shifted = |transpose: bool| {
        let mut a: DMatrix<Complex64> = if transpose {
            lin.transpose().map(|v| Complex64::new(v, 0.0))
        } else {
            lin.map(|v| Complex64::new(v, 0.0))
        };
        for i in 0..m {
            a[(i, i)] -= shift;
        }
        a.lu()
    };
    let iterate = |transpose: bool| {
        let lu = shifted(transpose);
        let mut v = DVector::from_fn(m, |i, _| Complex64::new(1.0 + 0.1 * i as f64, 0.0));
        for _ in 0..3 {
            if let Some(next) = lu.solve(&v) {
                let norm = next.norm();
                if norm > 0.0 && norm.is_finite() {
                    v = next / Complex64::new(norm, 0.0);
                }
            }
        }
        v
    };
    let r = iterate(false);
    let l = iterate(true);
    let denom: Complex64 = l.iter().zip(r.iter()).map(|(a, b)| a * b).sum();
    if model.has_brownian() {
        let h = 0.5 * model.sigma() * model.sigma();
        r[0] * l[1] / denom / h
    } else {
        r[0] * l[0] / denom / model.drift()
    }
}

/// Computes `Z_q`, removing the zero at `Phi_q`.
pub fn find_zq(model: &LevyModel, q: f64) -> Result<RootsRepr> {
    let phi_root = model.phi(q)?;
    let phi = phi_root.phi;
    let num = scaled_numerator(model, q)?;
    let raw = eigenvalues(&linearization(model, q))?;

    let phi_tol = PHI_MATCH_TOL * phi.max(1.0);
    let (phi_idx, phi_dist) = raw
        .iter()
        .enumerate()
        .map(|(i, z)| (i, (z - phi).norm()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or(Error::RootCountMismatch {
            expected: 1,
            found: 0,
        })?;
    if phi_dist > phi_tol {
        // The raw root may be imprecise; accept it if polishing lands on Phi.
        let polished = polish(model, q, raw[phi_idx]);
        if !polished.is_some_and(|z| (z - phi).norm() <= phi_tol) {
            return Err(Error::PhiMismatch {
                phi,
                distance: phi_dist,
            });
        }
    }

    let mut accepted = Vec::new();
    let mut cancelled = Vec::new();
    let mut unpolished = 0;
    let mut max_shift = 0.0f64;
    for (i, &z) in raw.iter().enumerate() {
        if i == phi_idx {
            continue;
        }
        let size = z.norm().max(1.0);
        // Only a repeated eigenvalue of T can cancel structurally; a zero next
        // to a simple eigenvalue is a genuine zero with a tiny weight.
        let near_repeated_pole = num.eig_t.iter().enumerate().any(|(k, mu)| {
            let tol = CANCEL_TOL * mu.norm().max(1.0);
            (z - mu).norm() <= tol
                && num
                    .eig_t
                    .iter()
                    .enumerate()
                    .any(|(l, nu)| l != k && (nu - mu).norm() <= tol)
        });
        match polish(model, q, z) {
            Some(p) if (p - z).norm() <= MAX_POLISH_SHIFT * size => {
                max_shift = max_shift.max((p - z).norm() / size);
                accepted.push(p);
            }
            _ if near_repeated_pole => cancelled.push(z),
            _ => {
                unpolished += 1;
                accepted.push(z);
            }
        }
    }

    let expected = model.jumps().n() + usize::from(model.has_brownian());
    if accepted.len() + cancelled.len() != expected {
        return Err(Error::RootCountMismatch {
            expected,
            found: accepted.len() + cancelled.len(),
        });
    }

    let zq = conjugate_closed(accepted)?;
    let root_scale = zq.iter().map(|z| z.norm()).fold(phi.max(1.0), f64::max);
    for (i, a) in zq.iter().enumerate() {
        if (a - phi).norm() < SIMPLE_TOL * root_scale {
            return Err(Error::MultipleZeros(format!("zero {a} coincides with Phi_q = {phi}")));
        }
        for b in &zq[i + 1..] {
            if (a - b).norm() < SIMPLE_TOL * root_scale {
                return Err(Error::MultipleZeros(format!("zeros {a} and {b} coincide")));
            }
        }
    }

    // Zeros that Newton could not settle sit next to a pole of psi, where
    // evaluating psi' directly is hopeless; their weight is read off the
    // linearization instead.
    let lin = linearization(model, q);
    let mut pole_adjacent = 0;
    let weights: Vec<Complex64> = zq
        .iter()
        .map(|&z| {
            let direct = polish(model, q, z)
                .filter(|p| (p - z).norm() <= 1e-10 * z.norm().max(1.0))
                .and_then(|_| model.psi_q_complex(z, q).ok())
                .map(|(_, d)| 1.0 / d)
                .filter(|w| w.is_finite());
            direct.unwrap_or_else(|| {
                pole_adjacent += 1;
                residue_weight(model, &lin, z)
            })
        })
        .collect();
    let max_residual = zq
        .iter()
        .map(|z| normalized_residual(&num.coeffs, z / num.scale))
        .fold(0.0, f64::max);
    let positive_real_part = zq.iter().filter(|z| z.re > REAL_TOL * root_scale).count();
    Ok(RootsRepr {
        q,
        phi_root,
        count: zq.len(),
        zq,
        weights,
        cancelled,
        diagnostics: RootsDiagnostics {
            max_residual,
            residuals_ok: max_residual <= RESIDUAL_TOL,
            unpolished,
            max_polish_shift: max_shift,
            positive_real_part,
            pole_adjacent,
        },
    })
}

/// Snaps nearly-real roots onto the axis and rebuilds complex ones as exact
/// conjugate pairs.
fn conjugate_closed(roots: Vec<Complex64>) -> Result<Vec<Complex64>> {
    let mut real = Vec::new();
    let mut upper = Vec::new();
    let mut lower = 0;
    for z in roots {
        if z.im.abs() <= REAL_TOL * z.norm().max(1.0) {
            real.push(Complex64::new(z.re, 0.0));
        } else if z.im > 0.0 {
            upper.push(z);
        } else {
            lower += 1;
        }
    }
    if upper.len() != lower {
        return Err(Error::RootCountMismatch {
            expected: 2 * lower,
            found: 2 * upper.len(),
        });
    }
    real.sort_by(|a, b| b.re.total_cmp(&a.re));
    upper.sort_by(|a, b| b.re.total_cmp(&a.re));
    for z in upper {
        real.push(z);
        real.push(z.conj());
    }
    Ok(real)
}

impl RootsRepr {
    pub fn eval_w_roots(&self, x: f64) -> Result<f64> {
        if x < 0.0 || x.is_nan() {
            return Err(Error::NegativeArgument(x));
        }
        let PhiRoot {
            phi,
            psi_prime_at_phi,
            ..
        } = self.phi_root;
        let sum: Complex64 = self
            .zq
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| w * (z * x).exp())
            .sum();
        Ok((phi * x).exp() / psi_prime_at_phi + sum.re)
    }

    /// Imaginary part left over in the partial-fraction sum at `x`.
    pub fn imaginary_residue(&self, x: f64) -> f64 {
        self.zq
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| w * (z * x).exp())
            .sum::<Complex64>()
            .im
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumComparison {
    /// `(eigenvalue of G, zero in Z_q, distance)`, sorted by eigenvalue.
    pub pairs: Vec<(Complex64, Complex64, f64)>,
    pub max_distance: f64,
    pub unmatched_eigenvalues: Vec<Complex64>,
    pub unmatched_zeros: Vec<Complex64>,
}

impl SpectrumComparison {
    pub fn counts_match(&self) -> bool {
        self.unmatched_eigenvalues.is_empty() && self.unmatched_zeros.is_empty()
    }
}

/// Greedy nearest-neighbour matching between `eig(G)` and `Z_q`.
pub fn compare_spectrum(scale: &ScaleRepr, roots: &RootsRepr) -> Result<SpectrumComparison> {
    let eig = scale.eigenvalues()?;
    Ok(match_sets(&eig, &roots.zq))
}

pub fn match_sets(eig: &[Complex64], zeros: &[Complex64]) -> SpectrumComparison {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(eig.len() * zeros.len());
    for (i, e) in eig.iter().enumerate() {
        for (j, z) in zeros.iter().enumerate() {
            candidates.push(((e - z).norm(), i, j));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut used_e = vec![false; eig.len()];
    let mut used_z = vec![false; zeros.len()];
    let mut pairs = Vec::new();
    for (d, i, j) in candidates {
        if !used_e[i] && !used_z[j] {
            used_e[i] = true;
            used_z[j] = true;
            pairs.push((eig[i], zeros[j], d));
        }
    }
    pairs.sort_by(|a, b| b.0.re.total_cmp(&a.0.re).then(b.0.im.total_cmp(&a.0.im)));
    let max_distance = pairs.iter().map(|p| p.2).fold(0.0, f64::max);
    SpectrumComparison {
        pairs,
        max_distance,
        unmatched_eigenvalues: eig.iter().zip(&used_e).filter(|(_, u)| !**u).map(|(e, _)| *e).collect(),
        unmatched_zeros: zeros.iter().zip(&used_z).filter(|(_, u)| !**u).map(|(z, _)| *z).collect(),
    }
}

/// `W_q` on a set of points by the root method.
pub fn eval_w_roots_many(repr: &RootsRepr, xs: &[f64]) -> Result<DVector<f64>> {
    let vals = xs.iter().map(|&x| repr.eval_w_roots(x)).collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(vals))
}
