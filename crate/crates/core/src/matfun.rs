//! Small dense-matrix numerics: linear solves, the exponential of a
//! transition-rate matrix, eigenvalues and polynomial roots.
//!
//! Everything here works on `nalgebra` dynamic matrices in double precision.
//! Matrix exponentials of generators are computed by uniformization so that
//! all intermediate quantities stay non-negative.

use nalgebra::{linalg::balancing::balance_parlett_reinsch, DMatrix, DVector, RowDVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Truncation level for the Poisson tail in uniformization.
pub const POISSON_TAIL: f64 = 1e-14;

/// Largest uniformization time handled without squaring.
const MAX_UNIFORMIZATION_TIME: f64 = 16.0;

const SOLVE_RESIDUAL_TOL: f64 = 1e-10;

/// A transition-rate matrix: non-negative off-diagonal entries and row sums
/// that do not exceed zero.
///
/// Both conditions are checked up to `1e-12` times the largest diagonal rate
/// (at least one), so that rounding in assembled matrices is tolerated.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix(DMatrix<f64>);

impl GeneratorMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NotAGenerator(format!(
                "matrix is {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotAGenerator("non-finite entry".into()));
        }
        let tol = 1e-12 * rate_scale(&m);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if i != j && m[(i, j)] < -tol {
                    return Err(Error::NotAGenerator(format!(
                        "negative off-diagonal entry {} at ({i}, {j})",
                        m[(i, j)]
                    )));
                }
            }
            let row_sum: f64 = m.row(i).sum();
            if row_sum > tol {
                return Err(Error::NotAGenerator(format!("row {i} sums to {row_sum}")));
            }
        }
        Ok(Self(m))
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

fn rate_scale(m: &DMatrix<f64>) -> f64 {
    m.diagonal().iter().fold(1.0f64, |acc, v| acc.max(v.abs()))
}

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solves `m * x = rhs` by LU with partial pivoting.
///
/// Fails with [`Error::Singular`] when the factorization breaks down or the
/// residual `|m x - rhs|_inf` exceeds `1e-10 (|m|_inf |x|_inf + |rhs|_inf)`.
pub fn solve_linear(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let b = DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
    let x = solve_linear_matrix(m, &b)?;
    Ok(x.column(0).into_owned())
}

/// Solves `m * X = rhs` for a matrix right-hand side.
pub fn solve_linear_matrix(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() || m.nrows() != rhs.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "system {}x{} with right-hand side {}x{}",
            m.nrows(),
            m.ncols(),
            rhs.nrows(),
            rhs.ncols()
        )));
    }
    if m.iter().chain(rhs.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Singular);
    }
    let x = m.clone().lu().solve(rhs).ok_or(Error::Singular)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular);
    }
    let residual = inf_norm(&(m * &x - rhs));
    let bound = SOLVE_RESIDUAL_TOL * (inf_norm(m) * inf_norm(&x) + inf_norm(rhs));
    if residual > bound {
        return Err(Error::Singular);
    }
    Ok(x)
}

/// Solves the row system `x * m = row`.
pub fn solve_left(m: &DMatrix<f64>, row: &RowDVector<f64>) -> Result<RowDVector<f64>> {
    let x = solve_linear(&m.transpose(), &row.transpose())?;
    Ok(x.transpose())
}

/// Solves a complex system `m * x = rhs`. Used away from the real axis,
/// where no structure is available.
pub fn solve_complex(m: &DMatrix<Complex64>, rhs: &DVector<Complex64>) -> Result<DVector<Complex64>> {
    let x = m.clone().lu().solve(rhs).ok_or(Error::Singular)?;
    if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Singular);
    }
    Ok(x)
}

/// Poisson probabilities `e^{-t} t^k / k!` covering all but `tail` of the mass.
///
/// Weights are generated outward from the mode with unit weight at the mode
/// and renormalized afterwards, so nothing underflows for large `t`.
/// Returns the first retained index together with the weights.
pub fn poisson_weights(t: f64, tail: f64) -> (usize, Vec<f64>) {
    if t <= 0.0 {
        return (0, vec![1.0]);
    }
    let mode = t.floor() as usize;
    let half = 0.5 * tail;

    let mut right = vec![1.0];
    let mut total = 1.0;
    let mut w = 1.0;
    let mut k = mode;
    loop {
        w *= t / (k + 1) as f64;
        k += 1;
        right.push(w);
        total += w;
        // Beyond the mode successive ratios are below t / (k + 1) < 1, so the
        // remaining tail is bounded by a geometric series.
        let ratio = t / (k + 1) as f64;
        if ratio < 1.0 && w * ratio / (1.0 - ratio) < half * total {
            break;
        }
    }

    let mut left = Vec::new();
    let mut w = 1.0;
    let mut k = mode;
    while k > 0 {
        w *= k as f64 / t;
        k -= 1;
        left.push(w);
        total += w;
        let ratio = k as f64 / t;
        if w * ratio / (1.0 - ratio).max(f64::MIN_POSITIVE) < half * total && ratio < 1.0 {
            break;
        }
    }
    let first = k;
    left.reverse();
    left.extend(right);
    for v in &mut left {
        *v /= total;
    }
    (first, left)
}

/// `e^{g x}` for a transition-rate matrix by uniformization.
///
/// With `eta = max |g_ii|` and `P = I + g / eta`, the exponential is the
/// Poisson mixture `sum_k Pois(eta x; k) P^k`, truncated once the Poisson
/// tail falls below [`POISSON_TAIL`]. For `eta x > 16` the mixture is taken
/// at `x / 2^s` and squared `s` times; squaring keeps every entry
/// non-negative.
pub fn expm_generator(g: &GeneratorMatrix, x: f64) -> Result<DMatrix<f64>> {
    if x < 0.0 || x.is_nan() {
        return Err(Error::NegativeArgument(x));
    }
    Ok(expm_metzler(g.as_matrix(), x))
}

/// Uniformization for any matrix with non-negative off-diagonal entries.
///
/// Row sums may be slightly positive, as happens for transition-rate
/// matrices assembled from an iterate that has not fully converged.
pub(crate) fn expm_metzler(g: &DMatrix<f64>, x: f64) -> DMatrix<f64> {
    let m = g.nrows();
    let mut eta = g.diagonal().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if eta == 0.0 {
        eta = 1.0;
    }
    let t = eta * x;
    if t == 0.0 {
        return DMatrix::identity(m, m);
    }
    let squarings = if t > MAX_UNIFORMIZATION_TIME {
        (t / MAX_UNIFORMIZATION_TIME).log2().ceil() as i32
    } else {
        0
    };
    let t_step = t / 2f64.powi(squarings);

    let mut p = g / eta;
    for i in 0..m {
        p[(i, i)] += 1.0;
        for j in 0..m {
            if p[(i, j)] < 0.0 {
                p[(i, j)] = 0.0;
            }
        }
    }

    let (first, weights) = poisson_weights(t_step, POISSON_TAIL);
    let mut power = DMatrix::identity(m, m);
    let mut acc = DMatrix::zeros(m, m);
    for k in 0..first + weights.len() {
        if k >= first {
            acc += &power * weights[k - first];
        }
        if k + 1 < first + weights.len() {
            power = &power * &p;
        }
    }
    for _ in 0..squarings {
        acc = &acc * &acc;
    }
    acc
}

/// Eigenvalues (with multiplicity) of a real square matrix.
///
/// The matrix is balanced first, then reduced to real Schur form.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "eigenvalues of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NoConvergence);
    }
    let mut balanced = m.clone();
    balance_parlett_reinsch(&mut balanced);
    let max_iter = 200 * m.nrows().max(10);
    let schur = balanced
        .try_schur(f64::EPSILON, max_iter)
        .ok_or(Error::NoConvergence)?;
    let eig = schur.complex_eigenvalues();
    if eig.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NoConvergence);
    }
    Ok(eig.iter().copied().collect())
}

/// Horner evaluation of `sum_k coeffs[k] z^k`.
pub fn poly_eval(coeffs: &[f64], z: Complex64) -> Complex64 {
    coeffs
        .iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

/// Roots of `sum_k coeffs[k] theta^k` (ascending order of powers) as the
/// eigenvalues of the balanced companion matrix.
pub fn poly_roots(coeffs: &[f64]) -> Result<Vec<Complex64>> {
    let Some((&lead, lower)) = coeffs.split_last() else {
        return Err(Error::DegenerateLeadingCoefficient);
    };
    if lead == 0.0 || !lead.is_finite() {
        return Err(Error::DegenerateLeadingCoefficient);
    }
    let degree = lower.len();
    if degree == 0 {
        return Ok(Vec::new());
    }
    let mut companion = DMatrix::zeros(degree, degree);
    for (k, c) in lower.iter().enumerate() {
        companion[(0, degree - 1 - k)] = -c / lead;
    }
    for i in 1..degree {
        companion[(i, i - 1)] = 1.0;
    }
    eigenvalues(&companion)
}
