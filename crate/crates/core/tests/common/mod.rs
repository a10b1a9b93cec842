#![allow(dead_code)]

use levy_scale::ph::sample_coxian;
use levy_scale::scale::ScaleRepr;
use levy_scale::{LevyModel, PhaseTypeDist};
use nalgebra::{DMatrix, DVector};

pub fn coxian_model(n: usize, seed: u64, sigma: f64, drift: f64, lambda: f64) -> LevyModel {
    let ph = sample_coxian(n, seed, 0.9).expect("sampler output is valid");
    LevyModel::new(sigma, drift, lambda, ph).expect("valid model")
}

/// `alpha (theta I - T)^{-1} t`, also for small negative theta.
pub fn ph_transform_oracle(ph: &PhaseTypeDist, theta: f64) -> f64 {
    let n = ph.n();
    let m = DMatrix::identity(n, n) * theta - ph.sub_generator();
    let x = m.lu().solve(ph.exit_rates()).expect("theta beyond the spectral abscissa");
    (ph.alpha() * x)[(0, 0)]
}

/// Laplace exponent assembled directly from the model data.
pub fn psi_oracle(model: &LevyModel, theta: f64) -> f64 {
    let ph = model.jumps();
    let t = ph.sub_generator();
    let n = t.nrows();
    let m = DMatrix::identity(n, n) * theta - t;
    let exit = ph.exit_rates();
    let x = m.lu().solve(exit).expect("theta I - T is invertible for theta >= 0");
    let s = model.sigma();
    0.5 * s * s * theta * theta + model.drift() * theta + model.lambda() * ((ph.alpha() * x)[(0, 0)] - 1.0)
}

/// Laplace transform of the matrix representation of W_q at theta > Phi_q.
pub fn w_transform_oracle(repr: &ScaleRepr, theta: f64) -> f64 {
    let root = repr.phi_root();
    let g = repr.generator();
    let k = g.nrows();
    let m = DMatrix::identity(k, k) * theta - g;
    let x: DVector<f64> = m.lu().solve(repr.nu()).expect("theta beyond the spectral abscissa");
    let quad = (repr.front() * x)[(0, 0)];
    (1.0 / (theta - root.phi) - quad) / root.psi_prime_at_phi
}

/// Largest relative error of the transform identity over `theta = Phi + 0.5, ..., Phi + 10`.
pub fn transform_residual(repr: &ScaleRepr) -> f64 {
    let model = repr.model();
    let q = repr.q();
    let phi = repr.phi_root().phi;
    (1..=20)
        .map(|k| {
            let theta = phi + 0.5 * k as f64;
            let target = 1.0 / (psi_oracle(model, theta) - q);
            ((w_transform_oracle(repr, theta) - target) / target).abs()
        })
        .fold(0.0, f64::max)
}

/// Composite Simpson rule on `[a, b]` with `m` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for i in 1..m {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}
