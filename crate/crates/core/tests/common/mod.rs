#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use udkf::linalg::{DiagonalMatrix, Matrix, Vector};
use udkf::models::{AffineModel, AffineSpec, ParametricModel, StateSpace};
use udkf::trajectory::simulate;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let l = uniform(rng, n, n);
    &l * l.transpose() + Matrix::identity(n, n) * 0.5
}

pub fn sym(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let s = uniform(rng, n, n);
    (&s + s.transpose()) * 0.5
}

pub fn positive_diag(rng: &mut ChaCha8Rng, n: usize) -> DiagonalMatrix {
    DiagonalMatrix::new(Vector::from_fn(n, |_, _| rng.random_range(0.2..5.0)))
}

/// `‖a − b‖ / ‖b‖`, or the absolute difference when `b` vanishes.
pub fn rel(a: &Matrix, b: &Matrix) -> f64 {
    let d = (a - b).norm();
    let s = b.norm();
    if s == 0.0 {
        d
    } else {
        d / s
    }
}

/// `|a − b| / (1 + |b|)`.
pub fn scaled(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

pub fn central<T, F>(f: F, t: f64, h: f64) -> T
where
    F: Fn(f64) -> T,
    T: std::ops::Sub<Output = T> + std::ops::Div<f64, Output = T>,
{
    (f(t + h) - f(t - h)) / (2.0 * h)
}

pub fn affine(seed: u64, n: usize, m: usize, q: usize, p: usize) -> AffineModel {
    AffineModel::random(AffineSpec { seed, n, m, q, p, slope: 0.3 }).unwrap()
}

/// A random well-conditioned model with a short simulated record.
pub struct Case {
    pub model: AffineModel,
    pub theta: Vec<f64>,
    pub ss: StateSpace,
    pub measurements: Vec<Vector>,
}

pub fn random_case(seed: u64) -> Case {
    let mut r = rng(seed ^ 0x5eed);
    let n = r.random_range(1..=4);
    let m = r.random_range(1..=3);
    let q = r.random_range(1..=3);
    let p = r.random_range(1..=3);
    let steps = r.random_range(5..=50);
    let model = affine(seed, n, m, q, p);
    let theta: Vec<f64> = (0..p).map(|_| r.random_range(0.2..0.8)).collect();
    let ss = model.eval(&theta).unwrap();
    let measurements = simulate(&model, &theta, steps, seed).unwrap().measurements;
    Case { model, theta, ss, measurements }
}

/// Fourth-order central difference, for functions whose rounding noise
/// swamps a plain central difference at the parameter's natural scale.
pub fn five_point<T, F>(f: F, t: f64, h: f64) -> T
where
    F: Fn(f64) -> T,
    T: std::ops::Sub<Output = T>
        + std::ops::Add<Output = T>
        + std::ops::Mul<f64, Output = T>
        + std::ops::Div<f64, Output = T>,
{
    (f(t - 2.0 * h) - f(t + 2.0 * h) + (f(t + h) - f(t - h)) * 8.0) / (12.0 * h)
}
