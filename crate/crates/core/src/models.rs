//! Parametric linear-Gaussian models.
//!
//! A [`ParametricModel`] maps a parameter vector to the system matrices
//! `F, G, H, Q, R, Π₀` and to their partial derivatives. The catalog holds
//! the instrument-error (INS) channel, the ill-conditioned test family, the
//! static two-column pre-array example and a randomly drawn affine family
//! used for cross-checks.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DiagonalMatrix, Matrix};
use crate::mwgs::PreArrayPair;

/// `x_k = F x_{k−1} + G w_k`, `z_k = H x_k + v_k`, `w ~ N(0,Q)`, `v ~ N(0,R)`,
/// `x_0 ~ N(0,Π₀)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpace {
    pub f: Matrix,
    pub g: Matrix,
    pub h: Matrix,
    pub q: Matrix,
    pub r: Matrix,
    pub pi0: Matrix,
}

/// `∂/∂θᵢ` of every matrix in a [`StateSpace`].
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpaceDerivative {
    pub f: Matrix,
    pub g: Matrix,
    pub h: Matrix,
    pub q: Matrix,
    pub r: Matrix,
    pub pi0: Matrix,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub q: usize,
}

impl StateSpace {
    pub fn dims(&self) -> Dims {
        Dims { n: self.f.nrows(), m: self.h.nrows(), q: self.g.ncols() }
    }

    pub fn validate(&self) -> Result<()> {
        let Dims { n, m, q } = self.dims();
        let ok = self.f.shape() == (n, n)
            && self.g.shape() == (n, q)
            && self.h.shape() == (m, n)
            && self.q.shape() == (q, q)
            && self.r.shape() == (m, m)
            && self.pi0.shape() == (n, n);
        if !ok {
            return Err(Error::shape("state-space matrices have inconsistent dimensions"));
        }
        let all = [&self.f, &self.g, &self.h, &self.q, &self.r, &self.pi0];
        if all.iter().any(|mat| mat.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("state-space matrices"));
        }
        Ok(())
    }
}

impl StateSpaceDerivative {
    pub fn zeros(d: Dims) -> Self {
        Self {
            f: Matrix::zeros(d.n, d.n),
            g: Matrix::zeros(d.n, d.q),
            h: Matrix::zeros(d.m, d.n),
            q: Matrix::zeros(d.q, d.q),
            r: Matrix::zeros(d.m, d.m),
            pi0: Matrix::zeros(d.n, d.n),
        }
    }

    fn matrices(&self) -> [&Matrix; 6] {
        [&self.f, &self.g, &self.h, &self.q, &self.r, &self.pi0]
    }
}

pub trait ParametricModel: Send + Sync {
    fn name(&self) -> String;

    fn n_params(&self) -> usize;

    fn dims(&self) -> Dims;

    fn eval(&self, theta: &[f64]) -> Result<StateSpace>;

    /// One [`StateSpaceDerivative`] per parameter.
    fn derivatives(&self, theta: &[f64]) -> Result<Vec<StateSpaceDerivative>>;

    /// Parameters that must stay strictly positive.
    fn positive_params(&self) -> Vec<bool> {
        vec![false; self.n_params()]
    }

    /// Serializable description from which the model can be rebuilt.
    fn spec(&self) -> ModelSpec;
}

fn check_len(theta: &[f64], p: usize) -> Result<()> {
    if theta.len() != p {
        return Err(Error::Input(format!("expected {p} parameters, got {}", theta.len())));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("parameter vector"));
    }
    Ok(())
}

/// Serializable model description, used in trajectory sidecars and configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Ins(InsConstants),
    IllConditioned { delta: f64 },
    RandomAffine(AffineSpec),
}

impl ModelSpec {
    pub fn build(&self) -> Result<Box<dyn ParametricModel>> {
        Ok(match self {
            ModelSpec::Ins(c) => Box::new(InsModel::new(*c)?),
            ModelSpec::IllConditioned { delta } => Box::new(IllConditionedModel::new(*delta)?),
            ModelSpec::RandomAffine(spec) => Box::new(AffineModel::random(*spec)?),
        })
    }
}

// ---------------------------------------------------------------------------
// Static two-column example

/// Pre-arrays `A(θ)`, `D_w(θ)` of the static example together with their
/// exact θ-derivatives.
#[derive(Clone, Debug)]
pub struct StaticExample {
    pub pre: PreArrayPair,
    pub a_prime: Matrix,
    pub d_w_prime: DiagonalMatrix,
}

/// `A = [θ⁵/20 θ⁴/8; θ⁴/8 θ³/3; θ³/6 θ²/2]`, `D_w = diag(θ, θ², θ³)`.
pub fn example1_static(theta: f64) -> Result<StaticExample> {
    if theta == 0.0 {
        return Err(Error::DegenerateWeight);
    }
    let t = theta;
    let a = Matrix::from_row_slice(
        3,
        2,
        &[t.powi(5) / 20.0, t.powi(4) / 8.0, t.powi(4) / 8.0, t.powi(3) / 3.0, t.powi(3) / 6.0, t * t / 2.0],
    );
    let a_prime =
        Matrix::from_row_slice(3, 2, &[t.powi(4) / 4.0, t.powi(3) / 2.0, t.powi(3) / 2.0, t * t, t * t / 2.0, t]);
    let d_w = DiagonalMatrix::from_slice(&[t, t * t, t.powi(3)]);
    let d_w_prime = DiagonalMatrix::from_slice(&[1.0, 2.0 * t, 3.0 * t * t]);
    Ok(StaticExample { pre: PreArrayPair::new(a, d_w)?, a_prime, d_w_prime })
}

// ---------------------------------------------------------------------------
// INS instrument-error channel

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InsConstants {
    /// Sampling interval, s.
    pub tau: f64,
    /// Gravity, m/s².
    pub g: f64,
    /// Earth radius, m.
    pub a: f64,
    /// Accelerometer noise intensity.
    pub h1: f64,
}

impl Default for InsConstants {
    fn default() -> Self {
        Self { tau: 0.1, g: 9.81, a: 6.378e6, h1: 1.0 }
    }
}

/// One channel of a semi-analytic INS error model; state
/// `(Δv_x, β, m_Ax, n_Gy)`, parameter `γ₁` (accelerometer error bandwidth).
#[derive(Clone, Debug)]
pub struct InsModel {
    c: InsConstants,
}

impl InsModel {
    pub fn new(c: InsConstants) -> Result<Self> {
        if [c.tau, c.g, c.a, c.h1].iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Input("INS constants must be positive".into()));
        }
        Ok(Self { c })
    }

    pub fn constants(&self) -> InsConstants {
        self.c
    }

    fn gamma(&self, theta: &[f64]) -> Result<f64> {
        check_len(theta, 1)?;
        if !(theta[0] > 0.0) {
            return Err(Error::ParameterOutOfDomain { index: 0, value: theta[0] });
        }
        Ok(theta[0])
    }
}

impl ParametricModel for InsModel {
    fn name(&self) -> String {
        "ins".into()
    }

    fn n_params(&self) -> usize {
        1
    }

    fn dims(&self) -> Dims {
        Dims { n: 4, m: 1, q: 1 }
    }

    fn eval(&self, theta: &[f64]) -> Result<StateSpace> {
        let gamma = self.gamma(theta)?;
        let InsConstants { tau, g, a, h1 } = self.c;
        let b1 = 1.0 - gamma * tau;
        let a1 = h1 * (2.0 * gamma * tau).sqrt();
        #[rustfmt::skip]
        let f = Matrix::from_row_slice(4, 4, &[
            1.0,     -tau * g, tau, 0.0,
            tau / a,  1.0,     0.0, tau,
            0.0,      0.0,     b1,  0.0,
            0.0,      0.0,     0.0, 1.0,
        ]);
        Ok(StateSpace {
            f,
            g: Matrix::from_column_slice(4, 1, &[0.0, 0.0, a1, 0.0]),
            h: Matrix::from_row_slice(1, 4, &[1.0, 0.0, 0.0, 0.0]),
            q: Matrix::identity(1, 1),
            r: Matrix::from_element(1, 1, 0.01),
            pi0: Matrix::identity(4, 4),
        })
    }

    fn derivatives(&self, theta: &[f64]) -> Result<Vec<StateSpaceDerivative>> {
        let gamma = self.gamma(theta)?;
        let InsConstants { tau, h1, .. } = self.c;
        let mut d = StateSpaceDerivative::zeros(self.dims());
        d.f[(2, 2)] = -tau;
        d.g[(2, 0)] = h1 * tau / (2.0 * gamma * tau).sqrt();
        Ok(vec![d])
    }

    fn positive_params(&self) -> Vec<bool> {
        vec![true]
    }

    fn spec(&self) -> ModelSpec {
        ModelSpec::Ins(self.c)
    }
}

// ---------------------------------------------------------------------------
// Ill-conditioned test family

/// `F = I₃`, `G = 0`, `H = [1 1 1; 1 1 1+δ]`, `R = δ²θ²·I₂`, `Π₀ = θ²·I₃`.
///
/// `G` is kept as an explicit 3×1 zero column with `Q = 1`, so the pre-array
/// layout is the same as for every other model.
#[derive(Clone, Debug)]
pub struct IllConditionedModel {
    delta: f64,
}

impl IllConditionedModel {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::Input(format!("delta must be positive, got {delta}")));
        }
        Ok(Self { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

impl ParametricModel for IllConditionedModel {
    fn name(&self) -> String {
        format!("ill_conditioned(delta={:e})", self.delta)
    }

    fn n_params(&self) -> usize {
        1
    }

    fn dims(&self) -> Dims {
        Dims { n: 3, m: 2, q: 1 }
    }

    fn eval(&self, theta: &[f64]) -> Result<StateSpace> {
        check_len(theta, 1)?;
        let (t, d) = (theta[0], self.delta);
        Ok(StateSpace {
            f: Matrix::identity(3, 3),
            g: Matrix::zeros(3, 1),
            h: Matrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0 + d]),
            q: Matrix::identity(1, 1),
            r: Matrix::identity(2, 2) * (d * d * t * t),
            pi0: Matrix::identity(3, 3) * (t * t),
        })
    }

    fn derivatives(&self, theta: &[f64]) -> Result<Vec<StateSpaceDerivative>> {
        check_len(theta, 1)?;
        let (t, d) = (theta[0], self.delta);
        let mut out = StateSpaceDerivative::zeros(self.dims());
        out.r = Matrix::identity(2, 2) * (2.0 * d * d * t);
        out.pi0 = Matrix::identity(3, 3) * (2.0 * t);
        Ok(vec![out])
    }

    fn positive_params(&self) -> Vec<bool> {
        vec![true]
    }

    fn spec(&self) -> ModelSpec {
        ModelSpec::IllConditioned { delta: self.delta }
    }
}

// ---------------------------------------------------------------------------
// Random affine family

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineSpec {
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub q: usize,
    pub p: usize,
    /// Magnitude of the θ-dependence; zero gives a θ-independent model.
    pub slope: f64,
}

/// Every matrix is `M₀ + Σᵢ θᵢ·Mᵢ`. Covariance bases are `LLᵀ + I`, their
/// slopes symmetric, so the model is well conditioned for small `|θ|`.
#[derive(Clone, Debug)]
pub struct AffineModel {
    spec: AffineSpec,
    base: StateSpace,
    slopes: Vec<StateSpaceDerivative>,
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.random_range(-1.0..1.0))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let l = random_matrix(rng, n, n, 0.6);
    &l * l.transpose() + Matrix::identity(n, n)
}

fn random_sym(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Matrix {
    let s = random_matrix(rng, n, n, scale);
    (&s + s.transpose()) * 0.5
}

impl AffineModel {
    pub fn random(spec: AffineSpec) -> Result<Self> {
        let AffineSpec { seed, n, m, q, p, slope } = spec;
        if n == 0 || m == 0 || q == 0 {
            return Err(Error::Input("affine model dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Keep ‖F₀‖ comfortably below one so the filter is well behaved.
        let f0 = random_matrix(&mut rng, n, n, 0.9 / n as f64);
        let base = StateSpace {
            f: f0,
            g: random_matrix(&mut rng, n, q, 1.0),
            h: random_matrix(&mut rng, m, n, 1.0),
            q: random_spd(&mut rng, q),
            r: random_spd(&mut rng, m),
            pi0: random_spd(&mut rng, n),
        };
        let slopes = (0..p)
            .map(|_| StateSpaceDerivative {
                f: random_matrix(&mut rng, n, n, slope / n as f64),
                g: random_matrix(&mut rng, n, q, slope),
                h: random_matrix(&mut rng, m, n, slope),
                q: random_sym(&mut rng, q, slope / q as f64),
                r: random_sym(&mut rng, m, slope / m as f64),
                pi0: random_sym(&mut rng, n, slope / n as f64),
            })
            .collect();
        Ok(Self { spec, base, slopes })
    }
}

impl ParametricModel for AffineModel {
    fn name(&self) -> String {
        format!("random_affine(seed={})", self.spec.seed)
    }

    fn n_params(&self) -> usize {
        self.spec.p
    }

    fn dims(&self) -> Dims {
        self.base.dims()
    }

    fn eval(&self, theta: &[f64]) -> Result<StateSpace> {
        check_len(theta, self.spec.p)?;
        let mut ss = self.base.clone();
        for (t, s) in theta.iter().zip(&self.slopes) {
            ss.f += &s.f * *t;
            ss.g += &s.g * *t;
            ss.h += &s.h * *t;
            ss.q += &s.q * *t;
            ss.r += &s.r * *t;
            ss.pi0 += &s.pi0 * *t;
        }
        Ok(ss)
    }

    fn derivatives(&self, theta: &[f64]) -> Result<Vec<StateSpaceDerivative>> {
        check_len(theta, self.spec.p)?;
        Ok(self.slopes.clone())
    }

    fn spec(&self) -> ModelSpec {
        ModelSpec::RandomAffine(self.spec)
    }
}

// ---------------------------------------------------------------------------

/// Largest relative mismatch between the analytic derivatives of `model` and
/// central differences of its evaluator at `theta`.
pub fn derivative_mismatch(model: &dyn ParametricModel, theta: &[f64]) -> Result<f64> {
    let analytic = model.derivatives(theta)?;
    let mut worst: f64 = 0.0;
    for (i, d) in analytic.iter().enumerate() {
        let h = fd_step(theta[i]);
        let mut tp = theta.to_vec();
        let mut tm = theta.to_vec();
        tp[i] += h;
        tm[i] -= h;
        let (sp, sm) = (model.eval(&tp)?, model.eval(&tm)?);
        let plus = [&sp.f, &sp.g, &sp.h, &sp.q, &sp.r, &sp.pi0];
        let minus = [&sm.f, &sm.g, &sm.h, &sm.q, &sm.r, &sm.pi0];
        for ((p, m), a) in plus.iter().zip(minus.iter()).zip(d.matrices()) {
            let fd = (*p - *m) / (2.0 * h);
            let scale = 1.0 + a.norm().max(fd.norm());
            worst = worst.max((a - &fd).norm() / scale);
        }
    }
    Ok(worst)
}

/// Central-difference step used by every finite-difference check: `1e-6·|θ|`,
/// or `1e-6` at zero.
pub fn fd_step(theta: f64) -> f64 {
    if theta == 0.0 {
        1e-6
    } else {
        1e-6 * theta.abs()
    }
}

/// Tolerance of the evaluator/derivative consistency gate.
pub const DERIVATIVE_GATE_TOL: f64 = 1e-6;

/// Fails unless the model's derivatives agree with finite differences.
pub fn check_derivative_gate(model: &dyn ParametricModel, theta: &[f64]) -> Result<()> {
    let worst = derivative_mismatch(model, theta)?;
    if worst > DERIVATIVE_GATE_TOL {
        return Err(Error::Input(format!(
            "model {} fails the derivative consistency gate ({worst:.3e})",
            model.name()
        )));
    }
    Ok(())
}
