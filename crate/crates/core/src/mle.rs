//! Maximum-likelihood estimation on top of either filtering engine.

use serde::{Deserialize, Serialize};

use crate::baseline::conv_loglik_and_gradient;
use crate::error::{Error, Result};
use crate::filter::ModelAtTheta;
use crate::linalg::Vector;
use crate::models::ParametricModel;
use crate::sensitivity::{self, ModelDerivativesAtTheta};
use crate::LikelihoodReport;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// UD array filter with post-array derivative propagation.
    Ud,
    /// Conventional KF with filter and Riccati sensitivity equations.
    Conv,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Ud => "ud",
            Engine::Conv => "conv",
        }
    }
}

/// Evaluates log-likelihood and gradient at `theta` with the given engine.
pub fn likelihood(
    model: &dyn ParametricModel,
    measurements: &[Vector],
    engine: Engine,
    theta: &[f64],
) -> Result<LikelihoodReport> {
    let ss = model.eval(theta)?;
    ss.validate()?;
    let derivs = model.derivatives(theta)?;
    match engine {
        Engine::Ud => {
            let m = ModelAtTheta::from_state_space(&ss)?;
            let d = ModelDerivativesAtTheta::new(&ss, &m, &derivs)?;
            Ok(sensitivity::run(&m, &d, measurements, false)?.report)
        }
        Engine::Conv => conv_loglik_and_gradient(&ss, &derivs, measurements),
    }
}

/// Something that returns a value and gradient to be minimized.
pub trait DifferentiableObjective {
    fn dim(&self) -> usize;

    fn evaluate(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Coordinates restricted to `θᵢ > 0`; optimized on a log scale.
    fn positive_params(&self) -> Vec<bool> {
        vec![false; self.dim()]
    }
}

/// Negative log-likelihood of a measurement record under a parametric model.
pub struct Objective<'a> {
    pub model: &'a dyn ParametricModel,
    pub measurements: &'a [Vector],
    pub engine: Engine,
}

impl<'a> Objective<'a> {
    pub fn new(model: &'a dyn ParametricModel, measurements: &'a [Vector], engine: Engine) -> Self {
        Self { model, measurements, engine }
    }
}

impl DifferentiableObjective for Objective<'_> {
    fn dim(&self) -> usize {
        self.model.n_params()
    }

    /// `(−L, −∇L)` from a single filter pass.
    fn evaluate(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let r = likelihood(self.model, self.measurements, self.engine, theta)?;
        if !r.loglik.is_finite() || r.gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("log-likelihood"));
        }
        Ok((-r.loglik, r.gradient.iter().map(|g| -g).collect()))
    }

    fn positive_params(&self) -> Vec<bool> {
        self.model.positive_params()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimizeOptions {
    pub max_iterations: usize,
    /// Converged when `‖∇‖ ≤ grad_tol·(1 + |f|)`, gradient taken in the
    /// optimizer's coordinates.
    pub grad_tol: f64,
    pub max_backtracks: usize,
    pub armijo: f64,
    /// Relative size of the objective's rounding noise; see [`minimize`].
    pub f_noise: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self { max_iterations: 200, grad_tol: 1e-8, max_backtracks: 60, armijo: 1e-4, f_noise: 1e-10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub theta_hat: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub final_value: f64,
    pub final_gradient_norm: f64,
    pub failure_reason: Option<String>,
}

struct Reparam {
    positive: Vec<bool>,
}

impl Reparam {
    fn to_internal(&self, theta: &[f64]) -> Result<Vec<f64>> {
        theta
            .iter()
            .zip(&self.positive)
            .enumerate()
            .map(|(i, (&t, &pos))| {
                if pos {
                    if !(t > 0.0) {
                        return Err(Error::ParameterOutOfDomain { index: i, value: t });
                    }
                    Ok(t.ln())
                } else {
                    Ok(t)
                }
            })
            .collect()
    }

    fn to_natural(&self, phi: &[f64]) -> Vec<f64> {
        phi.iter().zip(&self.positive).map(|(&p, &pos)| if pos { p.exp() } else { p }).collect()
    }

    /// Chain rule `∂f/∂φ = θ·∂f/∂θ` on log-scaled coordinates.
    fn gradient(&self, theta: &[f64], g: &[f64]) -> Vec<f64> {
        g.iter().zip(theta).zip(&self.positive).map(|((&gi, &t), &pos)| if pos { gi * t } else { gi }).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// BFGS on the inverse Hessian with backtracking line search.
///
/// A trial step is accepted when it satisfies the Armijo condition, or when
/// it reduces the gradient norm while changing the objective by no more than
/// `f_noise·(1 + |f|)`. The second rule keeps progress possible once the
/// predicted decrease is below the rounding noise of a long likelihood sum,
/// where the gradient is still accurate. Failed evaluations count as `+∞`.
pub fn minimize(obj: &dyn DifferentiableObjective, theta0: &[f64], opts: &MinimizeOptions) -> EstimationResult {
    let p = obj.dim();
    let reparam = Reparam { positive: obj.positive_params() };
    let mut evaluations = 0usize;
    let fail = |theta: Vec<f64>, reason: String, evals: usize| EstimationResult {
        theta_hat: theta,
        iterations: 0,
        evaluations: evals,
        converged: false,
        final_value: f64::NAN,
        final_gradient_norm: f64::NAN,
        failure_reason: Some(reason),
    };
    if theta0.len() != p {
        return fail(theta0.to_vec(), format!("expected {p} initial values"), 0);
    }
    let mut x = match reparam.to_internal(theta0) {
        Ok(x) => x,
        Err(e) => return fail(theta0.to_vec(), e.to_string(), 0),
    };

    let mut eval = |phi: &[f64]| -> Option<(f64, Vec<f64>)> {
        evaluations += 1;
        let theta = reparam.to_natural(phi);
        let (f, g) = obj.evaluate(&theta).ok()?;
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some((f, reparam.gradient(&theta, &g)))
    };

    let (mut f, mut g) = match eval(&x) {
        Some(v) => v,
        None => {
            let reason = match obj.evaluate(theta0) {
                Err(e) => format!("evaluation failed at the initial point: {e}"),
                Ok(_) => "evaluation failed at the initial point".to_string(),
            };
            return fail(theta0.to_vec(), reason, 2);
        }
    };

    let mut h_inv: Vec<f64> = identity(p);
    let mut first_update = true;
    let mut iterations = 0;
    let mut reason = None;
    let mut converged = false;

    while iterations < opts.max_iterations {
        if norm(&g) <= opts.grad_tol * (1.0 + f.abs()) {
            converged = true;
            break;
        }
        let mut d = mat_vec(&h_inv, &g, p).iter().map(|v| -v).collect::<Vec<_>>();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            h_inv = identity(p);
            first_update = true;
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let mut alpha = if first_update { (1.0 / norm(&g)).min(1.0) } else { 1.0 };

        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            if let Some((ft, gt)) = eval(&trial) {
                let armijo = ft <= f + opts.armijo * alpha * slope;
                let flat = ft <= f + opts.f_noise * (1.0 + f.abs()) && norm(&gt) < norm(&g);
                if armijo || flat {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        iterations += 1;
        let Some((x_new, f_new, g_new)) = accepted else {
            reason = Some("line search step collapse".to_string());
            break;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if first_update {
                let scale = sy / dot(&y, &y);
                h_inv = identity(p).iter().map(|v| v * scale).collect();
                first_update = false;
            }
            bfgs_update(&mut h_inv, &s, &y, sy, p);
        }
        let step_norm = norm(&s);
        x = x_new;
        f = f_new;
        g = g_new;
        if step_norm <= 1e-15 * (1.0 + norm(&x)) {
            reason = Some("step size collapsed".to_string());
            converged = norm(&g) <= opts.grad_tol * (1.0 + f.abs());
            break;
        }
    }
    if !converged && reason.is_none() {
        if norm(&g) <= opts.grad_tol * (1.0 + f.abs()) {
            converged = true;
        } else {
            reason = Some("iteration limit reached".to_string());
        }
    }
    EstimationResult {
        theta_hat: reparam.to_natural(&x),
        iterations,
        evaluations,
        converged,
        final_value: f,
        final_gradient_norm: norm(&g),
        failure_reason: if converged { None } else { reason },
    }
}

fn identity(p: usize) -> Vec<f64> {
    let mut m = vec![0.0; p * p];
    for i in 0..p {
        m[i * p + i] = 1.0;
    }
    m
}

fn mat_vec(m: &[f64], v: &[f64], p: usize) -> Vec<f64> {
    (0..p).map(|i| (0..p).map(|j| m[i * p + j] * v[j]).sum()).collect()
}

/// `H ← (I − ρsyᵀ)H(I − ρysᵀ) + ρssᵀ`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64, p: usize) {
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y, p);
    let yhy = dot(y, &hy);
    for i in 0..p {
        for j in 0..p {
            h[i * p + j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub theta: f64,
    pub neg_loglik: Option<f64>,
    pub neg_gradient: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanTable {
    pub rows: Vec<ScanRow>,
    /// Index of the smallest `−L` among successful rows.
    pub argmin: Option<usize>,
    /// `(i, i+1)` where `−∇L` first goes from negative to non-negative.
    pub bracket: Option<(usize, usize)>,
}

impl ScanTable {
    pub fn from_rows(rows: Vec<ScanRow>) -> Self {
        let argmin = rows
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.neg_loglik.map(|v| (i, v)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i);
        let bracket = rows.windows(2).enumerate().find_map(|(i, w)| match (w[0].neg_gradient, w[1].neg_gradient) {
            (Some(a), Some(b)) if a < 0.0 && b >= 0.0 => Some((i, i + 1)),
            _ => None,
        });
        Self { rows, argmin, bracket }
    }

    /// Linear interpolation of the zero of `−∇L` inside the bracket.
    pub fn zero_crossing(&self) -> Option<f64> {
        let (i, j) = self.bracket?;
        let (a, b) = (&self.rows[i], &self.rows[j]);
        let (ga, gb) = (a.neg_gradient?, b.neg_gradient?);
        Some(a.theta + (b.theta - a.theta) * (-ga) / (gb - ga))
    }

    /// Number of sign changes of `−∇L` across consecutive successful rows.
    pub fn sign_changes(&self) -> usize {
        let signs: Vec<bool> = self.rows.iter().filter_map(|r| r.neg_gradient).map(|g| g >= 0.0).collect();
        signs.windows(2).filter(|w| w[0] != w[1]).count()
    }
}

/// One scan row; evaluation failures are recorded, not propagated.
pub fn scan_row(obj: &dyn DifferentiableObjective, theta: f64) -> ScanRow {
    match obj.evaluate(&[theta]) {
        Ok((f, g)) => ScanRow { theta, neg_loglik: Some(f), neg_gradient: Some(g[0]), error: None },
        Err(e) => ScanRow { theta, neg_loglik: None, neg_gradient: None, error: Some(e.to_string()) },
    }
}

/// Tabulates `(θ, −L, −∇L)` over a grid of scalar parameter values.
pub fn scan(obj: &dyn DifferentiableObjective, grid: &[f64]) -> Result<ScanTable> {
    if obj.dim() != 1 {
        return Err(Error::Input("scan needs a one-parameter objective".into()));
    }
    if grid.is_empty() {
        return Err(Error::Input("scan grid is empty".into()));
    }
    Ok(ScanTable::from_rows(grid.iter().map(|&t| scan_row(obj, t)).collect()))
}

/// `[start, start + step, …]` with `count` points.
pub fn uniform_grid(start: f64, step: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| start + step * i as f64).collect()
}
