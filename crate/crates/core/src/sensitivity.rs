//! State sensitivities and log-likelihood gradient carried alongside the UD
//! filter.
//!
//! Every step runs MWGS once. For each parameter the pre-array derivatives
//! are formed by the product rule, pushed through [`mwgs::derivative`], and
//! the resulting `(U', D_β')` are split along the same block layout as the
//! post-arrays themselves.

use crate::error::{Error, Result};
use crate::filter::{
    assemble_pre_arrays, check_innovation, loglik_term, step_with_pre_arrays, FilterState, ModelAtTheta, StepOutput,
};
use crate::linalg::{ud_covariance_derivative, DiagonalMatrix, Matrix, UdDerivative, Vector};
use crate::models::{StateSpace, StateSpaceDerivative};
use crate::mwgs::{self, PostArrayTriple, PreArrayPair};
use crate::LikelihoodReport;

/// Derivatives of the factored model with respect to one parameter.
#[derive(Clone, Debug)]
pub struct ParamDerivative {
    pub f: Matrix,
    pub g: Matrix,
    pub h: Matrix,
    pub q_ud: UdDerivative,
    pub r_ud: UdDerivative,
    pub pi0_ud: UdDerivative,
}

#[derive(Clone, Debug)]
pub struct ModelDerivativesAtTheta {
    pub params: Vec<ParamDerivative>,
}

impl ModelDerivativesAtTheta {
    /// Differentiates the UD factors of `Q`, `R`, `Π₀` held by `model`.
    pub fn new(ss: &StateSpace, model: &ModelAtTheta, derivs: &[StateSpaceDerivative]) -> Result<Self> {
        let params = derivs
            .iter()
            .map(|d| {
                if d.f.shape() != ss.f.shape() || d.g.shape() != ss.g.shape() || d.h.shape() != ss.h.shape() {
                    return Err(Error::shape("model derivative dimensions do not match the model"));
                }
                Ok(ParamDerivative {
                    f: d.f.clone(),
                    g: d.g.clone(),
                    h: d.h.clone(),
                    q_ud: ud_covariance_derivative(&ss.q, &d.q, &model.q_ud)?,
                    r_ud: ud_covariance_derivative(&ss.r, &d.r, &model.r_ud)?,
                    pi0_ud: ud_covariance_derivative(&ss.pi0, &d.pi0, &model.pi0_ud)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { params })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }
}

/// `(∂x̂, ∂U_P, ∂D_P)` for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSensitivity {
    pub x_hat: Vector,
    pub p_ud: UdDerivative,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityState {
    pub params: Vec<ParamSensitivity>,
}

impl SensitivityState {
    /// `∂x̂_{0|−1} = 0` and the factor derivatives of `Π₀`.
    pub fn initial(model: &ModelAtTheta, deriv: &ModelDerivativesAtTheta) -> Self {
        Self {
            params: deriv
                .params
                .iter()
                .map(|d| ParamSensitivity { x_hat: Vector::zeros(model.n()), p_ud: d.pi0_ud.clone() })
                .collect(),
        }
    }
}

/// Running sum of the gradient terms.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientAccumulator {
    sums: Vec<f64>,
}

impl GradientAccumulator {
    pub fn new(p: usize) -> Self {
        Self { sums: vec![0.0; p] }
    }

    pub fn add(&mut self, i: usize, term: f64) {
        self.sums[i] += term;
    }

    pub fn values(&self) -> &[f64] {
        &self.sums
    }

    pub fn into_values(self) -> Vec<f64> {
        self.sums
    }
}

/// `(A', D_w')` for one parameter; the block-wise product rule on the
/// pre-array layout.
pub fn assemble_pre_array_derivatives(
    model: &ModelAtTheta,
    deriv: &ParamDerivative,
    state: &FilterState,
    sens: &ParamSensitivity,
) -> Result<(Matrix, DiagonalMatrix)> {
    let (n, m, q) = (model.n(), model.m(), model.q());
    if deriv.f.shape() != (n, n) || deriv.g.shape() != (n, q) || deriv.h.shape() != (m, n) || sens.p_ud.d.dim() != n {
        return Err(Error::shape("pre-array derivative: inconsistent dimensions"));
    }
    let u_p = state.p_ud.u.as_matrix();
    let gq = &deriv.g * model.q_ud.u.as_matrix() + &model.g * &deriv.q_ud.u;
    let fp = &deriv.f * u_p + &model.f * &sens.p_ud.u;
    let hp = &deriv.h * u_p + &model.h * &sens.p_ud.u;
    let mut a = Matrix::zeros(q + n + m, n + m);
    a.view_mut((0, 0), (q, n)).copy_from(&gq.transpose());
    a.view_mut((q, 0), (n, n)).copy_from(&fp.transpose());
    a.view_mut((q, n), (n, m)).copy_from(&hp.transpose());
    a.view_mut((q + n, n), (m, m)).copy_from(&deriv.r_ud.u.transpose());
    let d_w = DiagonalMatrix::concat(&[&deriv.q_ud.d, &sens.p_ud.d, &deriv.r_ud.d]);
    Ok((a, d_w))
}

/// Derivatives of the post-array blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDerivatives {
    pub u_p_next: Matrix,
    pub d_p_next: DiagonalMatrix,
    pub gain_block: Matrix,
    pub u_re: Matrix,
    pub d_re: DiagonalMatrix,
}

pub fn propagate_step_sensitivities(
    pre: &PreArrayPair,
    a_prime: &Matrix,
    d_w_prime: &DiagonalMatrix,
    post: &PostArrayTriple,
    n: usize,
    m: usize,
) -> Result<BlockDerivatives> {
    if post.u.dim() != n + m {
        return Err(Error::shape("post-array does not match n + m"));
    }
    let d = mwgs::derivative(pre, a_prime, d_w_prime, post)?;
    Ok(BlockDerivatives {
        u_p_next: d.u_prime.view((0, 0), (n, n)).into_owned(),
        d_p_next: d.d_beta_prime.block(0, n),
        gain_block: d.u_prime.view((0, n), (n, m)).into_owned(),
        u_re: d.u_prime.view((n, n), (m, m)).into_owned(),
        d_re: d.d_beta_prime.block(n, m),
    })
}

/// `e' = −H'·x̂ − H·x̂'` and `ē' = U_Re⁻¹·(e' − U_Re'·ē)`.
pub fn innovation_sensitivity(
    out: &StepOutput,
    u_re_prime: &Matrix,
    h: &Matrix,
    h_prime: &Matrix,
    x_hat: &Vector,
    x_hat_prime: &Vector,
) -> Result<(Vector, Vector)> {
    let m = out.e.len();
    if u_re_prime.shape() != (m, m) || h.shape() != h_prime.shape() || h.nrows() != m {
        return Err(Error::shape("innovation sensitivity: inconsistent dimensions"));
    }
    let e_prime = -(h_prime * x_hat) - h * x_hat_prime;
    let e_bar_prime = out.blocks.u_re.solve(&(&e_prime - u_re_prime * &out.e_bar))?;
    Ok((e_prime, e_bar_prime))
}

/// `∂x̂₊ = F'·x̂ + F·x̂' + (K_p·U_Re)'·ē + (K_p·U_Re)·ē'`.
pub fn state_sensitivity_update(
    model: &ModelAtTheta,
    deriv: &ParamDerivative,
    x_hat: &Vector,
    x_hat_prime: &Vector,
    out: &StepOutput,
    gain_block_prime: &Matrix,
    e_bar_prime: &Vector,
) -> Vector {
    &deriv.f * x_hat + &model.f * x_hat_prime + gain_block_prime * &out.e_bar + &out.blocks.gain_block * e_bar_prime
}

/// One step's contribution to `∂L/∂θᵢ`:
/// `−½·[tr(D_Re'·D_Re⁻¹) + 2·ē'ᵀ·D_Re⁻¹·ē − ēᵀ·D_Re⁻²·D_Re'·ē]`.
pub fn gradient_term(out: &StepOutput, d_re_prime: &DiagonalMatrix, e_bar_prime: &Vector) -> Result<f64> {
    let d_re = &out.blocks.d_re;
    check_innovation(d_re)?;
    let mut acc = 0.0;
    for j in 0..d_re.dim() {
        let (d, dp, e, ep) = (d_re.get(j), d_re_prime.get(j), out.e_bar[j], e_bar_prime[j]);
        acc += dp / d + 2.0 * ep * e / d - e * e * dp / (d * d);
    }
    Ok(-0.5 * acc)
}

/// Everything produced by one step of the extended filter.
#[derive(Clone, Debug)]
pub struct ExtendedStep {
    pub state: FilterState,
    pub sens: SensitivityState,
    pub out: StepOutput,
    pub loglik_term: f64,
    pub gradient_terms: Vec<f64>,
}

pub fn extended_step(
    model: &ModelAtTheta,
    deriv: &ModelDerivativesAtTheta,
    state: &FilterState,
    sens: &SensitivityState,
    z: &Vector,
) -> Result<ExtendedStep> {
    let (n, m) = (model.n(), model.m());
    let pre = assemble_pre_arrays(model, state)?;
    let (next, out) = step_with_pre_arrays(model, state, &pre, z)?;
    let ll = loglik_term(&out)?;
    let mut params = Vec::with_capacity(deriv.n_params());
    let mut grads = Vec::with_capacity(deriv.n_params());
    for (d, s) in deriv.params.iter().zip(&sens.params) {
        let (a_prime, d_w_prime) = assemble_pre_array_derivatives(model, d, state, s)?;
        let blocks = propagate_step_sensitivities(&pre, &a_prime, &d_w_prime, &out.post, n, m)?;
        let (_, e_bar_prime) = innovation_sensitivity(&out, &blocks.u_re, &model.h, &d.h, &state.x_hat, &s.x_hat)?;
        let x_next = state_sensitivity_update(model, d, &state.x_hat, &s.x_hat, &out, &blocks.gain_block, &e_bar_prime);
        grads.push(gradient_term(&out, &blocks.d_re, &e_bar_prime)?);
        params.push(ParamSensitivity { x_hat: x_next, p_ud: UdDerivative { u: blocks.u_p_next, d: blocks.d_p_next } });
    }
    Ok(ExtendedStep { state: next, sens: SensitivityState { params }, out, loglik_term: ll, gradient_terms: grads })
}

/// Per-step record of an extended run: the prediction `x̂_{k+1|k}` made after
/// processing `z_k`, its sensitivities and the step's log-likelihood term.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub x_hat: Vector,
    pub x_hat_prime: Vec<Vector>,
    pub loglik_term: f64,
}

#[derive(Clone, Debug)]
pub struct ExtendedRun {
    pub report: LikelihoodReport,
    pub final_state: FilterState,
    pub final_sens: SensitivityState,
    pub records: Vec<StepRecord>,
}

/// Runs the extended filter over a measurement record.
pub fn run(
    model: &ModelAtTheta,
    deriv: &ModelDerivativesAtTheta,
    measurements: &[Vector],
    keep_records: bool,
) -> Result<ExtendedRun> {
    let mut state = FilterState::initial(model);
    let mut sens = SensitivityState::initial(model, deriv);
    let mut loglik = 0.0;
    let mut grad = GradientAccumulator::new(deriv.n_params());
    let mut records = Vec::new();
    for (k, z) in measurements.iter().enumerate() {
        let step = extended_step(model, deriv, &state, &sens, z).map_err(|e| e.at_step(k))?;
        loglik += step.loglik_term;
        for (i, g) in step.gradient_terms.iter().enumerate() {
            grad.add(i, *g);
        }
        if keep_records {
            records.push(StepRecord {
                k,
                x_hat: step.state.x_hat.clone(),
                x_hat_prime: step.sens.params.iter().map(|p| p.x_hat.clone()).collect(),
                loglik_term: step.loglik_term,
            });
        }
        state = step.state;
        sens = step.sens;
    }
    Ok(ExtendedRun {
        report: LikelihoodReport { loglik, gradient: grad.into_values() },
        final_state: state,
        final_sens: sens,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::filter_step;
    use crate::linalg::{ud_factor_covariance, UnitUpperTriangular};
    use approx::assert_abs_diff_eq;

    #[test]
    fn gradient_term_scalar_plug_in() {
        let model = {
            let one = |v: f64| Matrix::from_element(1, 1, v);
            let ud = |v: f64| ud_factor_covariance(&one(v)).unwrap();
            ModelAtTheta::new(one(1.0), one(1.0), one(1.0), ud(1.0), ud(1.0), ud(1.0)).unwrap()
        };
        let (_, mut out) = filter_step(&model, &FilterState::initial(&model), &Vector::from_element(1, 1.0)).unwrap();
        out.blocks.d_re = DiagonalMatrix::from_slice(&[4.0]);
        out.e_bar = Vector::from_element(1, 2.0);
        let g = gradient_term(&out, &DiagonalMatrix::from_slice(&[2.0]), &Vector::from_element(1, 1.0)).unwrap();
        assert_abs_diff_eq!(g, -0.5, epsilon = 1e-15);
        let zero = gradient_term(&out, &DiagonalMatrix::zeros(1), &Vector::zeros(1)).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn scalar_innovation_sensitivity_is_plain_derivative() {
        let one = |v: f64| Matrix::from_element(1, 1, v);
        let ud = |v: f64| ud_factor_covariance(&one(v)).unwrap();
        let model = ModelAtTheta::new(one(1.0), one(1.0), one(2.0), ud(1.0), ud(1.0), ud(1.0)).unwrap();
        let (_, out) = filter_step(&model, &FilterState::initial(&model), &Vector::from_element(1, 1.0)).unwrap();
        assert_eq!(out.blocks.u_re, UnitUpperTriangular::identity(1));
        let (e_p, eb_p) = innovation_sensitivity(
            &out,
            &Matrix::zeros(1, 1),
            &model.h,
            &one(0.5),
            &Vector::from_element(1, 3.0),
            &Vector::from_element(1, 0.25),
        )
        .unwrap();
        assert_abs_diff_eq!(e_p[0], -0.5 * 3.0 - 2.0 * 0.25);
        assert_eq!(e_p, eb_p);
    }

    #[test]
    fn zero_pre_array_derivatives_give_zero_blocks() {
        let one = |v: f64| Matrix::from_element(1, 1, v);
        let ud = |v: f64| ud_factor_covariance(&one(v)).unwrap();
        let model = ModelAtTheta::new(one(0.8), one(1.0), one(1.0), ud(0.3), ud(0.7), ud(2.0)).unwrap();
        let state = FilterState::initial(&model);
        let pre = assemble_pre_arrays(&model, &state).unwrap();
        let post = mwgs::orthogonalize(&pre).unwrap();
        let b =
            propagate_step_sensitivities(&pre, &Matrix::zeros(3, 2), &DiagonalMatrix::zeros(3), &post, 1, 1).unwrap();
        assert_eq!(b.gain_block, Matrix::zeros(1, 1));
        assert_eq!(b.d_re, DiagonalMatrix::zeros(1));
        assert_eq!(b.d_p_next, DiagonalMatrix::zeros(1));
    }
}
