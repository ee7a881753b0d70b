//! Conventional Kalman filter and its direct differentiation.
//!
//! This is the reference the UD scheme is compared against. `R_e` is
//! inverted through an unregularized Cholesky factorization and `P` is
//! symmetrized after every update, nothing more: on ill-conditioned problems
//! this filter is expected to break down.

use std::f64::consts::PI;

use nalgebra::Cholesky;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::models::{StateSpace, StateSpaceDerivative};
use crate::LikelihoodReport;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamConvSensitivity {
    pub x_hat: Vector,
    pub p: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvFilterState {
    pub x_hat: Vector,
    pub p: Matrix,
    pub sens: Vec<ParamConvSensitivity>,
}

impl ConvFilterState {
    /// `x̂ = 0`, `P = Π₀`, `∂x̂ = 0`, `∂P = ∂Π₀`.
    pub fn initial(model: &StateSpace, derivs: &[StateSpaceDerivative]) -> Self {
        let n = model.f.nrows();
        Self {
            x_hat: Vector::zeros(n),
            p: model.pi0.clone(),
            sens: derivs.iter().map(|d| ParamConvSensitivity { x_hat: Vector::zeros(n), p: d.pi0.clone() }).collect(),
        }
    }
}

/// Per-step quantities of the conventional filter.
#[derive(Clone, Debug)]
pub struct ConvStepOutput {
    pub e: Vector,
    pub r_e: Matrix,
    pub loglik_term: f64,
    pub gradient_terms: Vec<f64>,
}

struct InnovationInverse {
    chol: Cholesky<f64, nalgebra::Dyn>,
}

impl InnovationInverse {
    fn new(r_e: &Matrix) -> Result<Self> {
        if r_e.iter().any(|v| !v.is_finite()) {
            return Err(Error::IllConditionedInnovation);
        }
        let chol = Cholesky::new(r_e.clone()).ok_or(Error::IllConditionedInnovation)?;
        if chol.l_dirty().diagonal().iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::IllConditionedInnovation);
        }
        Ok(Self { chol })
    }

    fn inverse(&self) -> Matrix {
        self.chol.inverse()
    }

    fn ln_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

fn sym(p: &Matrix) -> Matrix {
    (p + p.transpose()) * 0.5
}

fn check_measurement(model: &StateSpace, state: &ConvFilterState, z: &Vector) -> Result<()> {
    let n = model.f.nrows();
    if state.x_hat.len() != n || state.p.shape() != (n, n) {
        return Err(Error::shape("conventional filter state does not match the model"));
    }
    if z.len() != model.h.nrows() {
        return Err(Error::shape(format!("measurement has length {}, expected {}", z.len(), model.h.nrows())));
    }
    Ok(())
}

/// `R_e = R + HPHᵀ`, `K_p = FPHᵀR_e⁻¹`, `x̂₊ = Fx̂ + K_p·e`,
/// `P₊ = FPFᵀ + GQGᵀ − K_p·R_e·K_pᵀ`. Sensitivities are carried over unchanged.
pub fn conv_kf_step(
    model: &StateSpace,
    state: &ConvFilterState,
    z: &Vector,
) -> Result<(ConvFilterState, Vector, Matrix)> {
    check_measurement(model, state, z)?;
    let (f, h, p) = (&model.f, &model.h, &state.p);
    let e = z - h * &state.x_hat;
    let r_e = &model.r + h * p * h.transpose();
    let inv = InnovationInverse::new(&r_e)?.inverse();
    let k_p = f * p * h.transpose() * &inv;
    let x_next = f * &state.x_hat + &k_p * &e;
    let p_next = f * p * f.transpose() + &model.g * &model.q * model.g.transpose() - &k_p * &r_e * k_p.transpose();
    let next = ConvFilterState { x_hat: x_next, p: sym(&p_next), sens: state.sens.clone() };
    Ok((next, e, r_e))
}

/// Conventional step plus the filter and Riccati-type sensitivity recursions,
/// and the step's log-likelihood and gradient terms.
pub fn diff_kf_step(
    model: &StateSpace,
    derivs: &[StateSpaceDerivative],
    state: &ConvFilterState,
    z: &Vector,
) -> Result<(ConvFilterState, ConvStepOutput)> {
    check_measurement(model, state, z)?;
    if derivs.len() != state.sens.len() {
        return Err(Error::shape("number of model derivatives does not match the sensitivity state"));
    }
    let (f, g, h, q, p) = (&model.f, &model.g, &model.h, &model.q, &state.p);
    let m = h.nrows() as f64;

    let e = z - h * &state.x_hat;
    let ph_t = p * h.transpose();
    let r_e = &model.r + h * &ph_t;
    let factor = InnovationInverse::new(&r_e)?;
    let r_e_inv = factor.inverse();
    let k = f * &ph_t;
    let k_p = &k * &r_e_inv;
    let x_next = f * &state.x_hat + &k_p * &e;
    let p_next = f * p * f.transpose() + g * q * g.transpose() - &k_p * &r_e * k_p.transpose();

    let r_e_inv_e = &r_e_inv * &e;
    let loglik_term = -0.5 * m * (2.0 * PI).ln() - 0.5 * (factor.ln_det() + e.dot(&r_e_inv_e));

    let mut sens = Vec::with_capacity(derivs.len());
    let mut grads = Vec::with_capacity(derivs.len());
    for (d, s) in derivs.iter().zip(&state.sens) {
        let (dp, dx) = (&s.p, &s.x_hat);
        let de = -(&d.h * &state.x_hat) - h * dx;
        let dr_e = &d.r + &d.h * p * h.transpose() + h * dp * h.transpose() + h * p * d.h.transpose();
        let dk = &d.f * p * h.transpose() + f * dp * h.transpose() + f * p * d.h.transpose();
        let dk_p = &dk * &r_e_inv - &k_p * &dr_e * &r_e_inv;
        let dx_next = &d.f * &state.x_hat + f * dx + &dk_p * &e + &k_p * &de;
        let dfpf = &d.f * p * f.transpose();
        let dgqg = &d.g * q * g.transpose();
        let dkrk = &dk_p * &r_e * k_p.transpose();
        let dp_next =
            &dfpf + dfpf.transpose() + f * dp * f.transpose() + &dgqg + dgqg.transpose() + g * &d.q * g.transpose()
                - &dkrk
                - dkrk.transpose()
                - &k_p * &dr_e * k_p.transpose();

        let trace = (&r_e_inv * &dr_e).trace();
        let grad = -0.5 * (trace + 2.0 * de.dot(&r_e_inv_e) - r_e_inv_e.dot(&(&dr_e * &r_e_inv_e)));
        grads.push(grad);
        sens.push(ParamConvSensitivity { x_hat: dx_next, p: sym(&dp_next) });
    }
    let next = ConvFilterState { x_hat: x_next, p: sym(&p_next), sens };
    Ok((next, ConvStepOutput { e, r_e, loglik_term, gradient_terms: grads }))
}

/// Log-likelihood with full `det R_e` / `R_e⁻¹` and its gradient by direct
/// differentiation. An empty record gives `L = 0` and a zero gradient.
pub fn conv_loglik_and_gradient(
    model: &StateSpace,
    derivs: &[StateSpaceDerivative],
    measurements: &[Vector],
) -> Result<LikelihoodReport> {
    model.validate()?;
    let mut state = ConvFilterState::initial(model, derivs);
    let mut loglik = 0.0;
    let mut gradient = vec![0.0; derivs.len()];
    for (k, z) in measurements.iter().enumerate() {
        let (next, out) = diff_kf_step(model, derivs, &state, z).map_err(|e| e.at_step(k))?;
        loglik += out.loglik_term;
        for (g, t) in gradient.iter_mut().zip(&out.gradient_terms) {
            *g += t;
        }
        state = next;
    }
    if !loglik.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("conventional log-likelihood"));
    }
    Ok(LikelihoodReport { loglik, gradient })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Dims;

    fn scalar(h: f64) -> StateSpace {
        let one = |v: f64| Matrix::from_element(1, 1, v);
        StateSpace { f: one(0.9), g: one(1.0), h: one(h), q: one(0.5), r: one(2.0), pi0: one(3.0) }
    }

    #[test]
    fn zero_observation_gives_zero_gain() {
        let model = scalar(0.0);
        let state = ConvFilterState::initial(&model, &[]);
        let (next, _, r_e) = conv_kf_step(&model, &state, &Vector::from_element(1, 5.0)).unwrap();
        assert_eq!(next.x_hat[0], 0.0);
        assert_eq!(r_e[(0, 0)], 2.0);
        assert!((next.p[(0, 0)] - (0.81 * 3.0 + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn theta_independent_model_has_zero_sensitivities() {
        let model = scalar(1.0);
        let zero = vec![StateSpaceDerivative::zeros(Dims { n: 1, m: 1, q: 1 })];
        let mut state = ConvFilterState::initial(&model, &zero);
        for z in [0.3, -1.2, 0.8] {
            let (next, out) = diff_kf_step(&model, &zero, &state, &Vector::from_element(1, z)).unwrap();
            assert_eq!(out.gradient_terms, vec![0.0]);
            assert_eq!(next.sens[0].x_hat[0], 0.0);
            assert_eq!(next.sens[0].p[(0, 0)], 0.0);
            state = next;
        }
    }

    #[test]
    fn empty_record_is_zero() {
        let model = scalar(1.0);
        let zero = vec![StateSpaceDerivative::zeros(Dims { n: 1, m: 1, q: 1 })];
        let r = conv_loglik_and_gradient(&model, &zero, &[]).unwrap();
        assert_eq!(r.loglik, 0.0);
        assert_eq!(r.gradient, vec![0.0]);
    }

    #[test]
    fn singular_innovation_is_reported() {
        let mut model = scalar(1.0);
        model.r = Matrix::from_element(1, 1, -3.0);
        let state = ConvFilterState::initial(&model, &[]);
        assert!(matches!(conv_kf_step(&model, &state, &Vector::zeros(1)), Err(Error::IllConditionedInnovation)));
    }
}
