//! Fixtures shared by the benchmarks.

use udkf::filter::{FilterState, ModelAtTheta};
use udkf::models::{IllConditionedModel, InsConstants, InsModel, ParametricModel, StateSpace, StateSpaceDerivative};
use udkf::sensitivity::{ModelDerivativesAtTheta, SensitivityState};
use udkf::trajectory::simulate;
use udkf::Vector;

/// A model evaluated at its true parameter with a simulated record.
pub struct Fixture {
    pub name: &'static str,
    pub theta: Vec<f64>,
    pub ss: StateSpace,
    pub derivs: Vec<StateSpaceDerivative>,
    pub model: ModelAtTheta,
    pub deriv: ModelDerivativesAtTheta,
    pub measurements: Vec<Vector>,
}

impl Fixture {
    pub fn new(name: &'static str, m: &dyn ParametricModel, theta: &[f64], steps: usize) -> Self {
        let ss = m.eval(theta).unwrap();
        let derivs = m.derivatives(theta).unwrap();
        let model = ModelAtTheta::from_state_space(&ss).unwrap();
        let deriv = ModelDerivativesAtTheta::new(&ss, &model, &derivs).unwrap();
        let measurements = simulate(m, theta, steps, 7).unwrap().measurements;
        Self { name, theta: theta.to_vec(), ss, derivs, model, deriv, measurements }
    }

    pub fn initial(&self) -> (FilterState, SensitivityState) {
        (FilterState::initial(&self.model), SensitivityState::initial(&self.model, &self.deriv))
    }
}

pub fn ins(steps: usize) -> Fixture {
    Fixture::new("ins", &InsModel::new(InsConstants::default()).unwrap(), &[2e-4], steps)
}

pub fn ill_conditioned(steps: usize) -> Fixture {
    Fixture::new("ill_conditioned", &IllConditionedModel::new(1e-2).unwrap(), &[7.0], steps)
}
