//! UD-factorized array covariance Kalman filtering with state sensitivities.
//!
//! The filter propagates `P = U·D·Uᵀ` through modified weighted Gram-Schmidt
//! orthogonalization of stacked pre-arrays. Derivatives of the post-arrays
//! with respect to model parameters are obtained from the derivatives of the
//! pre-arrays and the saved MWGS transformation, which gives state
//! sensitivities, the log-likelihood and its gradient in a single pass
//! without ever running the conventional Riccati recursion.
//!
//! Modules:
//!
//! * [`linalg`]: structured matrices, modified Cholesky factorization and its derivative.
//! * [`mwgs`]: the orthogonalization kernel and post-array derivatives.
//! * [`filter`]: the UD array covariance filter.
//! * [`sensitivity`]: sensitivities and log-likelihood gradient.
//! * [`baseline`]: conventional and differentiated Kalman filter.
//! * [`models`], [`trajectory`]: model catalog, simulation and data exchange.
//! * [`mle`]: gradient-based maximum-likelihood estimation.

// Negated comparisons reject NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod error;
pub mod filter;
pub mod linalg;
pub mod mle;
pub mod models;
pub mod mwgs;
pub mod sensitivity;
pub mod trajectory;

use serde::{Deserialize, Serialize};

pub use error::{Error, Result};
pub use filter::{FilterState, ModelAtTheta, StepOutput};
pub use linalg::{DiagonalMatrix, LduSplit, Matrix, UdDerivative, UdFactors, UnitUpperTriangular, Vector};
pub use mle::{Engine, EstimationResult, Objective};
pub use models::{ModelSpec, ParametricModel, StateSpace, StateSpaceDerivative};
pub use mwgs::{PostArrayDerivative, PostArrayTriple, PreArrayPair};
pub use sensitivity::{ModelDerivativesAtTheta, SensitivityState};
pub use trajectory::Trajectory;

/// Log-likelihood of a measurement record and its gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodReport {
    pub loglik: f64,
    pub gradient: Vec<f64>,
}
