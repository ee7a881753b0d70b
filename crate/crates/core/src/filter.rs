//! UD-based array covariance filter.
//!
//! Each step stacks the pre-arrays
//!
//! ```text
//! Aᵀ  = [ G·U_Q   F·U_P   0   ]       D_w = diag(D_Q, D_P, D_R)
//!       [ 0       H·U_P   U_R ]
//! ```
//!
//! runs MWGS on them, and reads the predicted covariance factors, the gain
//! block `K_p·U_Re` and the innovation factors straight from the post-arrays.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{ud_factor_covariance, DiagonalMatrix, Matrix, UdFactors, UnitUpperTriangular, Vector};
use crate::models::StateSpace;
use crate::mwgs::{orthogonalize, PostArrayTriple, PreArrayPair};

/// System matrices with covariances in factored form.
#[derive(Clone, Debug)]
pub struct ModelAtTheta {
    pub f: Matrix,
    pub g: Matrix,
    pub h: Matrix,
    pub q_ud: UdFactors,
    pub r_ud: UdFactors,
    pub pi0_ud: UdFactors,
}

impl ModelAtTheta {
    pub fn new(f: Matrix, g: Matrix, h: Matrix, q_ud: UdFactors, r_ud: UdFactors, pi0_ud: UdFactors) -> Result<Self> {
        let n = f.nrows();
        let (m, q) = (h.nrows(), g.ncols());
        if !f.is_square() || g.nrows() != n || h.ncols() != n || q_ud.dim() != q || r_ud.dim() != m || pi0_ud.dim() != n
        {
            return Err(Error::shape("model matrices have inconsistent dimensions"));
        }
        if !r_ud.d.is_positive() {
            return Err(Error::Input("measurement noise covariance must be positive definite".into()));
        }
        if !pi0_ud.d.is_positive() {
            return Err(Error::Input("initial covariance must be positive definite".into()));
        }
        if q_ud.d.iter().any(|d| !(d >= 0.0)) {
            return Err(Error::Input("process noise covariance must be positive semidefinite".into()));
        }
        Ok(Self { f, g, h, q_ud, r_ud, pi0_ud })
    }

    /// Factors `Q`, `R` and `Π₀`. Exactly diagonal covariances are read off
    /// without factoring.
    pub fn from_state_space(ss: &StateSpace) -> Result<Self> {
        Self::new(
            ss.f.clone(),
            ss.g.clone(),
            ss.h.clone(),
            ud_factor_covariance(&ss.q)?,
            ud_factor_covariance(&ss.r)?,
            ud_factor_covariance(&ss.pi0)?,
        )
    }

    pub fn n(&self) -> usize {
        self.f.nrows()
    }

    pub fn m(&self) -> usize {
        self.h.nrows()
    }

    pub fn q(&self) -> usize {
        self.g.ncols()
    }
}

/// `x̂_{k|k−1}` with `P_{k|k−1} = U_P·D_P·U_Pᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterState {
    pub k: usize,
    pub x_hat: Vector,
    pub p_ud: UdFactors,
}

impl FilterState {
    /// `x̂_{0|−1} = 0`, `P_{0|−1} = Π₀`.
    pub fn initial(model: &ModelAtTheta) -> Self {
        Self { k: 0, x_hat: Vector::zeros(model.n()), p_ud: model.pi0_ud.clone() }
    }

    pub fn covariance(&self) -> Matrix {
        self.p_ud.reconstruct()
    }
}

/// Blocks of the post-arrays, positioned as in
///
/// ```text
/// U = [ U_P⁺   K_p·U_Re ]     D_β = diag(D_P⁺, D_Re)
///     [ 0      U_Re     ]
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct PostArrayBlocks {
    pub u_p_next: UnitUpperTriangular,
    pub d_p_next: DiagonalMatrix,
    pub gain_block: Matrix,
    pub u_re: UnitUpperTriangular,
    pub d_re: DiagonalMatrix,
}

impl PostArrayBlocks {
    /// Reassembles the full `U` from its blocks.
    pub fn recombine(&self) -> Matrix {
        let n = self.u_p_next.dim();
        let m = self.u_re.dim();
        let mut u = Matrix::zeros(n + m, n + m);
        u.view_mut((0, 0), (n, n)).copy_from(self.u_p_next.as_matrix());
        u.view_mut((0, n), (n, m)).copy_from(&self.gain_block);
        u.view_mut((n, n), (m, m)).copy_from(self.u_re.as_matrix());
        u
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub blocks: PostArrayBlocks,
    /// `e = z − H·x̂`.
    pub e: Vector,
    /// `ē = U_Re⁻¹·e`.
    pub e_bar: Vector,
    pub post: PostArrayTriple,
}

impl StepOutput {
    pub fn u_p_next(&self) -> &UnitUpperTriangular {
        &self.blocks.u_p_next
    }

    pub fn d_p_next(&self) -> &DiagonalMatrix {
        &self.blocks.d_p_next
    }

    pub fn gain_block(&self) -> &Matrix {
        &self.blocks.gain_block
    }

    pub fn u_re(&self) -> &UnitUpperTriangular {
        &self.blocks.u_re
    }

    pub fn d_re(&self) -> &DiagonalMatrix {
        &self.blocks.d_re
    }

    /// The MWGS transformation `B` of this step.
    pub fn b(&self) -> &Matrix {
        &self.post.b
    }

    /// `R_e = U_Re·D_Re·U_Reᵀ`.
    pub fn innovation_covariance(&self) -> Matrix {
        UdFactors { u: self.blocks.u_re.clone(), d: self.blocks.d_re.clone() }.reconstruct()
    }
}

pub fn assemble_pre_arrays(model: &ModelAtTheta, state: &FilterState) -> Result<PreArrayPair> {
    let (n, m, q) = (model.n(), model.m(), model.q());
    if state.x_hat.len() != n || state.p_ud.dim() != n {
        return Err(Error::shape("filter state does not match model dimension"));
    }
    let u_p = state.p_ud.u.as_matrix();
    let mut a = Matrix::zeros(q + n + m, n + m);
    // Aᵀ blocks, written transposed.
    a.view_mut((0, 0), (q, n)).copy_from(&(&model.g * model.q_ud.u.as_matrix()).transpose());
    a.view_mut((q, 0), (n, n)).copy_from(&(&model.f * u_p).transpose());
    a.view_mut((q, n), (n, m)).copy_from(&(&model.h * u_p).transpose());
    a.view_mut((q + n, n), (m, m)).copy_from(&model.r_ud.u.as_matrix().transpose());
    let d_w = DiagonalMatrix::concat(&[&model.q_ud.d, &state.p_ud.d, &model.r_ud.d]);
    PreArrayPair::new(a, d_w)
}

pub fn read_post_arrays(post: &PostArrayTriple, n: usize, m: usize) -> Result<PostArrayBlocks> {
    if post.u.dim() != n + m || post.d_beta.dim() != n + m {
        return Err(Error::shape(format!("post-array of dimension {} cannot be split into {n} + {m}", post.u.dim())));
    }
    let u = post.u.as_matrix();
    Ok(PostArrayBlocks {
        u_p_next: post.u.diagonal_block(0, n),
        d_p_next: post.d_beta.block(0, n),
        gain_block: u.view((0, n), (n, m)).into_owned(),
        u_re: post.u.diagonal_block(n, m),
        d_re: post.d_beta.block(n, m),
    })
}

/// Completes a step from already-assembled pre-arrays.
pub fn step_with_pre_arrays(
    model: &ModelAtTheta,
    state: &FilterState,
    pre: &PreArrayPair,
    z: &Vector,
) -> Result<(FilterState, StepOutput)> {
    let (n, m) = (model.n(), model.m());
    if z.len() != m {
        return Err(Error::shape(format!("measurement has length {} but the model has m = {m}", z.len())));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("measurement"));
    }
    let post = orthogonalize(pre)?;
    let blocks = read_post_arrays(&post, n, m)?;
    let e = z - &model.h * &state.x_hat;
    let e_bar = blocks.u_re.solve(&e)?;
    let x_next = &model.f * &state.x_hat + &blocks.gain_block * &e_bar;
    let next = FilterState {
        k: state.k + 1,
        x_hat: x_next,
        p_ud: UdFactors { u: blocks.u_p_next.clone(), d: blocks.d_p_next.clone() },
    };
    Ok((next, StepOutput { blocks, e, e_bar, post }))
}

pub fn filter_step(model: &ModelAtTheta, state: &FilterState, z: &Vector) -> Result<(FilterState, StepOutput)> {
    let pre = assemble_pre_arrays(model, state)?;
    step_with_pre_arrays(model, state, &pre, z)
}

/// One term of the log-likelihood:
/// `−(m/2)·ln(2π) − ½·(ln det D_Re + ēᵀ·D_Re⁻¹·ē)`.
pub fn loglik_term(out: &StepOutput) -> Result<f64> {
    let d_re = &out.blocks.d_re;
    check_innovation(d_re)?;
    let m = d_re.dim() as f64;
    let quad: f64 = out.e_bar.iter().zip(d_re.iter()).map(|(e, d)| e * e / d).sum();
    Ok(-0.5 * m * (2.0 * PI).ln() - 0.5 * (d_re.ln_det() + quad))
}

pub(crate) fn check_innovation(d_re: &DiagonalMatrix) -> Result<()> {
    match d_re.iter().enumerate().find(|(_, d)| !(*d > 0.0) || !d.is_finite()) {
        Some((index, value)) => Err(Error::InvalidInnovationCovariance { index, value }),
        None => Ok(()),
    }
}

/// Runs the filter over a measurement record and returns the log-likelihood.
pub fn loglik(model: &ModelAtTheta, measurements: &[Vector]) -> Result<f64> {
    let mut state = FilterState::initial(model);
    let mut total = 0.0;
    for (k, z) in measurements.iter().enumerate() {
        let (next, out) = filter_step(model, &state, z).map_err(|e| e.at_step(k))?;
        total += loglik_term(&out).map_err(|e| e.at_step(k))?;
        state = next;
    }
    Ok(total)
}
