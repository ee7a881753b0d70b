//! Modified weighted Gram-Schmidt (MWGS) orthogonalization and the
//! propagation of its derivatives.
//!
//! Given pre-arrays `A` (r×s, r > s) and a diagonal weight `D_w`, the kernel
//! produces `U` (unit upper triangular), `D_β` (diagonal) and `B` with
//!
//! ```text
//! Aᵀ = U·Bᵀ,   Aᵀ·D_w·A = U·D_β·Uᵀ,   Bᵀ·D_w·B = D_β.
//! ```
//!
//! [`derivative`] maps `(A', D_w')` to `(U', D_β')` using only the pre-arrays,
//! their derivatives, and the saved `U`, `D_β` and `B`.

use crate::error::{Error, Result};
use crate::linalg::{solve_unit_upper_right, split_ldu, DiagonalMatrix, Matrix, UnitUpperTriangular};

/// Pivots below this fraction of the largest pivot are treated as a rank
/// deficiency.
pub const RANK_FLOOR: f64 = 1e-30;

/// Weighted cosine above which a second orthogonalization pass is run.
pub const REORTHOGONALIZATION_TRIGGER: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct PreArrayPair {
    a: Matrix,
    d_w: DiagonalMatrix,
}

impl PreArrayPair {
    pub fn new(a: Matrix, d_w: DiagonalMatrix) -> Result<Self> {
        let (r, s) = a.shape();
        if s == 0 || r <= s {
            return Err(Error::shape(format!("pre-array must be r x s with r > s >= 1, got {r}x{s}")));
        }
        if d_w.dim() != r {
            return Err(Error::shape(format!("weight has dimension {} for {} rows", d_w.dim(), r)));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pre-array"));
        }
        if let Some((index, value)) = d_w.iter().enumerate().find(|(_, w)| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidWeight { index, value });
        }
        Ok(Self { a, d_w })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn d_w(&self) -> &DiagonalMatrix {
        &self.d_w
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn cols(&self) -> usize {
        self.a.ncols()
    }

    /// `Aᵀ·D_w·A`.
    pub fn gram(&self) -> Matrix {
        self.a.transpose() * self.d_w.mul_left(&self.a)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PostArrayTriple {
    pub u: UnitUpperTriangular,
    pub d_beta: DiagonalMatrix,
    pub b: Matrix,
}

impl PostArrayTriple {
    /// `U·D_β·Uᵀ`.
    pub fn gram(&self) -> Matrix {
        let u = self.u.as_matrix();
        self.d_beta.mul_right(u) * u.transpose()
    }
}

/// `(U', D_β')` for one scalar parameter. `u_prime` is strictly upper.
#[derive(Clone, Debug, PartialEq)]
pub struct PostArrayDerivative {
    pub u_prime: Matrix,
    pub d_beta_prime: DiagonalMatrix,
}

impl PostArrayDerivative {
    pub fn zeros(s: usize) -> Self {
        Self { u_prime: Matrix::zeros(s, s), d_beta_prime: DiagonalMatrix::zeros(s) }
    }

    /// `U'D_βUᵀ + UD_β'Uᵀ + UD_β(U')ᵀ`.
    pub fn gram_derivative(&self, post: &PostArrayTriple) -> Matrix {
        let u = post.u.as_matrix();
        let t1 = post.d_beta.mul_right(&self.u_prime) * u.transpose();
        let t2 = self.d_beta_prime.mul_right(u) * u.transpose();
        &t1 + t1.transpose() + t2
    }
}

fn weighted_dot(w: &DiagonalMatrix, b: &Matrix, i: usize, j: usize) -> f64 {
    let (ci, cj) = (b.column(i), b.column(j));
    let mut acc = 0.0;
    for k in 0..b.nrows() {
        acc += w.get(k) * ci[k] * cj[k];
    }
    acc
}

/// One backward sweep: on return `B_in = B_out·Uᵀ` and the columns of `B_out`
/// are `D_w`-orthogonal. Returns `U` and the pivots.
fn sweep(b: &mut Matrix, w: &DiagonalMatrix) -> Result<(Matrix, Vec<f64>)> {
    let s = b.ncols();
    let mut u = Matrix::identity(s, s);
    let mut pivots = vec![0.0; s];
    let mut max_pivot: f64 = 0.0;
    for i in (0..s).rev() {
        let d = weighted_dot(w, b, i, i);
        max_pivot = max_pivot.max(d);
        if !(d > RANK_FLOOR * max_pivot) || !d.is_finite() {
            return Err(Error::RankDeficientPreArray { index: i, value: d });
        }
        pivots[i] = d;
        for j in 0..i {
            let c = weighted_dot(w, b, j, i) / d;
            u[(j, i)] = c;
            let bi = b.column(i).clone_owned();
            b.column_mut(j).axpy(-c, &bi, 1.0);
        }
    }
    if let Some((i, &d)) = pivots.iter().enumerate().find(|(_, d)| !(**d > RANK_FLOOR * max_pivot)) {
        return Err(Error::RankDeficientPreArray { index: i, value: d });
    }
    Ok((u, pivots))
}

fn max_weighted_cosine(b: &Matrix, w: &DiagonalMatrix, pivots: &[f64]) -> f64 {
    let s = b.ncols();
    let mut worst: f64 = 0.0;
    for i in 0..s {
        for j in 0..i {
            let c = weighted_dot(w, b, i, j).abs() / (pivots[i] * pivots[j]).sqrt();
            worst = worst.max(c);
        }
    }
    worst
}

/// Orthogonalizes the columns of `A` in the `D_w` inner product, last column first.
pub fn orthogonalize(pre: &PreArrayPair) -> Result<PostArrayTriple> {
    let w = &pre.d_w;
    let mut b = pre.a.clone();
    let (mut u, mut pivots) = sweep(&mut b, w)?;
    if max_weighted_cosine(&b, w, &pivots) > REORTHOGONALIZATION_TRIGGER {
        // A = B₁U₁ᵀ and B₁ = B₂U₂ᵀ give A = B₂(U₁U₂)ᵀ.
        let (u2, p2) = sweep(&mut b, w)?;
        u = &u * u2;
        pivots = p2;
    }
    Ok(PostArrayTriple {
        u: UnitUpperTriangular::from_strict_upper_of(&u)?,
        d_beta: DiagonalMatrix::from_slice(&pivots),
        b,
    })
}

/// Derivatives of the post-arrays given the derivatives of the pre-arrays:
///
/// ```text
/// U'   = U·(L̄₀ᵀ + Ū₀ + Ū₂)·D_β⁻¹
/// D_β' = 2·D₀ + D₂
/// ```
///
/// where `L̄₀ + D₀ + Ū₀ = Bᵀ·D_w·A'·U⁻ᵀ` and `Ū₂ᵀ + D₂ + Ū₂ = Bᵀ·D_w'·B`.
pub fn derivative(
    pre: &PreArrayPair,
    a_prime: &Matrix,
    d_w_prime: &DiagonalMatrix,
    post: &PostArrayTriple,
) -> Result<PostArrayDerivative> {
    let (r, s) = pre.a.shape();
    if a_prime.shape() != (r, s) || d_w_prime.dim() != r || post.b.shape() != (r, s) || post.u.dim() != s {
        return Err(Error::shape("post-array derivative: inconsistent dimensions"));
    }
    if let Some(i) = post.d_beta.iter().position(|d| d == 0.0 || !d.is_finite()) {
        return Err(Error::DerivativeUndefined(i));
    }
    let bt = post.b.transpose();

    let first = &bt * pre.d_w.mul_left(a_prime);
    let first = split_ldu(&solve_unit_upper_right(&first, &post.u)?)?;

    let second = split_ldu(&(&bt * d_w_prime.mul_left(&post.b)))?;

    let core = first.strictly_lower.transpose() + first.strictly_upper + second.strictly_upper;
    let mut scaled = core;
    for j in 0..s {
        scaled.column_mut(j).scale_mut(1.0 / post.d_beta.get(j));
    }
    let u_prime = crate::linalg::strict_upper(&(post.u.as_matrix() * scaled));
    let d_beta_prime = first.diagonal.scale(2.0).add(&second.diagonal);
    Ok(PostArrayDerivative { u_prime, d_beta_prime })
}

/// The intermediates of [`derivative`], exposed for reporting.
#[derive(Clone, Debug)]
pub struct DerivativeTrace {
    pub l0: Matrix,
    pub d0: DiagonalMatrix,
    pub u0: Matrix,
    pub d2: DiagonalMatrix,
    pub u2: Matrix,
    pub result: PostArrayDerivative,
}

pub fn derivative_trace(
    pre: &PreArrayPair,
    a_prime: &Matrix,
    d_w_prime: &DiagonalMatrix,
    post: &PostArrayTriple,
) -> Result<DerivativeTrace> {
    let result = derivative(pre, a_prime, d_w_prime, post)?;
    let bt = post.b.transpose();
    let first = split_ldu(&solve_unit_upper_right(&(&bt * pre.d_w.mul_left(a_prime)), &post.u)?)?;
    let second = split_ldu(&(&bt * d_w_prime.mul_left(&post.b)))?;
    Ok(DerivativeTrace {
        l0: first.strictly_lower,
        d0: first.diagonal,
        u0: first.strictly_upper,
        d2: second.diagonal,
        u2: second.strictly_upper,
        result,
    })
}
