//! Structured dense linear algebra.
//!
//! General blocks are plain [`Matrix`] values. Diagonal and unit upper
//! triangular matrices get their own types whose zero/unit pattern is fixed
//! at construction, so code downstream never has to re-check it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative tolerance on `‖S − Sᵀ‖_F / ‖S‖_F` accepted by [`mod_cholesky`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// A diagonal matrix stored as its diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalMatrix {
    diag: Vector,
}

impl DiagonalMatrix {
    pub fn new(diag: Vector) -> Self {
        Self { diag }
    }

    pub fn from_slice(diag: &[f64]) -> Self {
        Self::new(Vector::from_column_slice(diag))
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(Vector::from_element(dim, 1.0))
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(Vector::zeros(dim))
    }

    /// The diagonal of a square matrix; off-diagonal entries are dropped.
    pub fn from_matrix_diagonal(m: &Matrix) -> Self {
        Self::new(m.diagonal())
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.diag[i]
    }

    pub fn as_vector(&self) -> &Vector {
        &self.diag
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.diag.iter().copied()
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_diagonal(&self.diag)
    }

    pub fn is_positive(&self) -> bool {
        self.diag.iter().all(|&d| d > 0.0 && d.is_finite())
    }

    pub fn scale(&self, c: f64) -> Self {
        Self::new(&self.diag * c)
    }

    /// Sub-block `[start, start + len)` of the diagonal.
    pub fn block(&self, start: usize, len: usize) -> Self {
        Self::new(self.diag.rows(start, len).into_owned())
    }

    /// `diag(blocks[0], blocks[1], …)`.
    pub fn concat(blocks: &[&DiagonalMatrix]) -> Self {
        let entries: Vec<f64> = blocks.iter().flat_map(|b| b.iter()).collect();
        Self::new(Vector::from_vec(entries))
    }

    /// `D · M` (scales the rows of `m`).
    pub fn mul_left(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row *= self.diag[i];
        }
        out
    }

    /// `M · D` (scales the columns of `m`).
    pub fn mul_right(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col *= self.diag[j];
        }
        out
    }

    pub fn add(&self, other: &DiagonalMatrix) -> Self {
        Self::new(&self.diag + &other.diag)
    }

    /// Σ ln dᵢ; the determinant itself is never formed.
    pub fn ln_det(&self) -> f64 {
        self.diag.iter().map(|d| d.ln()).sum()
    }
}

/// A unit upper triangular matrix. The strictly lower part is zero and the
/// diagonal is one by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitUpperTriangular {
    m: Matrix,
}

impl UnitUpperTriangular {
    pub fn identity(dim: usize) -> Self {
        Self { m: Matrix::identity(dim, dim) }
    }

    /// Keeps the strictly upper part of `m` and puts ones on the diagonal.
    pub fn from_strict_upper_of(m: &Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::shape(format!(
                "unit upper triangular factor needs a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let n = m.nrows();
        let mut out = Matrix::identity(n, n);
        for j in 0..n {
            for i in 0..j {
                out[(i, j)] = m[(i, j)];
            }
        }
        Ok(Self { m: out })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.m
    }

    pub fn into_matrix(self) -> Matrix {
        self.m
    }

    /// Diagonal block `[start, start + len)²`, which is again unit upper triangular.
    pub fn diagonal_block(&self, start: usize, len: usize) -> Self {
        Self { m: self.m.view((start, start), (len, len)).into_owned() }
    }

    /// Solves `U x = b` by back substitution.
    pub fn solve(&self, b: &Vector) -> Result<Vector> {
        let n = self.dim();
        if b.len() != n {
            return Err(Error::shape(format!("triangular solve: rhs length {} for dimension {}", b.len(), n)));
        }
        let mut x = b.clone();
        for i in (0..n).rev() {
            let mut acc = x[i];
            for k in i + 1..n {
                acc -= self.m[(i, k)] * x[k];
            }
            x[i] = acc;
        }
        Ok(x)
    }

    /// Solves `U X = B` column by column.
    pub fn solve_matrix(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.dim();
        if b.nrows() != n {
            return Err(Error::shape(format!("triangular solve: rhs has {} rows for dimension {}", b.nrows(), n)));
        }
        let mut x = b.clone();
        for mut col in x.column_iter_mut() {
            for i in (0..n).rev() {
                let mut acc = col[i];
                for k in i + 1..n {
                    acc -= self.m[(i, k)] * col[k];
                }
                col[i] = acc;
            }
        }
        Ok(x)
    }
}

/// `S = U·D·Uᵀ` with `U` unit upper triangular and `D` diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct UdFactors {
    pub u: UnitUpperTriangular,
    pub d: DiagonalMatrix,
}

impl UdFactors {
    pub fn identity(dim: usize) -> Self {
        Self { u: UnitUpperTriangular::identity(dim), d: DiagonalMatrix::identity(dim) }
    }

    pub fn dim(&self) -> usize {
        self.d.dim()
    }

    pub fn reconstruct(&self) -> Matrix {
        let ud = self.d.mul_right(self.u.as_matrix());
        &ud * self.u.as_matrix().transpose()
    }
}

/// Derivative of a pair of UD factors with respect to one scalar parameter.
/// `u` is strictly upper triangular (the derivative of a unit diagonal is zero).
#[derive(Clone, Debug, PartialEq)]
pub struct UdDerivative {
    pub u: Matrix,
    pub d: DiagonalMatrix,
}

impl UdDerivative {
    pub fn zeros(dim: usize) -> Self {
        Self { u: Matrix::zeros(dim, dim), d: DiagonalMatrix::zeros(dim) }
    }

    /// `U'DUᵀ + UD'Uᵀ + UD(U')ᵀ`, the derivative of the reconstructed matrix.
    pub fn reconstruct(&self, f: &UdFactors) -> Matrix {
        let u = f.u.as_matrix();
        let t1 = f.d.mul_right(&self.u) * u.transpose();
        let t2 = self.d.mul_right(u) * u.transpose();
        &t1 + t1.transpose() + t2
    }
}

/// Strictly lower, diagonal and strictly upper parts of a square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LduSplit {
    pub strictly_lower: Matrix,
    pub diagonal: DiagonalMatrix,
    pub strictly_upper: Matrix,
}

impl LduSplit {
    pub fn recompose(&self) -> Matrix {
        &self.strictly_lower + self.diagonal.to_matrix() + &self.strictly_upper
    }
}

pub fn split_ldu(m: &Matrix) -> Result<LduSplit> {
    if !m.is_square() {
        return Err(Error::shape(format!("split_ldu needs a square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    let n = m.nrows();
    let mut lower = Matrix::zeros(n, n);
    let mut upper = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i > j {
                lower[(i, j)] = m[(i, j)];
            } else if i < j {
                upper[(i, j)] = m[(i, j)];
            }
        }
    }
    Ok(LduSplit { strictly_lower: lower, diagonal: DiagonalMatrix::from_matrix_diagonal(m), strictly_upper: upper })
}

/// Computes `X = M·U⁻ᵀ` by solving `X·Uᵀ = M` row by row.
pub fn solve_unit_upper_right(m: &Matrix, u: &UnitUpperTriangular) -> Result<Matrix> {
    let n = u.dim();
    if m.ncols() != n {
        return Err(Error::shape(format!("solve_unit_upper_right: {} columns against dimension {}", m.ncols(), n)));
    }
    let um = u.as_matrix();
    let mut x = m.clone();
    for r in 0..x.nrows() {
        // x_j + Σ_{k>j} U_jk x_k = m_j
        for j in (0..n).rev() {
            let mut acc = x[(r, j)];
            for k in j + 1..n {
                acc -= um[(j, k)] * x[(r, k)];
            }
            x[(r, j)] = acc;
        }
    }
    Ok(x)
}

fn frobenius(m: &Matrix) -> f64 {
    m.norm()
}

fn check_square(s: &Matrix, what: &str) -> Result<()> {
    if s.is_square() && s.nrows() > 0 {
        Ok(())
    } else {
        Err(Error::shape(format!("{what} needs a nonempty square matrix, got {}x{}", s.nrows(), s.ncols())))
    }
}

/// Symmetrizes `s` after checking its asymmetry is below [`SYMMETRY_TOL`].
pub fn symmetrized(s: &Matrix) -> Result<Matrix> {
    check_square(s, "symmetrization")?;
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("symmetric matrix"));
    }
    let scale = frobenius(s);
    let asym = frobenius(&(s - s.transpose()));
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym / scale));
    }
    Ok((s + s.transpose()) * 0.5)
}

/// Modified Cholesky factorization `S = U·D·Uᵀ` of a symmetric positive
/// definite matrix.
pub fn mod_cholesky(s: &Matrix) -> Result<UdFactors> {
    let s = symmetrized(s)?;
    let n = s.nrows();
    let mut u = Matrix::identity(n, n);
    let mut d = Vector::zeros(n);
    for j in (0..n).rev() {
        let mut dj = s[(j, j)];
        for k in j + 1..n {
            dj -= u[(j, k)] * u[(j, k)] * d[k];
        }
        if !(dj > 0.0) || !dj.is_finite() {
            return Err(Error::NotPositiveDefinite { index: j, value: dj });
        }
        d[j] = dj;
        for i in 0..j {
            let mut acc = s[(i, j)];
            for k in j + 1..n {
                acc -= u[(i, k)] * u[(j, k)] * d[k];
            }
            u[(i, j)] = acc / dj;
        }
    }
    Ok(UdFactors { u: UnitUpperTriangular { m: u }, d: DiagonalMatrix::new(d) })
}

pub fn is_diagonal(s: &Matrix) -> bool {
    s.is_square() && (0..s.nrows()).all(|i| (0..s.ncols()).all(|j| i == j || s[(i, j)] == 0.0))
}

/// UD factors of a covariance that may be positive semidefinite.
///
/// Exactly diagonal inputs are read off directly (zero entries allowed);
/// anything else goes through [`mod_cholesky`].
pub fn ud_factor_covariance(s: &Matrix) -> Result<UdFactors> {
    check_square(s, "covariance factorization")?;
    if is_diagonal(s) {
        let d = s.diagonal();
        if let Some((i, &v)) = d.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::NotPositiveDefinite { index: i, value: v });
        }
        return Ok(UdFactors { u: UnitUpperTriangular::identity(s.nrows()), d: DiagonalMatrix::new(d) });
    }
    mod_cholesky(s)
}

/// Derivative of the modified Cholesky factors along `s_prime`.
///
/// With `Φ = U⁻¹·S'·U⁻ᵀ = Ū·D + D' + (Ū·D)ᵀ`, where `Ū = U⁻¹U'` is strictly
/// upper, we get `D' = diag(Φ)` and `U' = U·strict_upper(Φ)·D⁻¹`.
pub fn mod_cholesky_derivative(s: &Matrix, s_prime: &Matrix, f: &UdFactors) -> Result<UdDerivative> {
    check_square(s, "factor derivative")?;
    let n = f.dim();
    if s.nrows() != n || s_prime.nrows() != n || !s_prime.is_square() {
        return Err(Error::shape("factor derivative: inconsistent dimensions"));
    }
    let s_prime = symmetrized_or_zero(s_prime)?;
    let x = f.u.solve_matrix(&s_prime)?;
    let phi = solve_unit_upper_right(&x, &f.u)?;
    let split = split_ldu(&phi)?;
    let mut scaled = split.strictly_upper;
    for j in 0..n {
        let dj = f.d.get(j);
        let column_nonzero = scaled.column(j).iter().any(|&v| v != 0.0);
        if column_nonzero {
            if dj == 0.0 {
                return Err(Error::DegenerateFactorization(j));
            }
            scaled.column_mut(j).scale_mut(1.0 / dj);
        }
    }
    let u_prime = f.u.as_matrix() * scaled;
    Ok(UdDerivative { u: strict_upper(&u_prime), d: split.diagonal })
}

/// Derivative of the factors produced by [`ud_factor_covariance`].
pub fn ud_covariance_derivative(s: &Matrix, s_prime: &Matrix, f: &UdFactors) -> Result<UdDerivative> {
    if is_diagonal(s) && is_diagonal(s_prime) && s.shape() == s_prime.shape() {
        return Ok(UdDerivative {
            u: Matrix::zeros(s.nrows(), s.nrows()),
            d: DiagonalMatrix::from_matrix_diagonal(s_prime),
        });
    }
    mod_cholesky_derivative(s, s_prime, f)
}

fn symmetrized_or_zero(s: &Matrix) -> Result<Matrix> {
    if s.iter().all(|&v| v == 0.0) {
        return Ok(s.clone());
    }
    symmetrized(s)
}

/// Strictly upper part of `m`, everything else zeroed.
pub fn strict_upper(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..m.nrows() {
        for j in 0..m.ncols().min(i + 1) {
            out[(i, j)] = 0.0;
        }
    }
    out
}

/// Relative Frobenius distance `‖a − b‖ / max(‖b‖, tiny)`.
pub fn rel_diff(a: &Matrix, b: &Matrix) -> f64 {
    let denom = frobenius(b).max(f64::MIN_POSITIVE);
    frobenius(&(a - b)) / denom
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn identity_factors_to_identity() {
        let f = mod_cholesky(&Matrix::identity(3, 3)).unwrap();
        assert_eq!(f.u, UnitUpperTriangular::identity(3));
        assert_eq!(f.d, DiagonalMatrix::identity(3));
    }

    #[test]
    fn diagonal_input_gives_exact_identity_u() {
        let s = Matrix::identity(3, 3) * 49.0;
        let f = mod_cholesky(&s).unwrap();
        assert_eq!(f.u.as_matrix(), &Matrix::identity(3, 3));
        assert_eq!(f.d, DiagonalMatrix::from_slice(&[49.0, 49.0, 49.0]));
    }

    #[test]
    fn two_by_two_known_factors() {
        let s = m(2, 2, &[2.0, 1.0, 1.0, 1.0]);
        let f = mod_cholesky(&s).unwrap();
        assert_eq!(f.u.as_matrix(), &m(2, 2, &[1.0, 1.0, 0.0, 1.0]));
        assert_eq!(f.d, DiagonalMatrix::from_slice(&[1.0, 1.0]));
        assert!(rel_diff(&f.reconstruct(), &s) < 1e-15);
    }

    #[test]
    fn rejects_indefinite_and_asymmetric() {
        let s = m(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(mod_cholesky(&s), Err(Error::NotPositiveDefinite { .. })));
        let s = m(2, 2, &[2.0, 1.0, 0.5, 1.0]);
        assert!(matches!(mod_cholesky(&s), Err(Error::NotSymmetric(_))));
        let s = m(2, 3, &[1.0; 6]);
        assert!(matches!(mod_cholesky(&s), Err(Error::Shape(_))));
    }

    #[test]
    fn tiny_asymmetry_is_symmetrized() {
        let s = m(2, 2, &[2.0, 1.0, 1.0 + 1e-13, 1.0]);
        let f = mod_cholesky(&s).unwrap();
        assert!(rel_diff(&f.reconstruct(), &s) < 1e-12);
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        let s = m(2, 2, &[2.0, 1.0, 1.0, 1.0]);
        let f = mod_cholesky(&s).unwrap();
        let d = mod_cholesky_derivative(&s, &Matrix::zeros(2, 2), &f).unwrap();
        assert_eq!(d, UdDerivative::zeros(2));
    }

    #[test]
    fn derivative_along_scaled_identity() {
        let theta = 7.0;
        let s = Matrix::identity(3, 3) * theta * theta;
        let sp = Matrix::identity(3, 3) * 2.0 * theta;
        let f = mod_cholesky(&s).unwrap();
        let d = mod_cholesky_derivative(&s, &sp, &f).unwrap();
        assert_eq!(d.u, Matrix::zeros(3, 3));
        assert_eq!(d.d, DiagonalMatrix::from_slice(&[14.0, 14.0, 14.0]));
    }

    #[test]
    fn derivative_needs_nonzero_pivots() {
        let s = m(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let f = ud_factor_covariance(&s).unwrap();
        let sp = m(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(mod_cholesky_derivative(&s, &sp, &f), Err(Error::DegenerateFactorization(1))));
    }

    #[test]
    fn split_known_matrix() {
        let s = split_ldu(&m(2, 2, &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(s.strictly_lower, m(2, 2, &[0.0, 0.0, 3.0, 0.0]));
        assert_eq!(s.diagonal, DiagonalMatrix::from_slice(&[1.0, 4.0]));
        assert_eq!(s.strictly_upper, m(2, 2, &[0.0, 2.0, 0.0, 0.0]));
        let z = split_ldu(&Matrix::zeros(3, 3)).unwrap();
        assert_eq!(z.recompose(), Matrix::zeros(3, 3));
        assert!(matches!(split_ldu(&Matrix::zeros(2, 3)), Err(Error::Shape(_))));
    }

    #[test]
    fn right_solve_against_unit_upper() {
        let u = UnitUpperTriangular::from_strict_upper_of(&m(2, 2, &[1.0, 0.5, 0.0, 1.0])).unwrap();
        let x = solve_unit_upper_right(&m(1, 2, &[1.0, 1.0]), &u).unwrap();
        assert_abs_diff_eq!(x[(0, 0)], 0.5);
        assert_abs_diff_eq!(x[(0, 1)], 1.0);
        let any = m(2, 2, &[3.0, -1.0, 2.0, 7.0]);
        assert_eq!(solve_unit_upper_right(&any, &UnitUpperTriangular::identity(2)).unwrap(), any);
        assert!(solve_unit_upper_right(&m(1, 3, &[1.0; 3]), &u).is_err());
    }

    #[test]
    fn psd_diagonal_bypass_allows_zeros() {
        let f = ud_factor_covariance(&Matrix::zeros(2, 2)).unwrap();
        assert_eq!(f.d, DiagonalMatrix::zeros(2));
        assert!(ud_factor_covariance(&m(1, 1, &[-1.0])).is_err());
    }

    #[test]
    fn diagonal_helpers() {
        let d = DiagonalMatrix::from_slice(&[2.0, 3.0]);
        let a = m(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(d.mul_left(&a), m(2, 2, &[2.0, 2.0, 3.0, 3.0]));
        assert_eq!(d.mul_right(&a), m(2, 2, &[2.0, 3.0, 2.0, 3.0]));
        assert_abs_diff_eq!(d.ln_det(), 6f64.ln(), epsilon = 1e-15);
        assert_eq!(DiagonalMatrix::concat(&[&d, &d]).dim(), 4);
    }
}
