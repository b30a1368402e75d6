//! Dense real-matrix primitives.
//!
//! [`Matrix`] is a thin finite-valued wrapper over `nalgebra::DMatrix<f64>`.
//! The SVD comes from faer and QR from nalgebra; this module fixes the
//! conventions on top of them (singular-value ordering and signs, the
//! numerical-rank rule, Haar sign correction) so downstream results are
//! reproducible.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling;

/// Dense `f64` matrix with finite entries.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct Matrix(DMatrix<f64>);

/// Editable layer weight.
pub type ParamMatrix = Matrix;

/// JSON layout: `{"rows": r, "cols": c, "data": [row-major entries]}`.
#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<MatrixRepr> for Matrix {
    type Error = Error;

    fn try_from(r: MatrixRepr) -> Result<Self> {
        Matrix::from_row_major(r.rows, r.cols, r.data)
    }
}

impl From<Matrix> for MatrixRepr {
    fn from(m: Matrix) -> Self {
        MatrixRepr {
            rows: m.rows(),
            cols: m.cols(),
            data: m.to_row_major(),
        }
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Matrix {}x{} {:?}",
            self.rows(),
            self.cols(),
            self.to_row_major()
        )
    }
}

impl Matrix {
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims(
                "data",
                format!("{} entries", rows * cols),
                format!("{} entries", data.len()),
            ));
        }
        if let Some(bad) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("non-finite matrix entry {bad}")));
        }
        Ok(Matrix(DMatrix::from_row_slice(rows, cols, &data)))
    }

    /// Build from column vectors of equal length. `rows` fixes the height
    /// when `columns` is empty.
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
        let mut m = DMatrix::zeros(rows, columns.len());
        for (j, c) in columns.iter().enumerate() {
            if c.len() != rows {
                return Err(Error::dims(
                    "column",
                    format!("length {rows}"),
                    format!("length {}", c.len()),
                ));
            }
            if c.iter().any(|x| !x.is_finite()) {
                return Err(Error::Domain("non-finite column entry".into()));
            }
            m.column_mut(j).copy_from_slice(c);
        }
        Ok(Matrix(m))
    }

    pub fn from_nalgebra(m: DMatrix<f64>) -> Result<Self> {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("non-finite matrix entry".into()));
        }
        Ok(Matrix(m))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Matrix(DMatrix::identity(n, n))
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        Matrix(m)
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// Panics on a non-finite value.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(v.is_finite(), "non-finite matrix entry");
        self.0[(i, j)] = v;
    }

    pub fn as_nalgebra(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_nalgebra(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows() * self.cols());
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.0.column(j).iter().copied().collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.cols()).map(|j| self.column(j)).collect()
    }

    /// Columns `start..end` as a new matrix.
    pub fn column_range(&self, start: usize, end: usize) -> Matrix {
        Matrix(self.0.columns(start, end - start).into_owned())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix(self.0.transpose())
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix(&self.0 * c)
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols(), "vector length mismatch");
        (0..self.rows())
            .map(|i| (0..self.cols()).map(|j| self.0[(i, j)] * v[j]).sum())
            .collect()
    }

    /// Checked product, naming the operands on mismatch.
    pub fn try_mul(&self, rhs: &Matrix, operand: &'static str) -> Result<Matrix> {
        if self.cols() != rhs.rows() {
            return Err(Error::dims(
                operand,
                format!("{} rows", self.cols()),
                format!("{} rows", rhs.rows()),
            ));
        }
        Ok(Matrix(&self.0 * &rhs.0))
    }

    /// Horizontal concatenation `[self | rhs]`.
    pub fn hstack(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows() != rhs.rows() {
            return Err(Error::dims(
                "hstack",
                format!("{} rows", self.rows()),
                format!("{} rows", rhs.rows()),
            ));
        }
        let mut m = DMatrix::zeros(self.rows(), self.cols() + rhs.cols());
        m.columns_mut(0, self.cols()).copy_from(&self.0);
        m.columns_mut(self.cols(), rhs.cols()).copy_from(&rhs.0);
        Ok(Matrix(m))
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, x| acc.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        self.0
            .iter()
            .zip(other.0.iter())
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }

    /// Largest deviation of `selfᵀ·self` from the identity.
    pub fn orthogonality_error(&self) -> f64 {
        let g = self.0.transpose() * &self.0;
        let n = g.nrows();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }

    /// Raw bytes of the row-major entries, for bit-exact comparisons.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_row_major()
            .iter()
            .flat_map(|x| x.to_bits().to_le_bytes())
            .collect()
    }
}

impl<'a> Mul<&'a Matrix> for &'a Matrix {
    type Output = Matrix;

    fn mul(self, rhs: &'a Matrix) -> Matrix {
        assert_eq!(self.cols(), rhs.rows(), "matrix product shape mismatch");
        Matrix(&self.0 * &rhs.0)
    }
}

impl<'a> Add<&'a Matrix> for &'a Matrix {
    type Output = Matrix;

    fn add(self, rhs: &'a Matrix) -> Matrix {
        assert_eq!(self.shape(), rhs.shape(), "matrix sum shape mismatch");
        Matrix(&self.0 + &rhs.0)
    }
}

impl<'a> Sub<&'a Matrix> for &'a Matrix {
    type Output = Matrix;

    fn sub(self, rhs: &'a Matrix) -> Matrix {
        assert_eq!(
            self.shape(),
            rhs.shape(),
            "matrix difference shape mismatch"
        );
        Matrix(&self.0 - &rhs.0)
    }
}

/// Thin SVD `m = u · diag(singular_values) · v_t` with `r = min(rows, cols)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SvdResult {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v_t: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let s = Matrix::diag(&self.singular_values);
        &(&self.u * &s) * &self.v_t
    }

    pub fn sigma_max(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }
}

/// Singular value decomposition with descending singular values.
///
/// Signs are canonicalised: in each left singular vector the entry of largest
/// magnitude (first index on ties) is non-negative, and the matching row of
/// `v_t` is flipped with it.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    if m.is_empty() {
        return Err(Error::InvalidArgument("svd of an empty matrix".into()));
    }
    let (rows, cols) = m.shape();
    let a = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m.0[(i, j)]);
    let dec = a
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;
    let r = rows.min(cols);
    let sv = dec.S().column_vector();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&x, &y| sv[y].abs().total_cmp(&sv[x].abs()));
    let singular_values: Vec<f64> = order.iter().map(|&k| sv[k].abs()).collect();
    let (fu, fv) = (dec.U(), dec.V());
    let mut u = DMatrix::from_fn(rows, r, |i, k| fu[(i, order[k])]);
    let mut v_t = DMatrix::from_fn(r, cols, |k, j| fv[(j, order[k])]);
    if !singular_values.iter().all(|s| s.is_finite())
        || !u.iter().chain(v_t.iter()).all(|x| x.is_finite())
    {
        return Err(Error::Numerical("SVD produced non-finite factors".into()));
    }

    for k in 0..singular_values.len() {
        let mut pivot = 0;
        let mut best = -1.0;
        for i in 0..u.nrows() {
            let a = u[(i, k)].abs();
            if a > best {
                best = a;
                pivot = i;
            }
        }
        if u[(pivot, k)] < 0.0 {
            u.column_mut(k).neg_mut();
            v_t.row_mut(k).neg_mut();
        }
    }

    Ok(SvdResult {
        u: Matrix::from_nalgebra(u)?,
        singular_values,
        v_t: Matrix::from_nalgebra(v_t)?,
    })
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.0.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest singular value; zero for an empty or zero matrix.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    if m.is_empty() {
        return Ok(0.0);
    }
    Ok(svd(m)?.sigma_max())
}

/// Default numerical-rank cutoff: `ε · max(rows, cols) · σ_max`.
pub fn default_rank_threshold(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    f64::EPSILON * rows.max(cols) as f64 * sigma_max
}

fn rank_threshold(m: &Matrix, sigma_max: f64, rank_tol: f64) -> f64 {
    if rank_tol > 0.0 {
        rank_tol
    } else {
        default_rank_threshold(m.rows(), m.cols(), sigma_max)
    }
}

/// Number of singular values above the rank threshold.
pub fn numerical_rank(m: &Matrix, rank_tol: f64) -> Result<usize> {
    if m.is_empty() {
        return Ok(0);
    }
    let dec = svd(m)?;
    let tol = rank_threshold(m, dec.sigma_max(), rank_tol);
    Ok(dec.singular_values.iter().filter(|&&s| s > tol).count())
}

/// Moore-Penrose pseudoinverse. `rank_tol == 0` selects the default rule;
/// a positive value is used as an absolute singular-value cutoff.
pub fn pseudo_inverse(m: &Matrix, rank_tol: f64) -> Result<Matrix> {
    if rank_tol < 0.0 || !rank_tol.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "rank_tol must be >= 0, got {rank_tol}"
        )));
    }
    if m.is_empty() {
        return Ok(Matrix::zeros(m.cols(), m.rows()));
    }
    let dec = svd(m)?;
    let tol = rank_threshold(m, dec.sigma_max(), rank_tol);
    let r = dec.singular_values.len();
    let mut v_scaled = dec.v_t.transpose().0;
    for k in 0..r {
        let s = dec.singular_values[k];
        let inv = if s > tol { 1.0 / s } else { 0.0 };
        v_scaled.column_mut(k).scale_mut(inv);
    }
    Matrix::from_nalgebra(v_scaled * dec.u.0.transpose())
}

/// Spectral condition number `σ_max / σ_min` over the numerically nonzero
/// singular values (default rank rule).
pub fn condition_number(m: &Matrix) -> Result<f64> {
    condition_number_with_tol(m, 0.0)
}

pub fn condition_number_with_tol(m: &Matrix, rank_tol: f64) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::Domain("condition number of an empty matrix".into()));
    }
    let dec = svd(m)?;
    condition_from_singular_values(
        &dec.singular_values,
        rank_threshold(m, dec.sigma_max(), rank_tol),
    )
}

pub(crate) fn condition_from_singular_values(sv: &[f64], tol: f64) -> Result<f64> {
    let smax = sv.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Err(Error::Domain("condition number of the zero matrix".into()));
    }
    let smin = sv
        .iter()
        .copied()
        .filter(|&s| s > tol)
        .fold(f64::INFINITY, f64::min);
    if !smin.is_finite() || smin == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((smax / smin).max(1.0))
}

/// Square matrix with `RᵀR = I`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct OrthogonalMatrix(Matrix);

impl TryFrom<Matrix> for OrthogonalMatrix {
    type Error = Error;

    fn try_from(m: Matrix) -> Result<Self> {
        OrthogonalMatrix::new(m)
    }
}

impl From<OrthogonalMatrix> for Matrix {
    fn from(r: OrthogonalMatrix) -> Matrix {
        r.0
    }
}

impl OrthogonalMatrix {
    /// Entrywise tolerance for `RᵀR = RRᵀ = I`.
    pub const TOLERANCE: f64 = 1e-10;

    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() != m.cols() || m.is_empty() {
            return Err(Error::dims(
                "orthogonal matrix",
                "non-empty square",
                format!("{}x{}", m.rows(), m.cols()),
            ));
        }
        let err = m
            .orthogonality_error()
            .max(m.transpose().orthogonality_error());
        if err >= Self::TOLERANCE {
            return Err(Error::Numerical(format!(
                "matrix is not orthogonal: max |RᵀR - I| = {err:e}"
            )));
        }
        Ok(OrthogonalMatrix(m))
    }

    /// Skip the invariant check. For products of already-verified factors
    /// whose drift is handled by the caller.
    pub(crate) fn new_unchecked(m: Matrix) -> Self {
        OrthogonalMatrix(m)
    }

    pub fn identity(dim: usize) -> Self {
        OrthogonalMatrix(Matrix::identity(dim))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn transpose(&self) -> OrthogonalMatrix {
        OrthogonalMatrix(self.0.transpose())
    }

    /// `max(|RᵀR − I|, |RRᵀ − I|)`, entrywise.
    pub fn orthogonality_error(&self) -> f64 {
        self.0
            .orthogonality_error()
            .max(self.0.transpose().orthogonality_error())
    }

    pub fn compose(&self, rhs: &OrthogonalMatrix) -> OrthogonalMatrix {
        OrthogonalMatrix(&self.0 * &rhs.0)
    }
}

/// Nearest orthogonal matrix in Frobenius norm (the polar factor `U·Vᵀ`).
pub fn nearest_orthogonal(m: &Matrix) -> Result<OrthogonalMatrix> {
    if m.rows() != m.cols() {
        return Err(Error::dims(
            "polar factor",
            "square matrix",
            format!("{}x{}", m.rows(), m.cols()),
        ));
    }
    let dec = svd(m)?;
    OrthogonalMatrix::new(&dec.u * &dec.v_t)
}

/// Haar-distributed orthogonal matrix: QR of a standard-Gaussian matrix with
/// the columns of Q multiplied by the signs of R's diagonal.
pub fn random_orthogonal(dim: usize, seed: u64) -> OrthogonalMatrix {
    assert!(dim >= 1, "dimension must be positive");
    let mut rng = sampling::rng(seed);
    let g = sampling::gaussian_matrix(&mut rng, dim, dim);
    let qr = g.0.qr();
    let r = qr.r();
    let mut q = qr.q();
    for k in 0..dim {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    OrthogonalMatrix(Matrix(q))
}

/// Project each column onto the top-`k` principal directions of the
/// mean-centred column cloud. Returns a `k × n` coordinate matrix.
///
/// Directions whose singular value is numerically zero give zero
/// coordinates.
pub fn pca_project(columns: &Matrix, k: usize) -> Result<Matrix> {
    let (rows, n) = columns.shape();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "PCA needs at least 2 columns, got {n}"
        )));
    }
    if k == 0 || k > rows.min(n) {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must lie in 1..={}",
            rows.min(n)
        )));
    }
    let mean = columns.0.column_mean();
    let mut centered = columns.0.clone();
    for mut c in centered.column_iter_mut() {
        c -= &mean;
    }
    let centered = Matrix(centered);
    let dec = svd(&centered)?;
    let tol = default_rank_threshold(rows, n, dec.sigma_max());
    let mut out = DMatrix::zeros(k, n);
    for comp in 0..k {
        if dec.singular_values[comp] <= tol {
            continue;
        }
        let dir = dec.u.0.column(comp);
        for j in 0..n {
            out[(comp, j)] = dir.dot(&centered.0.column(j));
        }
    }
    Matrix::from_nalgebra(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{gaussian_matrix, rng};

    fn rel_recon_err(m: &Matrix, d: &SvdResult) -> f64 {
        frobenius_norm(&(&d.reconstruct() - m)) / d.sigma_max().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn svd_identity() {
        let d = svd(&Matrix::identity(3)).unwrap();
        assert_eq!(d.singular_values, vec![1.0, 1.0, 1.0]);
        assert!(d.u.max_abs_diff(&Matrix::identity(3)) < 1e-15);
        assert!(d.v_t.max_abs_diff(&Matrix::identity(3)) < 1e-15);
    }

    #[test]
    fn svd_diagonal_sorted() {
        let d = svd(&Matrix::diag(&[2.0, 3.0])).unwrap();
        assert_eq!(d.singular_values, vec![3.0, 2.0]);
        let d = svd(&Matrix::diag(&[3.0, -2.0])).unwrap();
        assert_eq!(d.singular_values, vec![3.0, 2.0]);
    }

    #[test]
    fn svd_random_5x3_seed42() {
        let m = gaussian_matrix(&mut rng(42), 5, 3);
        let d = svd(&m).unwrap();
        assert_eq!(d.u.shape(), (5, 3));
        assert_eq!(d.v_t.shape(), (3, 3));
        assert!(rel_recon_err(&m, &d) < 1e-10);
        assert!(d.u.orthogonality_error() < 1e-10);
        assert!(d.v_t.transpose().orthogonality_error() < 1e-10);
        assert!(d.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn svd_sign_convention() {
        let m = gaussian_matrix(&mut rng(9), 4, 6);
        let d = svd(&m).unwrap();
        for k in 0..d.singular_values.len() {
            let col = d.u.column(k);
            let mut best = 0;
            for i in 0..col.len() {
                if col[i].abs() > col[best].abs() {
                    best = i;
                }
            }
            assert!(col[best] >= 0.0);
        }
        let again = svd(&m).unwrap();
        assert_eq!(d.u.to_bytes(), again.u.to_bytes());
        assert_eq!(d.v_t.to_bytes(), again.v_t.to_bytes());
    }

    #[test]
    fn svd_rejects_empty() {
        assert!(svd(&Matrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn frobenius_examples() {
        assert!((frobenius_norm(&Matrix::identity(3)) - 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(frobenius_norm(&Matrix::zeros(4, 4)), 0.0);
        let m = Matrix::from_row_major(1, 2, vec![3.0, 4.0]).unwrap();
        assert_eq!(frobenius_norm(&m), 5.0);
    }

    #[test]
    fn pinv_examples() {
        let p = pseudo_inverse(&Matrix::diag(&[2.0, 0.0]), 0.0).unwrap();
        assert!(p.max_abs_diff(&Matrix::diag(&[0.5, 0.0])) < 1e-15);
        let p = pseudo_inverse(&Matrix::identity(4), 0.0).unwrap();
        assert!(p.max_abs_diff(&Matrix::identity(4)) < 1e-15);
        let z = pseudo_inverse(&Matrix::zeros(2, 3), 0.0).unwrap();
        assert_eq!(z, Matrix::zeros(3, 2));
        assert!(pseudo_inverse(&Matrix::identity(2), -1.0).is_err());
    }

    #[test]
    fn pinv_rank2_seed7() {
        let mut r = rng(7);
        let a = gaussian_matrix(&mut r, 4, 2);
        let b = gaussian_matrix(&mut r, 2, 4);
        let m = &a * &b;
        let p = pseudo_inverse(&m, 0.0).unwrap();
        let back = &(&m * &p) * &m;
        assert!(back.max_abs_diff(&m) < 1e-8);
    }

    #[test]
    fn condition_examples() {
        assert!((condition_number(&Matrix::identity(5)).unwrap() - 1.0).abs() < 1e-12);
        assert!((condition_number(&Matrix::diag(&[2.0, 1.0])).unwrap() - 2.0).abs() < 1e-12);
        let q = random_orthogonal(16, 4);
        assert!((condition_number(q.matrix()).unwrap() - 1.0).abs() < 1e-10);
        assert!(matches!(
            condition_number(&Matrix::zeros(3, 3)),
            Err(Error::Domain(_))
        ));
        // rank-deficient: only the nonzero part counts
        assert!((condition_number(&Matrix::diag(&[4.0, 2.0, 0.0])).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn random_orthogonal_examples() {
        for seed in 0..10 {
            let r = random_orthogonal(1, seed);
            assert_eq!(r.matrix().get(0, 0).abs(), 1.0);
        }
        assert!(random_orthogonal(8, 1).orthogonality_error() < 1e-10);
        let a = random_orthogonal(3, 2);
        let b = random_orthogonal(3, 3);
        assert!(a.matrix().max_abs_diff(b.matrix()) > 1e-3);
        assert_eq!(random_orthogonal(6, 11), random_orthogonal(6, 11));
    }

    #[test]
    fn orthogonal_rejects_non_orthogonal() {
        assert!(OrthogonalMatrix::new(Matrix::diag(&[1.0, 2.0])).is_err());
        assert!(OrthogonalMatrix::new(Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn nearest_orthogonal_fixes_drift() {
        let q = random_orthogonal(10, 3);
        let noisy = &q.matrix().scale(1.0 + 1e-9) + &Matrix::identity(10).scale(1e-9);
        let fixed = nearest_orthogonal(&noisy).unwrap();
        assert!(fixed.orthogonality_error() < 1e-13);
        assert!(fixed.matrix().max_abs_diff(q.matrix()) < 1e-8);
    }

    #[test]
    fn pca_identical_columns_project_to_zero() {
        let col = vec![1.0, -2.0, 0.5];
        let m = Matrix::from_columns(3, &vec![col; 5]).unwrap();
        let p = pca_project(&m, 2).unwrap();
        assert_eq!(p.max_abs(), 0.0);
    }

    #[test]
    fn pca_rank_one_cloud() {
        let cols: Vec<Vec<f64>> = (0..7)
            .map(|i| vec![i as f64 - 1.5, i as f64 - 1.5])
            .collect();
        let m = Matrix::from_columns(2, &cols).unwrap();
        let p = pca_project(&m, 2).unwrap();
        for j in 0..7 {
            assert!(p.get(1, j).abs() < 1e-10);
        }
    }

    #[test]
    fn pca_rejects_bad_k() {
        let m = gaussian_matrix(&mut rng(1), 3, 5);
        assert!(pca_project(&m, 0).is_err());
        assert!(pca_project(&m, 4).is_err());
        let one = gaussian_matrix(&mut rng(1), 3, 1);
        assert!(pca_project(&one, 1).is_err());
    }

    #[test]
    fn matrix_rejects_non_finite() {
        assert!(Matrix::from_row_major(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::from_row_major(1, 2, vec![1.0]).is_err());
    }

    #[test]
    fn matrix_json_layout() {
        let m = Matrix::from_row_major(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, r#"{"rows":2,"cols":2,"data":[1.0,2.0,3.0,4.0]}"#);
        let back: Matrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<Matrix>(r#"{"rows":2,"cols":2,"data":[1.0]}"#).is_err());
    }
}
