//! Dense real matrix kernel shared by every other module.
//!
//! Everything here is small and dense: symmetric carriers, eigendecompositions,
//! PSD square roots, Kronecker products and column-major vectorization.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EIG_EPS: f64 = 1e-15;
const EIG_MAX_ITER: usize = 10_000;

/// Relative threshold used by [`SymMatrix::is_psd`].
pub const PSD_TOL: f64 = 1e-9;

/// A real symmetric matrix. The stored entries are always exactly symmetric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DMatrix<f64>", into = "DMatrix<f64>")]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Symmetrizes `m` as `(m + mᵀ)/2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::shape(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::shape("symmetric matrix must have dimension >= 1"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("matrix has non-finite entries"));
        }
        Ok(Self::symmetrize(m))
    }

    fn symmetrize(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    /// Wraps the symmetric part of a matrix produced internally.
    /// Panics on a non-square argument.
    pub(crate) fn from_square(m: DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "from_square needs a square matrix");
        Self::symmetrize(m)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(matrix_from_rows(rows)?)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scale(&self, a: f64) -> Self {
        SymMatrix(&self.0 * a)
    }

    pub fn add(&self, other: &SymMatrix) -> Self {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> Self {
        SymMatrix(&self.0 - &other.0)
    }

    /// `self + a·I`
    pub fn shift(&self, a: f64) -> Self {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += a;
        }
        SymMatrix(m)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// `xᵀ M x`
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.0 * x))
    }

    pub fn eigenvalues(&self) -> Result<DVector<f64>> {
        Ok(sym_eig(self)?.values)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.eigenvalues()?[0])
    }

    /// PSD within the scale-aware tolerance `λ_min ≥ −1e-9·max(1, λ_max)`.
    pub fn is_psd(&self) -> Result<bool> {
        let ev = self.eigenvalues()?;
        let lmax = ev[ev.len() - 1];
        Ok(ev[0] >= -PSD_TOL * lmax.max(1.0))
    }

    /// Strictly positive definite with margin `tol`.
    pub fn is_pd(&self, tol: f64) -> Result<bool> {
        Ok(self.min_eigenvalue()? > tol)
    }

    /// Inverse via Cholesky; fails when the matrix is not positive definite.
    pub fn inverse_pd(&self) -> Result<SymMatrix> {
        let chol = self
            .0
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("Cholesky factorization failed".into()))?;
        Ok(SymMatrix::symmetrize(chol.inverse()))
    }
}

impl TryFrom<DMatrix<f64>> for SymMatrix {
    type Error = Error;

    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        SymMatrix::new(m)
    }
}

impl From<SymMatrix> for DMatrix<f64> {
    fn from(s: SymMatrix) -> Self {
        s.0
    }
}

impl AsRef<DMatrix<f64>> for SymMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Eigendecomposition of a symmetric matrix with ascending eigenvalues.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: DVector<f64>,
    /// Orthogonal matrix whose columns are the matching eigenvectors.
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.vectors * DMatrix::from_diagonal(&self.values) * self.vectors.transpose()
    }
}

pub fn sym_eig(m: &SymMatrix) -> Result<SymEigen> {
    let eig = SymmetricEigen::try_new(m.0.clone(), EIG_EPS, EIG_MAX_ITER).ok_or_else(|| {
        Error::Numerical("symmetric eigendecomposition did not converge".into())
    })?;
    let n = m.dim();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEigen { values, vectors })
}

/// Symmetric PSD square root. Eigenvalues down to `−1e-10·max(1, λ_max)` are
/// clipped to zero; anything more negative is a domain error.
pub fn psd_sqrt(m: &SymMatrix) -> Result<SymMatrix> {
    let eig = sym_eig(m)?;
    let n = m.dim();
    let lmax = eig.values[n - 1];
    let lmin = eig.values[0];
    if lmin < -1e-10 * lmax.abs().max(1.0) {
        return Err(Error::Domain(format!(
            "matrix is indefinite (min eigenvalue {lmin:.3e}); no PSD square root"
        )));
    }
    let roots = eig.values.map(|v| v.max(0.0).sqrt());
    let r = &eig.vectors * DMatrix::from_diagonal(&roots) * eig.vectors.transpose();
    Ok(SymMatrix::symmetrize(r))
}

/// Kronecker product with the standard block layout `[a_ij · b]`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            out.view_mut((i * br, j * bc), (br, bc))
                .copy_from(&(b * aij));
        }
    }
    out
}

/// Column-stacking vectorization.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`] for a matrix with `rows` rows.
pub fn unvec(v: &DVector<f64>, rows: usize) -> Result<DMatrix<f64>> {
    if rows == 0 || v.len() % rows != 0 {
        return Err(Error::shape(format!(
            "cannot reshape a vector of length {} into {rows} rows",
            v.len()
        )));
    }
    Ok(DMatrix::from_column_slice(rows, v.len() / rows, v.as_slice()))
}

/// Largest eigenvalue modulus of a general square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::shape("spectral radius needs a square matrix"));
    }
    if m.nrows() == 1 {
        return Ok(m[(0, 0)].abs());
    }
    let scale = m.amax();
    if scale == 0.0 {
        return Ok(0.0);
    }
    let schur = Schur::try_new(m / scale, f64::EPSILON, EIG_MAX_ITER)
        .ok_or_else(|| Error::Numerical("Schur decomposition did not converge".into()))?;
    Ok(scale
        * schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max))
}

/// Builds a dense matrix from row-major nested vectors.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    if nr == 0 {
        return Err(Error::shape("matrix has no rows"));
    }
    let nc = rows[0].len();
    if nc == 0 {
        return Err(Error::shape("matrix has no columns"));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != nc) {
        return Err(Error::shape(format!(
            "ragged matrix: row {bad} has {} entries, expected {nc}",
            rows[bad].len()
        )));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

/// Row-major nested vectors, the inverse of [`matrix_from_rows`].
pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    #[test]
    fn eig_identity_and_diagonal() {
        let e = sym_eig(&SymMatrix::identity(2)).unwrap();
        assert_eq!(e.values.as_slice(), &[1.0, 1.0]);

        let e = sym_eig(&SymMatrix::from_diagonal(&[3.0, 1.0])).unwrap();
        assert_relative_eq!(e.values[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(e.values[1], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn eig_two_by_two() {
        // (2-λ)² - 1 = 0  ⇒  λ ∈ {1, 3}
        let m = SymMatrix::new(dmatrix![2.0, 1.0; 1.0, 2.0]).unwrap();
        let e = sym_eig(&m).unwrap();
        assert_relative_eq!(e.values[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(e.values[1], 3.0, epsilon = 1e-12);
        assert!((e.reconstruct() - m.as_matrix()).norm() < 1e-12);
    }

    #[test]
    fn constructor_symmetrizes() {
        let m = SymMatrix::new(dmatrix![1.0, 2.0; 0.0, 1.0]).unwrap();
        assert_eq!(m.as_matrix()[(0, 1)], 1.0);
        assert_eq!(m.as_matrix()[(1, 0)], 1.0);
        assert!(SymMatrix::new(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn sqrt_cases() {
        let r = psd_sqrt(&SymMatrix::identity(3)).unwrap();
        assert!((r.as_matrix() - DMatrix::identity(3, 3)).norm() < 1e-14);

        let r = psd_sqrt(&SymMatrix::from_diagonal(&[4.0, 9.0])).unwrap();
        assert_relative_eq!(r.as_matrix()[(0, 0)], 2.0, epsilon = 1e-14);
        assert_relative_eq!(r.as_matrix()[(1, 1)], 3.0, epsilon = 1e-14);

        let m = SymMatrix::new(dmatrix![2.0, 1.0; 1.0, 2.0]).unwrap();
        let r = psd_sqrt(&m).unwrap();
        let sq = r.as_matrix() * r.as_matrix();
        assert!((sq - m.as_matrix()).norm() <= 1e-9 * (1.0 + m.as_matrix().norm()));
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let m = SymMatrix::from_diagonal(&[1.0, -0.5]);
        assert!(matches!(psd_sqrt(&m), Err(Error::Domain(_))));
        // tiny negative eigenvalues are clipped
        let m = SymMatrix::from_diagonal(&[1.0, -1e-13]);
        assert!(psd_sqrt(&m).is_ok());
    }

    #[test]
    fn kron_cases() {
        let p = dmatrix![1.0, 2.0; 2.0, 5.0];
        let k = kron(&DMatrix::identity(2, 2), &p);
        let mut expected = DMatrix::zeros(4, 4);
        expected.view_mut((0, 0), (2, 2)).copy_from(&p);
        expected.view_mut((2, 2), (2, 2)).copy_from(&p);
        assert_eq!(k, expected);

        assert_eq!(kron(&dmatrix![1.0], &p), p);

        let a = dmatrix![1.0, 2.0; 3.0, 4.0];
        let b = dmatrix![0.0, 1.0; 1.0, 0.0];
        let k = kron(&a, &b);
        for i in 0..2 {
            for j in 0..2 {
                for r in 0..2 {
                    for s in 0..2 {
                        assert_eq!(k[(2 * i + r, 2 * j + s)], a[(i, j)] * b[(r, s)]);
                    }
                }
            }
        }
    }

    #[test]
    fn vec_column_major() {
        let m = dmatrix![1.0, 2.0; 3.0, 4.0];
        assert_eq!(vec(&m).as_slice(), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(unvec(&vec(&m), 2).unwrap(), m);
        let one = dmatrix![7.0];
        assert_eq!(unvec(&vec(&one), 1).unwrap(), one);
        assert!(unvec(&DVector::zeros(5), 2).is_err());
    }

    #[test]
    fn spectral_radius_rotation() {
        // eigenvalues ±i·0.5 scaled rotation
        let m = dmatrix![0.0, -0.5; 0.5, 0.0];
        assert_relative_eq!(spectral_radius(&m).unwrap(), 0.5, epsilon = 1e-12);
    }

    fn small_matrix(r: usize, c: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-2.0..2.0f64, r * c)
            .prop_map(move |v| DMatrix::from_vec(r, c, v))
    }

    proptest! {
        #[test]
        fn eig_sum_is_trace(m in small_matrix(4, 4)) {
            let s = SymMatrix::from_square(m);
            let e = sym_eig(&s).unwrap();
            let tr = s.trace();
            prop_assert!((e.values.sum() - tr).abs() <= 1e-10 * (1.0 + tr.abs()));
            let fro = s.as_matrix().norm();
            prop_assert!((e.reconstruct() - s.as_matrix()).norm() <= 1e-10 * (1.0 + fro));
            for i in 1..4 {
                prop_assert!(e.values[i - 1] <= e.values[i]);
            }
        }

        #[test]
        fn sqrt_diagonal_is_entrywise(d in proptest::collection::vec(0.0..50.0f64, 3)) {
            let r = psd_sqrt(&SymMatrix::from_diagonal(&d)).unwrap();
            for i in 0..3 {
                prop_assert!((r.as_matrix()[(i, i)] - d[i].sqrt()).abs() < 1e-12);
            }
        }

        #[test]
        fn kron_mixed_product(a in small_matrix(2, 3), b in small_matrix(2, 2),
                              c in small_matrix(3, 2), d in small_matrix(2, 3)) {
            let lhs = kron(&a, &b) * kron(&c, &d);
            let rhs = kron(&(&a * &c), &(&b * &d));
            prop_assert!((lhs - rhs).norm() < 1e-10);
        }

        #[test]
        fn vec_roundtrip(m in small_matrix(3, 3)) {
            prop_assert_eq!(unvec(&vec(&m), 3).unwrap(), m);
        }
    }
}
