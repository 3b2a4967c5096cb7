//! Geometry of the manifold of symmetric positive-definite matrices under the
//! affine-invariant metric.
//!
//! Points are [`SpdMatrix`] values, tangent vectors are [`SymMatrix`] values and
//! [`TangentVector`] is the minimal coordinate form consumed by regressors.
//! All matrix functions go through a symmetric eigendecomposition.

mod functions;
mod riemann;

pub use functions::{
    matrix_exp, matrix_log, spd_sqrt_pair, spectral_decompose, SpectralDecomposition,
};
pub use riemann::{
    exp_map, geodesic_distance, karcher_mean, karcher_mean_with_report, log_map, log_map_count,
    KarcherOptions, KarcherReport, TangentPole,
};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Relative tolerance for the symmetry check on construction.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Eigenvalues below this fraction of the largest eigenvalue are treated as zero.
pub const EIGENVALUE_FLOOR: f64 = 1e-12;

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            actual: m.ncols(),
        });
    }
    if m.nrows() == 0 {
        return Err(Error::EmptyInput("zero-dimensional matrix"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "matrix has non-finite entries".into(),
        ));
    }
    let scale = m.amax();
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOLERANCE * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

/// A real symmetric matrix, e.g. a tangent vector at some pole.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Validates symmetry and stores the exactly-symmetrized matrix.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&m)?;
        Ok(Self(symmetrize(&m)))
    }

    pub fn from_row_slice(dim: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                actual: entries.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(
            diag,
        )))
    }

    /// Caller guarantees `m` is square and exactly symmetric.
    pub(crate) fn from_symmetric_unchecked(m: DMatrix<f64>) -> Self {
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self(&self.0 * factor)
    }

    pub fn add(&self, other: &SymMatrix) -> Result<Self> {
        check_dims(self.dim(), other.dim())?;
        Ok(Self(&self.0 + &other.0))
    }
}

/// A symmetric positive-definite matrix: a point on the manifold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    /// Validates symmetry and positive definiteness.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&m)?;
        let m = symmetrize(&m);
        if m.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self(m))
    }

    pub fn from_row_slice(dim: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                actual: entries.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(
            diag,
        )))
    }

    /// Caller guarantees `m` is exactly symmetric with a positive spectrum.
    pub(crate) fn from_spd_unchecked(m: DMatrix<f64>) -> Self {
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Reinterprets the point as a (symmetric) matrix without any projection.
    pub fn to_sym(&self) -> SymMatrix {
        SymMatrix(self.0.clone())
    }

    /// Row-major copy of the entries.
    pub fn to_row_major(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    dim: usize,
    entries: Vec<f64>,
}

impl From<SpdMatrix> for MatrixRepr {
    fn from(m: SpdMatrix) -> Self {
        MatrixRepr {
            dim: m.dim(),
            entries: m.to_row_major(),
        }
    }
}

impl TryFrom<MatrixRepr> for SpdMatrix {
    type Error = Error;

    fn try_from(r: MatrixRepr) -> Result<Self> {
        SpdMatrix::from_row_slice(r.dim, &r.entries)
    }
}

pub fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Minimal coordinates of a symmetric matrix: the upper triangle in row-major
/// order with off-diagonal entries scaled by √2, so that the Euclidean norm
/// equals the Frobenius norm of the matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    dim: usize,
    coords: Vec<f64>,
}

impl TangentVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        let dim = triangular_root(coords.len()).ok_or(Error::BadLength(coords.len()))?;
        Ok(Self { dim, coords })
    }

    /// Matrix dimension d of the underlying symmetric matrix.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn norm(&self) -> f64 {
        self.coords.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

/// Length of the minimal coordinate vector for a d×d symmetric matrix.
pub const fn tangent_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

fn triangular_root(len: usize) -> Option<usize> {
    if len == 0 {
        return None;
    }
    let mut d = ((2.0 * len as f64).sqrt()) as usize;
    while tangent_len(d) < len {
        d += 1;
    }
    while d > 0 && tangent_len(d) > len {
        d -= 1;
    }
    (tangent_len(d) == len).then_some(d)
}

pub fn vectorize(m: &SymMatrix) -> TangentVector {
    let d = m.dim();
    let mut coords = Vec::with_capacity(tangent_len(d));
    for i in 0..d {
        coords.push(m.0[(i, i)]);
        for j in (i + 1)..d {
            coords.push(m.0[(i, j)] * std::f64::consts::SQRT_2);
        }
    }
    TangentVector { dim: d, coords }
}

pub fn unvectorize(v: &TangentVector) -> Result<SymMatrix> {
    let d = triangular_root(v.coords.len()).ok_or(Error::BadLength(v.coords.len()))?;
    let mut m = DMatrix::zeros(d, d);
    let mut it = v.coords.iter();
    for i in 0..d {
        m[(i, i)] = *it.next().expect("length checked");
        for j in (i + 1)..d {
            let x = *it.next().expect("length checked") / std::f64::consts::SQRT_2;
            m[(i, j)] = x;
            m[(j, i)] = x;
        }
    }
    Ok(SymMatrix(m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vectorize_two_by_two() {
        let m = SymMatrix::from_row_slice(2, &[1.5, -0.25, -0.25, 3.0]).unwrap();
        let v = vectorize(&m);
        assert_eq!(v.coords(), &[1.5, -0.25 * std::f64::consts::SQRT_2, 3.0]);
        assert_eq!(v.dim(), 2);
    }

    #[test]
    fn vectorize_zero_eight() {
        let v = vectorize(&SymMatrix::zeros(8));
        assert_eq!(v.len(), 36);
        assert!(v.coords().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn unvectorize_inverts() {
        let s2 = std::f64::consts::SQRT_2;
        let m = unvectorize(&TangentVector::new(vec![1.0, 2.0 * s2, 3.0]).unwrap()).unwrap();
        assert_eq!(
            m.as_matrix(),
            &DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0])
        );

        let m =
            SymMatrix::from_row_slice(3, &[1.0, 0.3, -2.0, 0.3, 4.0, 0.7, -2.0, 0.7, 5.0]).unwrap();
        assert_eq!(unvectorize(&vectorize(&m)).unwrap(), m);
    }

    #[test]
    fn bad_length() {
        assert!(matches!(
            TangentVector::new(vec![0.0; 5]),
            Err(Error::BadLength(5))
        ));
        assert!(matches!(
            TangentVector::new(vec![]),
            Err(Error::BadLength(0))
        ));
        for d in 1..12 {
            assert_eq!(triangular_root(tangent_len(d)), Some(d));
        }
    }

    #[test]
    fn construction_checks() {
        assert!(matches!(
            SymMatrix::from_row_slice(2, &[1.0, 0.5, 0.4, 1.0]),
            Err(Error::NotSymmetric { .. })
        ));
        assert!(matches!(
            SpdMatrix::from_diagonal(&[1.0, -1.0]),
            Err(Error::NotPositiveDefinite)
        ));
        assert!(matches!(
            SpdMatrix::from_diagonal(&[1.0, 0.0]),
            Err(Error::NotPositiveDefinite)
        ));
        assert!(SpdMatrix::from_row_slice(2, &[2.0, 1.0, 1.0, 2.0]).is_ok());
        // asymmetry within the relative tolerance is absorbed
        let m = SpdMatrix::from_row_slice(2, &[2.0, 1.0, 1.0 + 1e-12, 2.0]).unwrap();
        assert_eq!(m.as_matrix()[(0, 1)], m.as_matrix()[(1, 0)]);
    }

    #[test]
    fn serde_roundtrip_is_exact() {
        let m = SpdMatrix::from_row_slice(2, &[2.0 / 3.0, 0.1, 0.1, std::f64::consts::PI]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        let back: SpdMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        let bad = r#"{"dim":2,"entries":[1.0,0.0,0.0,-1.0]}"#;
        assert!(serde_json::from_str::<SpdMatrix>(bad).is_err());
    }
}
