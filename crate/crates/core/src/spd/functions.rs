use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{symmetrize, SpdMatrix, SymMatrix, EIGENVALUE_FLOOR};
use crate::{Error, Result};

const EIGEN_MAX_SWEEPS: usize = 10_000;

/// Eigenpairs of a symmetric matrix, eigenvalues sorted ascending.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    eigvals: DVector<f64>,
    eigvecs: DMatrix<f64>,
}

impl SpectralDecomposition {
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigvals
    }

    /// Columns are the unit eigenvectors, in the order of [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigvecs
    }

    /// U·diag(f(λ))·Uᵀ, symmetrized.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.eigvecs.clone();
        for (j, &lambda) in self.eigvals.iter().enumerate() {
            let fl = f(lambda);
            scaled.column_mut(j).scale_mut(fl);
        }
        symmetrize(&(scaled * self.eigvecs.transpose()))
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.map_spectrum(|l| l)
    }

    fn min_eigenvalue(&self) -> f64 {
        self.eigvals[0]
    }

    fn max_eigenvalue(&self) -> f64 {
        self.eigvals[self.eigvals.len() - 1]
    }

    /// Rejects spectra whose smallest eigenvalue is not clearly positive.
    fn check_positive(&self) -> Result<()> {
        let max = self.max_eigenvalue();
        if !(max > 0.0) || self.min_eigenvalue() <= EIGENVALUE_FLOOR * max {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(())
    }
}

pub(crate) fn decompose_matrix(m: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonConvergence("symmetric eigendecomposition"));
    }
    let eig = SymmetricEigen::try_new(symmetrize(m), f64::EPSILON, EIGEN_MAX_SWEEPS)
        .ok_or(Error::NonConvergence("symmetric eigendecomposition"))?;
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep solver order
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigvals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigvecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigvecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SpectralDecomposition { eigvals, eigvecs })
}

pub fn spectral_decompose(m: &SymMatrix) -> Result<SpectralDecomposition> {
    decompose_matrix(m.as_matrix())
}

pub fn matrix_exp(m: &SymMatrix) -> Result<SpdMatrix> {
    let dec = spectral_decompose(m)?;
    exp_from_decomposition(&dec)
}

pub(crate) fn exp_from_decomposition(dec: &SpectralDecomposition) -> Result<SpdMatrix> {
    let exps: Vec<f64> = dec.eigvals.iter().map(|l| l.exp()).collect();
    if exps.iter().any(|e| !e.is_finite() || *e == 0.0) {
        return Err(Error::Overflow);
    }
    Ok(SpdMatrix::from_spd_unchecked(dec.map_spectrum(f64::exp)))
}

pub fn matrix_log(m: &SpdMatrix) -> Result<SymMatrix> {
    let dec = decompose_matrix(m.as_matrix())?;
    log_from_decomposition(&dec)
}

pub(crate) fn log_from_decomposition(dec: &SpectralDecomposition) -> Result<SymMatrix> {
    dec.check_positive()?;
    Ok(SymMatrix::from_symmetric_unchecked(
        dec.map_spectrum(f64::ln),
    ))
}

/// (X^{1/2}, X^{-1/2}) from a single eigendecomposition.
pub fn spd_sqrt_pair(x: &SpdMatrix) -> Result<(SpdMatrix, SpdMatrix)> {
    let dec = decompose_matrix(x.as_matrix())?;
    dec.check_positive()?;
    let sqrt = dec.map_spectrum(f64::sqrt);
    let inv_sqrt = dec.map_spectrum(|l| 1.0 / l.sqrt());
    Ok((
        SpdMatrix::from_spd_unchecked(sqrt),
        SpdMatrix::from_spd_unchecked(inv_sqrt),
    ))
}
