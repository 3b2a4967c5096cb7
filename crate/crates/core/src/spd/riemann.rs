use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;

use super::functions::{
    decompose_matrix, exp_from_decomposition, log_from_decomposition, spd_sqrt_pair,
};
use super::{check_dims, symmetrize, SpdMatrix, SymMatrix, EIGENVALUE_FLOOR};
use crate::{Error, Result};

static LOG_MAP_CALLS: AtomicU64 = AtomicU64::new(0);

/// Process-wide number of logarithm-map evaluations so far. Diagnostic only.
pub fn log_map_count() -> u64 {
    LOG_MAP_CALLS.load(Ordering::Relaxed)
}

/// A manifold point together with its square root and inverse square root,
/// so repeated maps and distances at the same pole cost one eigendecomposition
/// each instead of three.
#[derive(Clone, Debug)]
pub struct TangentPole {
    point: SpdMatrix,
    sqrt: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
}

impl TangentPole {
    pub fn new(point: SpdMatrix) -> Result<Self> {
        let (sqrt, inv_sqrt) = spd_sqrt_pair(&point)?;
        Ok(Self {
            point,
            sqrt: sqrt.into_matrix(),
            inv_sqrt: inv_sqrt.into_matrix(),
        })
    }

    pub fn point(&self) -> &SpdMatrix {
        &self.point
    }

    pub fn dim(&self) -> usize {
        self.point.dim()
    }

    /// X^{-1/2}·M·X^{-1/2}
    pub fn whiten(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        symmetrize(&(&self.inv_sqrt * m * &self.inv_sqrt))
    }

    /// X^{1/2}·M·X^{1/2}
    pub fn color(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        symmetrize(&(&self.sqrt * m * &self.sqrt))
    }

    pub fn log_map(&self, y: &SpdMatrix) -> Result<SymMatrix> {
        check_dims(self.dim(), y.dim())?;
        LOG_MAP_CALLS.fetch_add(1, Ordering::Relaxed);
        let dec = decompose_matrix(&self.whiten(y.as_matrix()))?;
        let inner = log_from_decomposition(&dec)?;
        Ok(SymMatrix::from_symmetric_unchecked(
            self.color(inner.as_matrix()),
        ))
    }

    pub fn exp_map(&self, v: &SymMatrix) -> Result<SpdMatrix> {
        check_dims(self.dim(), v.dim())?;
        let dec = decompose_matrix(&self.whiten(v.as_matrix()))?;
        let inner = exp_from_decomposition(&dec)?;
        Ok(SpdMatrix::from_spd_unchecked(self.color(inner.as_matrix())))
    }

    /// Affine-invariant geodesic distance from the pole to `y`.
    pub fn distance(&self, y: &SpdMatrix) -> Result<f64> {
        check_dims(self.dim(), y.dim())?;
        let eig = self.whiten(y.as_matrix()).symmetric_eigenvalues();
        let max = eig.max();
        if !(max > 0.0) || eig.iter().any(|&l| l <= EIGENVALUE_FLOOR * max) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(eig.iter().map(|l| l.ln().powi(2)).sum::<f64>().sqrt())
    }
}

pub fn exp_map(pole: &SpdMatrix, y: &SymMatrix) -> Result<SpdMatrix> {
    check_dims(pole.dim(), y.dim())?;
    TangentPole::new(pole.clone())?.exp_map(y)
}

pub fn log_map(pole: &SpdMatrix, y: &SpdMatrix) -> Result<SymMatrix> {
    check_dims(pole.dim(), y.dim())?;
    TangentPole::new(pole.clone())?.log_map(y)
}

/// sqrt(trace(log²(X^{-1/2} Y X^{-1/2})))
pub fn geodesic_distance(x: &SpdMatrix, y: &SpdMatrix) -> Result<f64> {
    check_dims(x.dim(), y.dim())?;
    TangentPole::new(x.clone())?.distance(y)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KarcherOptions {
    /// Stop once the Frobenius norm of the mean tangent update falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for KarcherOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 50,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KarcherReport {
    pub mean: SpdMatrix,
    /// Number of exponential-map updates applied.
    pub iterations: usize,
    /// Frobenius norm of the mean log-map at the returned point.
    pub residual: f64,
    pub converged: bool,
}

pub fn karcher_mean(points: &[SpdMatrix], opts: &KarcherOptions) -> Result<SpdMatrix> {
    karcher_mean_with_report(points, opts).map(|r| r.mean)
}

/// Fixed-point iteration μ ← exp_μ(N⁻¹ Σ log_μ(X_i)), started from the
/// arithmetic mean.
pub fn karcher_mean_with_report(
    points: &[SpdMatrix],
    opts: &KarcherOptions,
) -> Result<KarcherReport> {
    let first = points
        .first()
        .ok_or(Error::EmptyInput("karcher mean of no points"))?;
    let dim = first.dim();
    for p in points {
        check_dims(dim, p.dim())?;
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "karcher tol must be positive, got {}",
            opts.tol
        )));
    }
    let n = points.len() as f64;

    let mut sum = DMatrix::zeros(dim, dim);
    for p in points {
        sum += p.as_matrix();
    }
    let mut mean = SpdMatrix::from_spd_unchecked(symmetrize(&(sum / n)));

    for iteration in 0..=opts.max_iter {
        let pole = TangentPole::new(mean)?;
        let mut step = DMatrix::zeros(dim, dim);
        for p in points {
            step += pole.log_map(p)?.as_matrix();
        }
        step /= n;
        let residual = step.norm();
        if residual < opts.tol || iteration == opts.max_iter {
            let converged = residual < opts.tol;
            if !converged && residual > 100.0 * opts.tol {
                return Err(Error::NonConvergence("karcher mean"));
            }
            return Ok(KarcherReport {
                mean: pole.point,
                iterations: iteration,
                residual,
                converged,
            });
        }
        mean = pole.exp_map(&SymMatrix::from_symmetric_unchecked(step))?;
    }
    unreachable!("loop returns on its last iteration")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spd::{matrix_exp, matrix_log, vectorize};
    use std::f64::consts::E;

    fn sample_spd(dim: usize, seed: u64) -> SpdMatrix {
        // deterministic, well-conditioned: A Aᵀ + I with a simple LCG
        let mut state = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let a = DMatrix::from_fn(dim, dim, |_, _| next());
        SpdMatrix::new(&a * a.transpose() + DMatrix::identity(dim, dim)).unwrap()
    }

    fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn maps_at_identity_reduce_to_matrix_functions() {
        let s = SymMatrix::from_row_slice(2, &[0.3, -0.7, -0.7, 1.1]).unwrap();
        let i = SpdMatrix::identity(2);
        let a = exp_map(&i, &s).unwrap();
        let b = matrix_exp(&s).unwrap();
        assert!(rel(a.as_matrix(), b.as_matrix()) < 1e-14);

        let y = sample_spd(3, 1);
        let a = log_map(&SpdMatrix::identity(3), &y).unwrap();
        let b = matrix_log(&y).unwrap();
        assert!(rel(a.as_matrix(), b.as_matrix()) < 1e-13);
    }

    #[test]
    fn zero_tangent_and_self_log() {
        let x = sample_spd(4, 2);
        let back = exp_map(&x, &SymMatrix::zeros(4)).unwrap();
        assert!(rel(back.as_matrix(), x.as_matrix()) < 1e-13);
        let zero = log_map(&x, &x).unwrap();
        assert!(zero.as_matrix().amax() < 1e-12);
    }

    #[test]
    fn exp_inverts_log() {
        let x = sample_spd(3, 3);
        let y = sample_spd(3, 4);
        let v = log_map(&x, &y).unwrap();
        let back = exp_map(&x, &v).unwrap();
        assert!(rel(back.as_matrix(), y.as_matrix()) < 1e-12);
    }

    #[test]
    fn whitened_log_norm_is_distance() {
        let x = sample_spd(3, 5);
        let y = sample_spd(3, 6);
        let pole = TangentPole::new(x.clone()).unwrap();
        let v = pole.log_map(&y).unwrap();
        let whitened = SymMatrix::from_symmetric_unchecked(pole.whiten(v.as_matrix()));
        let d = geodesic_distance(&x, &y).unwrap();
        assert!((whitened.frobenius_norm() - d).abs() < 1e-12);
        assert!((vectorize(&whitened).norm() - d).abs() < 1e-12);
    }

    #[test]
    fn distance_examples() {
        let x = sample_spd(3, 7);
        assert!(geodesic_distance(&x, &x).unwrap().abs() < 1e-7);
        let d = geodesic_distance(
            &SpdMatrix::identity(2),
            &SpdMatrix::from_diagonal(&[E * E, 1.0]).unwrap(),
        )
        .unwrap();
        assert!((d - 2.0).abs() < 1e-14);
    }

    #[test]
    fn affine_invariance() {
        let x = sample_spd(3, 8);
        let y = sample_spd(3, 9);
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, -0.3, 2.0, 0.1, 0.2, 0.0, 0.7]);
        let ax = SpdMatrix::new(&a * x.as_matrix() * a.transpose()).unwrap();
        let ay = SpdMatrix::new(&a * y.as_matrix() * a.transpose()).unwrap();
        let d1 = geodesic_distance(&x, &y).unwrap();
        let d2 = geodesic_distance(&ax, &ay).unwrap();
        assert!((d1 - d2).abs() <= 1e-9 * d1);
    }

    #[test]
    fn dimension_mismatch() {
        let x = SpdMatrix::identity(2);
        let y = SpdMatrix::identity(3);
        assert!(matches!(
            geodesic_distance(&x, &y),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            log_map(&x, &y),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            exp_map(&x, &SymMatrix::zeros(3)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            karcher_mean(&[x, y], &KarcherOptions::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn karcher_single_point() {
        let x = sample_spd(3, 10);
        let r =
            karcher_mean_with_report(std::slice::from_ref(&x), &KarcherOptions::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert!(rel(r.mean.as_matrix(), x.as_matrix()) < 1e-15);
    }

    #[test]
    fn karcher_commuting_is_geometric_mean() {
        let pts = [
            SpdMatrix::identity(2),
            SpdMatrix::from_diagonal(&[E * E, E * E]).unwrap(),
        ];
        let m = karcher_mean(&pts, &KarcherOptions::default()).unwrap();
        let want = DMatrix::from_diagonal_element(2, 2, E);
        assert!(rel(m.as_matrix(), &want) < 1e-6);
    }

    #[test]
    fn karcher_first_order_optimality() {
        let pts: Vec<_> = (0..10).map(|s| sample_spd(3, 100 + s)).collect();
        let opts = KarcherOptions::default();
        let r = karcher_mean_with_report(&pts, &opts).unwrap();
        assert!(r.converged);
        let pole = TangentPole::new(r.mean.clone()).unwrap();
        let mut g = DMatrix::zeros(3, 3);
        for p in &pts {
            g += pole.log_map(p).unwrap().as_matrix();
        }
        assert!((g / 10.0).norm() < opts.tol);
        // perturbing the mean increases the objective
        let obj = |m: &SpdMatrix| -> f64 {
            pts.iter()
                .map(|p| geodesic_distance(m, p).unwrap().powi(2))
                .sum()
        };
        let base = obj(&r.mean);
        for dir in 0..3 {
            let mut e = DMatrix::zeros(3, 3);
            e[(dir, dir)] = 1e-3;
            let moved = pole.exp_map(&SymMatrix::new(e).unwrap()).unwrap();
            assert!(obj(&moved) >= base - 1e-6);
        }
    }

    #[test]
    fn karcher_errors() {
        assert!(matches!(
            karcher_mean(&[], &KarcherOptions::default()),
            Err(Error::EmptyInput(_))
        ));
        let pts = [SpdMatrix::identity(2)];
        let opts = KarcherOptions {
            tol: 0.0,
            max_iter: 5,
        };
        assert!(matches!(
            karcher_mean(&pts, &opts),
            Err(Error::InvalidArgument(_))
        ));
        // a far-spread set cannot meet an absurd tolerance in one step
        let pts = [
            SpdMatrix::from_diagonal(&[1.0, 1e-3]).unwrap(),
            SpdMatrix::from_row_slice(2, &[500.0, 499.0, 499.0, 500.0]).unwrap(),
        ];
        let opts = KarcherOptions {
            tol: 1e-15,
            max_iter: 0,
        };
        assert!(matches!(
            karcher_mean(&pts, &opts),
            Err(Error::NonConvergence(_))
        ));
    }

    #[test]
    fn log_map_counter_advances() {
        let before = log_map_count();
        let _ = log_map(&SpdMatrix::identity(2), &SpdMatrix::identity(2)).unwrap();
        assert!(log_map_count() > before);
    }
}
