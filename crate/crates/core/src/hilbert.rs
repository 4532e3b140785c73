//! Finite-dimensional model of a separable Hilbert space.
//!
//! The space is `R^d` with the Euclidean inner product; `d` is chosen at run
//! time. Covariance operators are symmetric PSD `d x d` matrices.

use std::ops::{Add, AddAssign, Index, Mul, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-8;

/// A point of the Hilbert space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HPoint(Vec<f64>);

impl HPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("coordinates must be finite".into()));
        }
        Ok(HPoint(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        HPoint(vec![0.0; dim])
    }

    pub fn scalar(x: f64) -> Self {
        HPoint(vec![x])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &HPoint) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn scale(&self, c: f64) -> HPoint {
        HPoint(self.0.iter().map(|x| c * x).collect())
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &HPoint) {
        axpy(&mut self.0, c, &other.0);
    }

    pub fn max_abs_diff(&self, other: &HPoint) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn distance(&self, other: &HPoint) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl From<Vec<f64>> for HPoint {
    fn from(v: Vec<f64>) -> Self {
        HPoint(v)
    }
}

impl Index<usize> for HPoint {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl Add for &HPoint {
    type Output = HPoint;
    fn add(self, rhs: &HPoint) -> HPoint {
        HPoint(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &HPoint {
    type Output = HPoint;
    fn sub(self, rhs: &HPoint) -> HPoint {
        HPoint(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl AddAssign<&HPoint> for HPoint {
    fn add_assign(&mut self, rhs: &HPoint) {
        axpy(&mut self.0, 1.0, &rhs.0);
    }
}

impl Mul<&HPoint> for f64 {
    type Output = HPoint;
    fn mul(self, rhs: &HPoint) -> HPoint {
        rhs.scale(self)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub(crate) fn axpy(y: &mut [f64], c: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * xi;
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Returns `(<x, y>, ||x||)`.
pub fn inner_and_norm(x: &HPoint, y: &HPoint) -> Result<(f64, f64)> {
    Ok((x.dot(y)?, x.norm()))
}

/// Covariance operator of a mean-zero Gaussian on the space.
///
/// Construction symmetrizes nothing: an asymmetric input is rejected. Negative
/// eigenvalues are clipped to zero and the clipped mass is kept for reporting.
#[derive(Clone, Debug)]
pub struct CovOperator {
    matrix: DMatrix<f64>,
    /// `factor * factor^T` equals the clipped matrix.
    factor: DMatrix<f64>,
    clipped_mass: f64,
    min_eigenvalue: f64,
}

impl CovOperator {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let d = matrix.nrows();
        if d == 0 || matrix.ncols() != d {
            return Err(Error::InvalidParameter(format!(
                "covariance must be square and non-empty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("covariance entries must be finite".into()));
        }
        let scale = matrix.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        let mut asym = 0.0_f64;
        for i in 0..d {
            for j in 0..i {
                asym = asym.max((matrix[(i, j)] - matrix[(j, i)]).abs());
            }
        }
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric(asym));
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let min_eigenvalue = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let clipped_mass: f64 = eig.eigenvalues.iter().filter(|&&l| l < 0.0).map(|l| -l).sum();
        let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
        Ok(CovOperator {
            matrix,
            factor,
            clipped_mass,
            min_eigenvalue,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidParameter("covariance rows must have equal length".into()));
        }
        Self::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn identity(d: usize) -> Self {
        Self::new(DMatrix::identity(d, d)).expect("identity is a valid covariance")
    }

    pub fn zeros(d: usize) -> Self {
        Self::new(DMatrix::zeros(d, d)).expect("zero is a valid covariance")
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// Total negative eigenvalue mass removed by clipping.
    pub fn clipped_mass(&self) -> f64 {
        self.clipped_mass
    }

    /// True when no eigenvalue is below `-1e-8` times the operator scale.
    pub fn is_psd_within_tolerance(&self) -> bool {
        let scale = self.matrix.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        self.min_eigenvalue >= -PSD_TOL * scale
    }

    /// `<Gamma u, v>`.
    pub fn quadratic(&self, u: &HPoint, v: &HPoint) -> Result<f64> {
        check_dim(self.dim(), u.dim())?;
        check_dim(self.dim(), v.dim())?;
        let d = self.dim();
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                acc += self.matrix[(i, j)] * u[j] * v[i];
            }
        }
        Ok(acc)
    }

    fn apply_factor(&self, z: &[f64], scale: f64) -> HPoint {
        let d = self.dim();
        let mut out = vec![0.0; d];
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for (k, zk) in z.iter().enumerate() {
                s += self.factor[(i, k)] * zk;
            }
            *o = scale * s;
        }
        HPoint(out)
    }
}

/// Draws from the mean-zero Gaussian law with covariance `gamma`.
pub fn sample_gaussian<R: Rng + ?Sized>(gamma: &CovOperator, rng: &mut R) -> HPoint {
    let z: Vec<f64> = (0..gamma.dim()).map(|_| rng.sample(StandardNormal)).collect();
    gamma.apply_factor(&z, 1.0)
}

/// Validates a Brownian time grid: starts at 0, ends at 1, strictly increasing.
pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidGrid("grid needs at least the points 0 and 1".into()));
    }
    if grid[0] != 0.0 || *grid.last().unwrap() != 1.0 {
        return Err(Error::InvalidGrid("grid must start at 0 and end at 1".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidGrid("grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Samples `W_Gamma` on `grid`; the returned path has one point per grid time.
pub fn sample_brownian_path<R: Rng + ?Sized>(gamma: &CovOperator, grid: &[f64], rng: &mut R) -> Result<Vec<HPoint>> {
    validate_grid(grid)?;
    let d = gamma.dim();
    let mut path = Vec::with_capacity(grid.len());
    let mut current = HPoint::zeros(d);
    path.push(current.clone());
    let mut z = vec![0.0; d];
    for w in grid.windows(2) {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let inc = gamma.apply_factor(&z, (w[1] - w[0]).sqrt());
        current += &inc;
        path.push(current.clone());
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    fn p(v: &[f64]) -> HPoint {
        HPoint::new(v.to_vec()).unwrap()
    }

    #[test]
    fn inner_and_norm_examples() {
        assert_eq!(inner_and_norm(&p(&[1.0, 0.0]), &p(&[0.0, 1.0])).unwrap(), (0.0, 1.0));
        assert_eq!(inner_and_norm(&p(&[3.0, 4.0]), &p(&[3.0, 4.0])).unwrap(), (25.0, 5.0));
        let (ip, n) = inner_and_norm(&p(&[1.0, 2.0]), &p(&[2.0, -1.0])).unwrap();
        assert_eq!(ip, 0.0);
        assert!((n - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let err = inner_and_norm(&p(&[1.0]), &p(&[1.0, 2.0])).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { expected: 1, got: 2 });
    }

    #[test]
    fn rejects_non_finite_coordinates() {
        assert!(HPoint::new(vec![f64::NAN]).is_err());
        assert!(HPoint::new(vec![]).is_err());
    }

    #[test]
    fn asymmetric_covariance_rejected() {
        let err = CovOperator::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::NotSymmetric(_)));
    }

    #[test]
    fn indefinite_covariance_is_clipped() {
        let g = CovOperator::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!((g.clipped_mass() - 1.0).abs() < 1e-12);
        assert!(!g.is_psd_within_tolerance());
        let mut rng = stream(1, 0);
        // clipped law is supported on the eigenvector (1,1)
        for _ in 0..100 {
            let x = sample_gaussian(&g, &mut rng);
            assert!((x[0] - x[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_covariance_gives_zero() {
        let g = CovOperator::zeros(3);
        let mut rng = stream(2, 0);
        for _ in 0..10 {
            assert_eq!(sample_gaussian(&g, &mut rng), HPoint::zeros(3));
        }
        let path = sample_brownian_path(&g, &[0.0, 0.3, 1.0], &mut rng).unwrap();
        assert!(path.iter().all(|x| x.norm() == 0.0));
    }

    #[test]
    fn identity_gaussian_squared_norm_mean() {
        let d = 3;
        let n = 100_000;
        let g = CovOperator::identity(d);
        let mut rng = stream(3, 0);
        let mean: f64 = (0..n)
            .map(|_| {
                let x = sample_gaussian(&g, &mut rng);
                x.norm().powi(2)
            })
            .sum::<f64>()
            / n as f64;
        let tol = 3.0 * (2.0 * d as f64 / n as f64).sqrt();
        assert!((mean - d as f64).abs() < tol, "mean {mean}");
    }

    #[test]
    fn degenerate_diagonal_marginals() {
        let g = CovOperator::diagonal(&[4.0, 0.0]).unwrap();
        let mut rng = stream(4, 0);
        let n = 100_000;
        let mut s2 = 0.0;
        for _ in 0..n {
            let x = sample_gaussian(&g, &mut rng);
            assert_eq!(x[1], 0.0);
            s2 += x[0] * x[0];
        }
        let var = s2 / n as f64;
        assert!((var - 4.0).abs() < 0.2, "var {var}");
    }

    #[test]
    fn brownian_grid_validation() {
        let g = CovOperator::identity(1);
        let mut rng = stream(5, 0);
        assert!(sample_brownian_path(&g, &[0.0, 0.6, 0.5, 1.0], &mut rng).is_err());
        assert!(sample_brownian_path(&g, &[0.1, 1.0], &mut rng).is_err());
        assert!(sample_brownian_path(&g, &[0.0, 0.5], &mut rng).is_err());
        let path = sample_brownian_path(&g, &[0.0, 1.0], &mut rng).unwrap();
        assert_eq!(path.len(), 2);
        assert_eq!(path[0], HPoint::zeros(1));
    }

    #[test]
    fn brownian_marginal_covariance() {
        // Var W(t) = t * Gamma entrywise, within 5 standard errors.
        let g = CovOperator::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let grid = [0.0, 0.25, 0.5, 1.0];
        let n = 100_000;
        let mut rng = stream(6, 0);
        let mut acc = vec![[0.0f64; 3]; grid.len()];
        let mut acc2 = vec![[0.0f64; 3]; grid.len()];
        for _ in 0..n {
            let path = sample_brownian_path(&g, &grid, &mut rng).unwrap();
            for (t, w) in path.iter().enumerate() {
                let prods = [w[0] * w[0], w[0] * w[1], w[1] * w[1]];
                for k in 0..3 {
                    acc[t][k] += prods[k];
                    acc2[t][k] += prods[k] * prods[k];
                }
            }
        }
        for (t, &time) in grid.iter().enumerate().skip(1) {
            let target = [time * 2.0, time * 0.5, time * 1.0];
            for k in 0..3 {
                let m = acc[t][k] / n as f64;
                let se = ((acc2[t][k] / n as f64 - m * m) / n as f64).sqrt();
                assert!((m - target[k]).abs() <= 5.0 * se, "t={time} k={k} m={m}");
            }
        }
    }

    proptest! {
        #[test]
        fn inner_product_symmetry_and_parallelogram(
            x in prop::collection::vec(-1e3f64..1e3, 4),
            y in prop::collection::vec(-1e3f64..1e3, 4),
        ) {
            let (x, y) = (HPoint::from(x), HPoint::from(y));
            prop_assert_eq!(x.dot(&y).unwrap(), y.dot(&x).unwrap());
            let lhs = (&x + &y).norm().powi(2) + (&x - &y).norm().powi(2);
            let rhs = 2.0 * x.norm().powi(2) + 2.0 * y.norm().powi(2);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
        }
    }
}
