//! Covariance assembly and Gaussian field simulation on the `N × N` lattice.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::covariance::{CovarianceModel, Kernel1d};
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::scalar::Real;

/// Default largest lattice side for which `N² × N²` matrices are materialized.
pub const DEFAULT_DENSE_CAP: usize = 128;

/// One simulated error field in design row order.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample<T> {
    pub n: usize,
    pub eps: Array1<T>,
    pub seed: u64,
}

/// `Σ[(s), (t)] = γ(s1 - t1, s2 - t2)` with rows ordered `t1`-major.
pub fn assemble_sigma<T: Real>(model: &CovarianceModel<T>, n: usize, cap: usize) -> Result<Array2<T>> {
    if n > cap {
        return Err(Error::SizeCap { n, cap });
    }
    let table = model.lag_table(n)?;
    let nn = n * n;
    let mut sigma = Array2::zeros((nn, nn));
    for s1 in 0..n {
        for t1 in 0..n {
            let d1 = s1.abs_diff(t1);
            for s2 in 0..n {
                let row = s1 * n + s2;
                for t2 in 0..n {
                    sigma[[row, t1 * n + t2]] = table[[d1, s2.abs_diff(t2)]];
                }
            }
        }
    }
    Ok(sigma)
}

/// Symmetric Toeplitz matrix `[γ(|i - j|)]` of a one-dimensional kernel.
pub fn axis_covariance<T: Real>(kernel: &Kernel1d<T>, n: usize) -> Result<Array2<T>> {
    let g = kernel.autocov_vec(n)?;
    Ok(Array2::from_shape_fn((n, n), |(i, j)| g[i.abs_diff(j)]))
}

/// Lower Cholesky factor of `Σ`, either dense or as `L1 ⊗ L2` for separable models.
#[derive(Debug, Clone)]
pub enum CovarianceFactor<T> {
    Dense { n: usize, chol: Cholesky<T> },
    Kron { n: usize, axis1: Cholesky<T>, axis2: Cholesky<T> },
}

impl<T: Real> CovarianceFactor<T> {
    /// Kronecker factor for separable models; dense Cholesky otherwise.
    pub fn new(model: &CovarianceModel<T>, n: usize, dense_cap: usize) -> Result<Self> {
        match model {
            CovarianceModel::Product(k1, k2) => Self::kron(k1, k2, n),
            CovarianceModel::IsotropicMatern(_) => Self::dense(model, n, dense_cap),
        }
    }

    pub fn dense(model: &CovarianceModel<T>, n: usize, dense_cap: usize) -> Result<Self> {
        let sigma = assemble_sigma(model, n, dense_cap)?;
        Ok(CovarianceFactor::Dense { n, chol: Cholesky::from_owned(sigma)? })
    }

    pub fn kron(k1: &Kernel1d<T>, k2: &Kernel1d<T>, n: usize) -> Result<Self> {
        Ok(CovarianceFactor::Kron {
            n,
            axis1: Cholesky::from_owned(axis_covariance(k1, n)?)?,
            axis2: Cholesky::from_owned(axis_covariance(k2, n)?)?,
        })
    }

    pub fn side(&self) -> usize {
        match self {
            CovarianceFactor::Dense { n, .. } | CovarianceFactor::Kron { n, .. } => *n,
        }
    }

    /// `L z`.
    pub fn mul_lower(&self, z: ArrayView1<T>) -> Array1<T> {
        match self {
            CovarianceFactor::Dense { chol, .. } => chol.mul_lower(z),
            CovarianceFactor::Kron { axis1, axis2, .. } => {
                crate::linalg::kron_apply(axis1.factor(), axis2.factor(), z).expect("length checked by caller")
            }
        }
    }

    /// `L Z` for a block of columns.
    pub fn mul_lower_matrix(&self, z: ArrayView2<T>) -> Array2<T> {
        match self {
            CovarianceFactor::Dense { chol, .. } => {
                let mut out = Array2::zeros(z.raw_dim());
                general_mat_mul(T::one(), chol.factor(), &z, T::zero(), &mut out);
                out
            }
            CovarianceFactor::Kron { .. } => {
                let mut out = Array2::zeros(z.raw_dim());
                for (j, col) in z.axis_iter(Axis(1)).enumerate() {
                    out.column_mut(j).assign(&self.mul_lower(col));
                }
                out
            }
        }
    }

    /// `Σ⁻¹ B`, column by column.
    pub fn solve_matrix(&self, b: ArrayView2<T>) -> Array2<T> {
        match self {
            CovarianceFactor::Dense { chol, .. } => chol.solve_matrix(b),
            CovarianceFactor::Kron { n, axis1, axis2 } => {
                let n = *n;
                let mut out = Array2::zeros(b.raw_dim());
                for (j, col) in b.axis_iter(Axis(1)).enumerate() {
                    let grid = col.to_owned().into_shape_with_order((n, n)).expect("contiguous reshape");
                    let left = axis1.solve_matrix(grid.view());
                    let both = axis2.solve_matrix(left.t()).reversed_axes();
                    out.column_mut(j).assign(&Array1::from_iter(both.iter().copied()));
                }
                out
            }
        }
    }
}

/// Standard normal vector of length `len` from `ChaCha8` seeded with `seed`.
pub fn standard_normal<T: Real>(len: usize, seed: u64) -> Array1<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array1::from_iter((0..len).map(|_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        T::lit(z)
    }))
}

/// Draws `ε = L z` with `z` seeded by `seed`.
pub fn sample_with_factor<T: Real>(factor: &CovarianceFactor<T>, seed: u64) -> FieldSample<T> {
    let n = factor.side();
    let z = standard_normal::<T>(n * n, seed);
    FieldSample { n, eps: factor.mul_lower(z.view()), seed }
}

pub fn sample_field<T: Real>(model: &CovarianceModel<T>, n: usize, seed: u64) -> Result<FieldSample<T>> {
    let factor = CovarianceFactor::new(model, n, DEFAULT_DENSE_CAP)?;
    Ok(sample_with_factor(&factor, seed))
}

/// Fields for seeds `base_seed + first .. base_seed + first + count` as the columns of an
/// `N² × count` matrix; column `i` equals `sample_with_factor(factor, base_seed + first + i)`.
pub fn sample_batch<T: Real>(factor: &CovarianceFactor<T>, base_seed: u64, first: usize, count: usize) -> Array2<T> {
    let nn = factor.side() * factor.side();
    let mut z = Array2::zeros((nn, count));
    for (i, mut col) in z.axis_iter_mut(Axis(1)).enumerate() {
        col.assign(&standard_normal::<T>(nn, base_seed.wrapping_add((first + i) as u64)));
    }
    factor.mul_lower_matrix(z.view())
}
