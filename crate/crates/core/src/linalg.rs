//! Dense linear algebra used by the estimators and the sampler.
//!
//! Lower-triangular Cholesky (`A = L Lᵀ`) is the only factorization convention in the crate.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, Axis};

use crate::error::{Error, Result};
use crate::scalar::Real;

const BLOCK: usize = 192;

/// Lower Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: Array2<T>,
}

impl<T: Real> Cholesky<T> {
    /// Factorizes a copy of `a`. Only the lower triangle of `a` is read.
    pub fn new(a: &Array2<T>) -> Result<Self> {
        Self::from_owned(a.clone())
    }

    /// Factorizes `a` in place, reusing its storage for `L`.
    pub fn from_owned(mut a: Array2<T>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Shape(format!("{}x{} matrix is not square", a.nrows(), a.ncols())));
        }
        cholesky_in_place(&mut a)?;
        Ok(Self { l: a })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn factor(&self) -> &Array2<T> {
        &self.l
    }

    pub fn into_factor(self) -> Array2<T> {
        self.l
    }

    /// `L z`.
    pub fn mul_lower(&self, z: ArrayView1<T>) -> Array1<T> {
        let n = self.dim();
        let mut out = Array1::zeros(n);
        for i in 0..n {
            let row = self.l.slice(s![i, ..=i]);
            out[i] = row.dot(&z.slice(s![..=i]));
        }
        out
    }

    /// Solves `L x = b` in place.
    pub fn solve_lower_in_place(&self, mut b: ArrayViewMut1<T>) {
        let n = self.dim();
        for i in 0..n {
            let acc = self.l.slice(s![i, ..i]).dot(&b.slice(s![..i]));
            b[i] = (b[i] - acc) / self.l[[i, i]];
        }
    }

    /// Solves `Lᵀ x = b` in place.
    pub fn solve_upper_in_place(&self, mut b: ArrayViewMut1<T>) {
        let n = self.dim();
        for i in (0..n).rev() {
            let xi = b[i] / self.l[[i, i]];
            b[i] = xi;
            let row = self.l.slice(s![i, ..i]);
            b.slice_mut(s![..i]).scaled_add(-xi, &row);
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: ArrayView1<T>) -> Array1<T> {
        let mut x = b.to_owned();
        self.solve_lower_in_place(x.view_mut());
        self.solve_upper_in_place(x.view_mut());
        x
    }

    /// Solves `A X = B` column by column.
    pub fn solve_matrix(&self, b: ArrayView2<T>) -> Array2<T> {
        let mut x = b.to_owned();
        for mut col in x.axis_iter_mut(Axis(1)) {
            self.solve_lower_in_place(col.view_mut());
            self.solve_upper_in_place(col.view_mut());
        }
        x
    }

    /// `L⁻¹ B`, column by column.
    pub fn whiten_matrix(&self, b: ArrayView2<T>) -> Array2<T> {
        let mut x = b.to_owned();
        for col in x.axis_iter_mut(Axis(1)) {
            self.solve_lower_in_place(col);
        }
        x
    }
}

fn not_pd<T: Real>(pivot: usize, value: T) -> Error {
    Error::NotPositiveDefinite { pivot, value: value.to_f64().unwrap_or(f64::NAN) }
}

fn cholesky_unblocked<T: Real>(a: &mut ndarray::ArrayViewMut2<T>, offset: usize) -> Result<()> {
    let n = a.nrows();
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= a[[j, k]] * a[[j, k]];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return Err(not_pd(offset + j, d));
        }
        let d = d.sqrt();
        a[[j, j]] = d;
        for i in j + 1..n {
            let mut v = a[[i, j]];
            for k in 0..j {
                v -= a[[i, k]] * a[[j, k]];
            }
            a[[i, j]] = v / d;
        }
    }
    Ok(())
}

/// Inverse of a small lower-triangular matrix.
fn lower_inverse<T: Real>(l: ArrayView2<T>) -> Array2<T> {
    let n = l.nrows();
    let mut inv = Array2::zeros((n, n));
    for j in 0..n {
        inv[[j, j]] = l[[j, j]].recip();
        for i in j + 1..n {
            let mut acc = T::zero();
            for k in j..i {
                acc += l[[i, k]] * inv[[k, j]];
            }
            inv[[i, j]] = -acc / l[[i, i]];
        }
    }
    inv
}

/// Right-looking blocked Cholesky; the trailing update runs through GEMM.
/// On success the strict upper triangle is zeroed.
pub fn cholesky_in_place<T: Real>(a: &mut Array2<T>) -> Result<()> {
    let n = a.nrows();
    let mut k = 0;
    while k < n {
        let kb = BLOCK.min(n - k);
        let end = k + kb;
        {
            let mut diag = a.slice_mut(s![k..end, k..end]);
            cholesky_unblocked(&mut diag, k)?;
        }
        if end < n {
            let l11_inv_t = lower_inverse(a.slice(s![k..end, k..end])).reversed_axes();
            let panel = a.slice(s![end.., k..end]).to_owned();
            let mut solved = Array2::zeros(panel.raw_dim());
            general_mat_mul(T::one(), &panel, &l11_inv_t, T::zero(), &mut solved);
            a.slice_mut(s![end.., k..end]).assign(&solved);

            // Lower-triangular trailing update, one block column at a time.
            let mut j = end;
            while j < n {
                let jb = BLOCK.min(n - j);
                let left = solved.slice(s![j - end.., ..]);
                let right = solved.slice(s![j - end..j - end + jb, ..]);
                let mut target = a.slice_mut(s![j.., j..j + jb]);
                general_mat_mul(-T::one(), &left, &right.t(), T::one(), &mut target);
                j += jb;
            }
        }
        k = end;
    }
    for i in 0..n {
        for j in i + 1..n {
            a[[i, j]] = T::zero();
        }
    }
    Ok(())
}

/// Solves a small symmetric positive definite system.
pub fn solve_spd<T: Real>(a: &Array2<T>, b: ArrayView1<T>) -> Result<Array1<T>> {
    Ok(Cholesky::new(a)?.solve(b))
}

/// Inverse of a small symmetric positive definite matrix.
pub fn inverse_spd<T: Real>(a: &Array2<T>) -> Result<Array2<T>> {
    let chol = Cholesky::new(a)?;
    Ok(chol.solve_matrix(Array2::eye(a.nrows()).view()))
}

/// Solves a small general system by Gaussian elimination with partial pivoting.
pub fn solve_general<T: Real>(a: &Array2<T>, b: ArrayView1<T>) -> Result<Array1<T>> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut x = b.to_owned();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[[i, col]].abs().partial_cmp(&m[[j, col]].abs()).unwrap())
            .unwrap();
        if m[[pivot, col]].abs() <= T::epsilon() * T::lit(16.0) {
            return Err(Error::ParameterDomain("singular linear system".into()));
        }
        if pivot != col {
            for k in 0..n {
                m.swap([pivot, k], [col, k]);
            }
            x.swap(pivot, col);
        }
        for i in col + 1..n {
            let f = m[[i, col]] / m[[col, col]];
            for k in col..n {
                let v = m[[col, k]];
                m[[i, k]] -= f * v;
            }
            let v = x[col];
            x[i] -= f * v;
        }
    }
    for i in (0..n).rev() {
        let mut acc = x[i];
        for k in i + 1..n {
            acc -= m[[i, k]] * x[k];
        }
        x[i] = acc / m[[i, i]];
    }
    Ok(x)
}

/// Dense Kronecker product `A ⊗ B`.
pub fn kron<T: Real>(a: &Array2<T>, b: &Array2<T>) -> Array2<T> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[[i, j]];
            out.slice_mut(s![i * br..(i + 1) * br, j * bc..(j + 1) * bc])
                .assign(&b.mapv(|v| v * aij));
        }
    }
    out
}

/// `(A ⊗ B) v` for row-major vectorization: reshapes `v` to `V` (rows indexed by the
/// `A` coordinate) and returns the row-major vectorization of `A V Bᵀ`.
pub fn kron_apply<T: Real>(a: &Array2<T>, b: &Array2<T>, v: ArrayView1<T>) -> Result<Array1<T>> {
    let (n1, n2) = (a.ncols(), b.ncols());
    if v.len() != n1 * n2 {
        return Err(Error::Shape(format!("vector of length {} for {}x{} Kronecker factor", v.len(), n1, n2)));
    }
    let grid = v.to_owned().into_shape_with_order((n1, n2)).expect("contiguous reshape");
    let out = a.dot(&grid).dot(&b.t());
    let len = out.len();
    Ok(out.into_shape_with_order(len).expect("contiguous reshape"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
        m.dot(&m.t()) + Array2::<f64>::eye(n) * (n as f64)
    }

    #[test]
    fn blocked_cholesky_reconstructs_across_block_boundaries() {
        for &n in &[1, 5, BLOCK - 1, BLOCK, BLOCK + 7, 2 * BLOCK + 3] {
            let a = random_spd(n, n as u64);
            let chol = Cholesky::new(&a).unwrap();
            let l = chol.factor();
            let rebuilt = l.dot(&l.t());
            assert_abs_diff_eq!(rebuilt, a, epsilon = 1e-9 * n as f64);
            for i in 0..n {
                for j in i + 1..n {
                    assert_eq!(l[[i, j]], 0.0);
                }
            }
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = ndarray::array![[1.0, 2.0], [2.0, 1.0]];
        assert!(matches!(Cholesky::new(&a), Err(Error::NotPositiveDefinite { pivot: 1, .. })));
    }

    #[test]
    fn solves_match_direct_products() {
        let a = random_spd(40, 3);
        let chol = Cholesky::new(&a).unwrap();
        let b = Array1::from_shape_fn(40, |i| (i as f64).sin());
        let x = chol.solve(b.view());
        assert_abs_diff_eq!(a.dot(&x), b, epsilon = 1e-10);
        let z = Array1::from_shape_fn(40, |i| (i as f64 * 0.3).cos());
        assert_abs_diff_eq!(chol.mul_lower(z.view()), chol.factor().dot(&z), epsilon = 1e-12);
        let gx = solve_general(&a, b.view()).unwrap();
        assert_abs_diff_eq!(gx, x, epsilon = 1e-10);
    }

    #[test]
    fn kron_apply_matches_dense_product() {
        for n in 2..=12 {
            let a = random_spd(n, 10 + n as u64);
            let b = random_spd(n, 100 + n as u64);
            let v = Array1::from_shape_fn(n * n, |i| ((i * 7 % 11) as f64) - 5.0);
            let dense = kron(&a, &b).dot(&v);
            let fast = kron_apply(&a, &b, v.view()).unwrap();
            assert_abs_diff_eq!(fast, dense, epsilon = 1e-10 * dense.iter().fold(1.0_f64, |m, x| m.max(x.abs())));
        }
    }
}
