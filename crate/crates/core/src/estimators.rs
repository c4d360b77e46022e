//! Least squares, generalized least squares and the pseudo best estimator built on a
//! separable autoregressive approximation of the error covariance.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::covariance::{
    ar_autocovariances, ar_roots_from_coeffs, ar_spectral_density_unchecked, check_causal, Ar1Params,
    Ar2Params, CovarianceModel, Kernel1d, SpectralDensity,
};
use crate::design::LatticeDesign;
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::sampler::CovarianceFactor;
use crate::scalar::Real;

/// Fitted AR models with an inverse root modulus above this are flagged as near unit root.
pub const NEAR_UNIT_ROOT: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Lse,
    Glse,
    Pbe,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [EstimatorKind::Lse, EstimatorKind::Glse, EstimatorKind::Pbe];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Lse => "lse",
            EstimatorKind::Glse => "glse",
            EstimatorKind::Pbe => "pbe",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator '{s}'")))
    }
}

/// Cholesky of a `p × p` normal matrix, reporting rank deficiency as a singular design.
fn normal_cholesky<T: Real>(m: &Array2<T>) -> Result<Cholesky<T>> {
    let chol = Cholesky::new(m).map_err(|_| Error::SingularDesign)?;
    let max_diag = m.diag().iter().fold(T::zero(), |acc, &v| acc.max(v));
    let min_pivot = chol.factor().diag().iter().fold(T::infinity(), |acc, &v| acc.min(v * v));
    if !(min_pivot > max_diag * T::epsilon() * T::lit(1e3)) {
        return Err(Error::SingularDesign);
    }
    Ok(chol)
}

fn check_response<T: Real>(design: &LatticeDesign<T>, y: ArrayView1<T>) -> Result<()> {
    if y.len() != design.matrix().nrows() {
        return Err(Error::Shape(format!("response of length {} for {} design rows", y.len(), design.matrix().nrows())));
    }
    Ok(())
}

/// `(XᵀX)⁻¹ Xᵀ y`.
pub fn lse<T: Real>(design: &LatticeDesign<T>, y: ArrayView1<T>) -> Result<Array1<T>> {
    check_response(design, y)?;
    let x = design.matrix();
    let chol = normal_cholesky(&x.t().dot(x))?;
    Ok(chol.solve(x.t().dot(&y).view()))
}

/// `(XᵀΣ⁻¹X)⁻¹ XᵀΣ⁻¹ y` through one Cholesky factorization of `Σ`.
pub fn glse<T: Real>(design: &LatticeDesign<T>, y: ArrayView1<T>, sigma: &Array2<T>) -> Result<Array1<T>> {
    glse_owned(design, y, sigma.clone())
}

/// [`glse`] factoring `sigma` in place, for large `N` where a second copy matters.
pub fn glse_owned<T: Real>(design: &LatticeDesign<T>, y: ArrayView1<T>, sigma: Array2<T>) -> Result<Array1<T>> {
    check_response(design, y)?;
    if sigma.dim() != (y.len(), y.len()) {
        return Err(Error::Shape(format!("covariance {:?} for {} observations", sigma.dim(), y.len())));
    }
    let chol = Cholesky::from_owned(sigma)?;
    let xw = chol.whiten_matrix(design.matrix().view());
    let yw = chol.whiten_matrix(y.insert_axis(Axis(1))).remove_axis(Axis(1));
    let normal = normal_cholesky(&xw.t().dot(&xw))?;
    Ok(normal.solve(xw.t().dot(&yw).view()))
}

/// GLS with the precision applied to the design once: stores `Q = Σ⁻¹X` and the
/// factored `XᵀQ`, so each response costs one `QᵀY` product.
#[derive(Debug, Clone)]
pub struct GlsSolver<T> {
    q: Array2<T>,
    normal: Cholesky<T>,
}

impl<T: Real> GlsSolver<T> {
    pub fn new(design: &LatticeDesign<T>, q: Array2<T>) -> Result<Self> {
        if q.dim() != design.matrix().dim() {
            return Err(Error::Shape(format!("precision-applied design {:?}", q.dim())));
        }
        let normal = normal_cholesky(&design.matrix().t().dot(&q))?;
        Ok(Self { q, normal })
    }

    pub fn from_factor(design: &LatticeDesign<T>, factor: &CovarianceFactor<T>) -> Result<Self> {
        Self::new(design, factor.solve_matrix(design.matrix().view()))
    }

    pub fn estimate(&self, y: ArrayView1<T>) -> Array1<T> {
        self.normal.solve(self.q.t().dot(&y).view())
    }

    /// Estimates for every column of `Y`, returned as the columns of a `p × R` matrix.
    pub fn estimate_batch(&self, y: ArrayView2<T>) -> Array2<T> {
        self.normal.solve_matrix(self.q.t().dot(&y).view())
    }
}

/// Banded factor `B` with `Σ_AR⁻¹ = BᵀB / σ²` for a causal AR(P) observed at `N` points.
///
/// The first `P` rows hold `L⁻¹` with `L Lᵀ = Γ_P / σ²` (the stationary covariance of
/// `P` consecutive values); row `t ≥ P` holds `(-φ_P, …, -φ_1, 1)` on columns `t-P..=t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArPrecisionFactor<T> {
    n: usize,
    head: Array2<T>,
    filter: Vec<T>,
    sigma2: T,
}

impl<T: Real> ArPrecisionFactor<T> {
    pub fn new(coeffs: &[T], sigma2: T, n: usize) -> Result<Self> {
        check_causal(coeffs)?;
        if !(sigma2 > T::zero()) {
            return Err(Error::ParameterDomain(format!("innovation variance must be positive, got {sigma2}")));
        }
        let p = coeffs.len();
        if n <= p {
            return Err(Error::ParameterDomain(format!("need N > P, got N = {n}, P = {p}")));
        }
        let head = if p == 0 {
            Array2::zeros((0, 0))
        } else {
            let g = ar_autocovariances(coeffs, T::one(), p - 1)?;
            let gamma_p = Array2::from_shape_fn((p, p), |(i, j)| g[i.abs_diff(j)]);
            let chol = Cholesky::new(&gamma_p)?;
            let mut inv = Array2::eye(p);
            for col in inv.axis_iter_mut(Axis(1)) {
                chol.solve_lower_in_place(col);
            }
            inv
        };
        let mut filter: Vec<T> = coeffs.iter().rev().map(|&c| -c).collect();
        filter.push(T::one());
        Ok(Self { n, head, filter, sigma2 })
    }

    pub fn order(&self) -> usize {
        self.filter.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn sigma2(&self) -> T {
        self.sigma2
    }

    /// `B` as a dense matrix.
    pub fn dense(&self) -> Array2<T> {
        let p = self.order();
        let mut b = Array2::zeros((self.n, self.n));
        b.slice_mut(s![..p, ..p]).assign(&self.head);
        for t in p..self.n {
            for (k, &c) in self.filter.iter().enumerate() {
                b[[t, t - p + k]] = c;
            }
        }
        b
    }

    /// `BᵀB / σ²`.
    pub fn precision_dense(&self) -> Array2<T> {
        let b = self.dense();
        b.t().dot(&b) / self.sigma2
    }

    /// `B M`, acting on the rows of `M`.
    pub fn apply_rows(&self, m: ArrayView2<T>) -> Array2<T> {
        let p = self.order();
        let mut out = Array2::zeros(m.raw_dim());
        for i in 0..p {
            let mut row = out.row_mut(i);
            for j in 0..=i {
                row.scaled_add(self.head[[i, j]], &m.row(j));
            }
        }
        for t in p..self.n {
            let mut row = out.row_mut(t);
            for (k, &c) in self.filter.iter().enumerate() {
                row.scaled_add(c, &m.row(t - p + k));
            }
        }
        out
    }

    /// `Bᵀ M`, acting on the rows of `M`.
    pub fn apply_t_rows(&self, m: ArrayView2<T>) -> Array2<T> {
        let p = self.order();
        let mut out = Array2::zeros(m.raw_dim());
        for i in 0..p {
            let src = m.row(i);
            for j in 0..=i {
                out.row_mut(j).scaled_add(self.head[[i, j]], &src);
            }
        }
        for t in p..self.n {
            let src = m.row(t);
            for (k, &c) in self.filter.iter().enumerate() {
                out.row_mut(t - p + k).scaled_add(c, &src);
            }
        }
        out
    }

    /// `B v`.
    pub fn apply(&self, v: ArrayView1<T>) -> Array1<T> {
        self.apply_rows(v.insert_axis(Axis(1))).remove_axis(Axis(1))
    }

    /// `Bᵀ v`.
    pub fn apply_t(&self, v: ArrayView1<T>) -> Array1<T> {
        self.apply_t_rows(v.insert_axis(Axis(1))).remove_axis(Axis(1))
    }
}

/// Axis model of the separable approximation, parameterized with unit innovation variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "order", rename_all = "lowercase")]
pub enum ArAxis<T> {
    /// `x_t = φ x_{t-1} + e_t`
    Ar1 { phi: T },
    /// `x_t = a x_{t-1} + b x_{t-2} + e_t`
    Ar2 { a: T, b: T },
}

impl<T: Real> ArAxis<T> {
    pub fn order(&self) -> usize {
        match self {
            ArAxis::Ar1 { .. } => 1,
            ArAxis::Ar2 { .. } => 2,
        }
    }

    pub fn coeffs(&self) -> Vec<T> {
        match *self {
            ArAxis::Ar1 { phi } => vec![phi],
            ArAxis::Ar2 { a, b } => vec![a, b],
        }
    }

    /// Characteristic roots of `1 - Σ φ_j z^j`.
    pub fn roots(&self) -> Result<Vec<Complex<T>>> {
        match *self {
            ArAxis::Ar1 { phi } => {
                if phi == T::zero() {
                    return Ok(Vec::new());
                }
                Ok(vec![Complex::new(phi.recip(), T::zero())])
            }
            ArAxis::Ar2 { a, b } => {
                let (x1, x2) = ar_roots_from_coeffs(a, b)?;
                Ok(vec![x1, x2])
            }
        }
    }

    /// Largest `1/|ξ|` over the roots; below one for causal models.
    pub fn max_inverse_root(&self) -> T {
        match *self {
            ArAxis::Ar1 { phi } => phi.abs(),
            ArAxis::Ar2 { a, b } => match ar_roots_from_coeffs(a, b) {
                Ok((x1, x2)) => x1.norm().recip().max(x2.norm().recip()),
                Err(_) => a.abs(),
            },
        }
    }

    pub fn check_causal(&self) -> Result<()> {
        check_causal(&self.coeffs())
    }

    /// Autocovariances `γ′(0..=max_lag)` with unit innovation variance.
    pub fn unit_autocov(&self, max_lag: usize) -> Result<Vec<T>> {
        ar_autocovariances(&self.coeffs(), T::one(), max_lag)
    }

    /// Spectral density with unit innovation variance.
    pub fn unit_density(&self, lambda: T) -> T {
        ar_spectral_density_unchecked(lambda, &self.coeffs(), T::one())
    }

    pub fn precision_factor(&self, n: usize) -> Result<ArPrecisionFactor<T>> {
        ArPrecisionFactor::new(&self.coeffs(), T::one(), n)
    }

    fn kernel(&self, sigma2: T) -> Result<Kernel1d<T>> {
        Ok(match *self {
            ArAxis::Ar1 { phi } => Kernel1d::Ar1(Ar1Params::new(phi, sigma2)?),
            ArAxis::Ar2 { a, b } => Kernel1d::Ar2(Ar2Params::from_coeffs(a, b, sigma2)?),
        })
    }
}

/// `Σ̃ = Σ̃1 ⊗ Σ̃2` with `γ̃(h1, h2) = σ12² γ1′(h1) γ2′(h2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparableArModel<T> {
    pub axis1: ArAxis<T>,
    pub axis2: ArAxis<T>,
    pub sigma12: T,
}

impl<T: Real> SeparableArModel<T> {
    pub fn new(axis1: ArAxis<T>, axis2: ArAxis<T>, sigma12: T) -> Result<Self> {
        axis1.check_causal()?;
        axis2.check_causal()?;
        if !(sigma12 > T::zero()) || !sigma12.is_finite() {
            return Err(Error::ParameterDomain(format!("sigma12 must be positive, got {sigma12}")));
        }
        Ok(Self { axis1, axis2, sigma12 })
    }

    pub fn white_noise() -> Self {
        let zero = ArAxis::Ar1 { phi: T::zero() };
        Self { axis1: zero, axis2: zero, sigma12: T::one() }
    }

    pub fn orders(&self) -> (usize, usize) {
        (self.axis1.order(), self.axis2.order())
    }

    /// `γ̃(h1, h2)`.
    pub fn gamma(&self, h1: i64, h2: i64) -> Result<T> {
        let a = self.axis1.unit_autocov(h1.unsigned_abs() as usize)?;
        let b = self.axis2.unit_autocov(h2.unsigned_abs() as usize)?;
        Ok(self.sigma12 * a[a.len() - 1] * b[b.len() - 1])
    }

    pub fn to_covariance_model(&self) -> Result<CovarianceModel<T>> {
        Ok(CovarianceModel::Product(self.axis1.kernel(self.sigma12)?, self.axis2.kernel(T::one())?))
    }

    pub fn near_unit_root(&self) -> bool {
        let limit = T::lit(NEAR_UNIT_ROOT);
        self.axis1.max_inverse_root() > limit || self.axis2.max_inverse_root() > limit
    }
}

impl<T: Real> SpectralDensity<T> for SeparableArModel<T> {
    fn density(&self, l1: T, l2: T) -> Result<T> {
        Ok(self.sigma12 * self.axis1.unit_density(l1) * self.axis2.unit_density(l2))
    }
}

/// Output of the pseudo best estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct PbeEstimate<T> {
    pub beta: Array1<T>,
    /// Set when either fitted axis has an inverse root modulus above [`NEAR_UNIT_ROOT`].
    pub near_unit_root: bool,
}

/// Prepared PBE: whitens `X` once by `B1 ⊗ B2` so each response costs `O(N² P)`
/// banded work plus a `p`-vector solve. The scale `σ12²` cancels from the estimator.
#[derive(Debug, Clone)]
pub struct PbeSolver<T> {
    n: usize,
    b1: ArPrecisionFactor<T>,
    b2: ArPrecisionFactor<T>,
    xw: Array2<T>,
    normal: Cholesky<T>,
    near_unit_root: bool,
}

impl<T: Real> PbeSolver<T> {
    pub fn new(design: &LatticeDesign<T>, sep: &SeparableArModel<T>) -> Result<Self> {
        let n = design.side();
        let b1 = sep.axis1.precision_factor(n)?;
        let b2 = sep.axis2.precision_factor(n)?;
        let x = design.matrix();
        let mut xw = Array2::zeros(x.raw_dim());
        for (j, col) in x.axis_iter(Axis(1)).enumerate() {
            xw.column_mut(j).assign(&whiten(&b1, &b2, n, col));
        }
        let normal = normal_cholesky(&xw.t().dot(&xw))?;
        Ok(Self { n, b1, b2, xw, normal, near_unit_root: sep.near_unit_root() })
    }

    pub fn near_unit_root(&self) -> bool {
        self.near_unit_root
    }

    pub fn estimate(&self, y: ArrayView1<T>) -> Array1<T> {
        let yw = whiten(&self.b1, &self.b2, self.n, y);
        self.normal.solve(self.xw.t().dot(&yw).view())
    }

    pub fn estimate_batch(&self, y: ArrayView2<T>) -> Array2<T> {
        let mut out = Array2::zeros((self.xw.ncols(), y.ncols()));
        for (j, col) in y.axis_iter(Axis(1)).enumerate() {
            out.column_mut(j).assign(&self.estimate(col));
        }
        out
    }
}

/// `vec(B1 V B2ᵀ)` for `v = vec(V)` in `t1`-major order.
fn whiten<T: Real>(b1: &ArPrecisionFactor<T>, b2: &ArPrecisionFactor<T>, n: usize, v: ArrayView1<T>) -> Array1<T> {
    let grid = v.to_owned().into_shape_with_order((n, n)).expect("contiguous reshape");
    let left = b1.apply_rows(grid.view());
    let both = b2.apply_rows(left.t()).reversed_axes();
    Array1::from_iter(both.iter().copied())
}

/// `Σ̃⁻¹ v = vec(B1ᵀB1 V (B2ᵀB2)ᵀ) / σ12²`, never materializing the `N² × N²` matrix.
pub fn apply_separable_precision<T: Real>(sep: &SeparableArModel<T>, n: usize, v: ArrayView1<T>) -> Result<Array1<T>> {
    if v.len() != n * n {
        return Err(Error::Shape(format!("vector of length {} for N = {n}", v.len())));
    }
    let b1 = sep.axis1.precision_factor(n)?;
    let b2 = sep.axis2.precision_factor(n)?;
    let grid = v.to_owned().into_shape_with_order((n, n)).expect("contiguous reshape");
    let left = b1.apply_t_rows(b1.apply_rows(grid.view()).view());
    let mut right = b2.apply_t_rows(b2.apply_rows(left.t()).view()).reversed_axes();
    scale_in_place(right.view_mut(), sep.sigma12.recip());
    Ok(Array1::from_iter(right.iter().copied()))
}

fn scale_in_place<T: Real>(mut m: ArrayViewMut2<T>, c: T) {
    m.mapv_inplace(|v| v * c);
}

/// `(XᵀΣ̃⁻¹X)⁻¹ XᵀΣ̃⁻¹ y`.
pub fn pbe<T: Real>(design: &LatticeDesign<T>, y: ArrayView1<T>, sep: &SeparableArModel<T>) -> Result<PbeEstimate<T>> {
    check_response(design, y)?;
    let solver = PbeSolver::new(design, sep)?;
    Ok(PbeEstimate { beta: solver.estimate(y), near_unit_root: solver.near_unit_root() })
}

/// `D · S · D` where `S` is the sample covariance (divisor `R - 1`) of the estimates
/// stored as the columns of `estimates` and `D = diag(‖x_i‖)`.
pub fn scaled_empirical_covariance<T: Real>(estimates: ArrayView2<T>, norms: ArrayView1<T>) -> Result<Array2<T>> {
    let (p, r) = estimates.dim();
    if r < 2 {
        return Err(Error::InsufficientReplicates { needed: 2, got: r });
    }
    if norms.len() != p {
        return Err(Error::Shape(format!("{} norms for {p} coefficients", norms.len())));
    }
    let mean = estimates.mean_axis(Axis(1)).expect("nonempty");
    let centered = &estimates - &mean.insert_axis(Axis(1));
    let mut cov = centered.dot(&centered.t()) / T::from_usize_lossy(r - 1);
    for i in 0..p {
        for j in 0..p {
            cov[[i, j]] *= norms[i] * norms[j];
        }
    }
    Ok(cov)
}
