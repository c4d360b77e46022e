//! Stationary lattice covariance kernels and their aliased spectral densities.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_general;
use crate::scalar::Real;
use crate::special::{bessel_k, gamma};

/// Tail level at which the lattice sum for the aliased density is truncated.
pub const TRUNCATION_TAIL: f64 = 1e-12;
/// Largest truncation the adaptive search will try.
pub const MAX_TRUNCATION: usize = 512;

fn positive<T: Real>(name: &str, v: T) -> Result<()> {
    if v > T::zero() && v.is_finite() {
        Ok(())
    } else {
        Err(Error::ParameterDomain(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Matérn covariance parameters: smoothness `nu`, range `rho`, variance `sigma2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternParams<T> {
    nu: T,
    rho: T,
    sigma2: T,
}

impl<T: Real> MaternParams<T> {
    pub fn new(nu: T, rho: T, sigma2: T) -> Result<Self> {
        positive("nu", nu)?;
        positive("rho", rho)?;
        positive("sigma2", sigma2)?;
        Ok(Self { nu, rho, sigma2 })
    }

    pub fn nu(&self) -> T {
        self.nu
    }

    pub fn rho(&self) -> T {
        self.rho
    }

    pub fn sigma2(&self) -> T {
        self.sigma2
    }
}

/// `c(x) = σ² / (2^(ν-1) Γ(ν)) · (2√ν x/ρ)^ν · K_ν(2√ν x/ρ)`, with `c(0) = σ²`.
pub fn matern_cov<T: Real>(x: T, p: &MaternParams<T>) -> Result<T> {
    if !(x >= T::zero()) || !x.is_finite() {
        return Err(Error::ParameterDomain(format!("distance must be finite and >= 0, got {x}")));
    }
    if x == T::zero() {
        return Ok(p.sigma2);
    }
    let two = T::lit(2.0);
    let arg = two * p.nu.sqrt() * x / p.rho;
    let k = bessel_k(p.nu, arg);
    if k == T::zero() {
        return Ok(T::zero());
    }
    let norm = p.sigma2 / (two.powf(p.nu - T::one()) * gamma(p.nu));
    // (arg^ν K_ν) in log space keeps large arguments from overflowing arg^ν.
    Ok(norm * (p.nu * arg.ln() + k.ln()).exp())
}

/// AR(1) parameters: lag-one coefficient and innovation variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1Params<T> {
    phi: T,
    sigma2: T,
}

impl<T: Real> Ar1Params<T> {
    pub fn new(phi: T, sigma2: T) -> Result<Self> {
        if !(phi.abs() < T::one()) {
            return Err(Error::Nonstationary(format!("AR(1) coefficient |phi| = {} >= 1", phi.abs())));
        }
        positive("sigma2", sigma2)?;
        Ok(Self { phi, sigma2 })
    }

    /// Innovation variance chosen so the autocovariance at lag zero is one.
    pub fn normalized(phi: T) -> Result<Self> {
        Self::new(phi, T::one() - phi * phi)
    }

    pub fn phi(&self) -> T {
        self.phi
    }

    pub fn sigma2(&self) -> T {
        self.sigma2
    }
}

/// `σ²/(1-φ²) φ^|h|`.
pub fn ar1_autocov<T: Real>(h: i64, p: &Ar1Params<T>) -> T {
    let lag = h.unsigned_abs();
    let pow = if lag > i32::MAX as u64 { T::zero() } else { p.phi.powi(lag as i32) };
    p.sigma2 / (T::one() - p.phi * p.phi) * pow
}

/// AR(2) parameters held as the roots of `φ(z) = 1 - a z - b z²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar2Params<T> {
    xi1: Complex<T>,
    xi2: Complex<T>,
    sigma2: T,
}

impl<T: Real> Ar2Params<T> {
    pub fn from_roots(xi1: Complex<T>, xi2: Complex<T>, sigma2: T) -> Result<Self> {
        validate_roots(xi1, xi2)?;
        positive("sigma2", sigma2)?;
        Ok(Self { xi1, xi2, sigma2 })
    }

    pub fn from_coeffs(a: T, b: T, sigma2: T) -> Result<Self> {
        let (xi1, xi2) = ar_roots_from_coeffs(a, b)?;
        Self::from_roots(xi1, xi2, sigma2)
    }

    /// Roots given, innovation variance solved from `c(0) = 1`.
    pub fn normalized(xi1: Complex<T>, xi2: Complex<T>) -> Result<Self> {
        let unit = Self::from_roots(xi1, xi2, T::one())?;
        let c0 = ar2_autocov(0, &unit)?;
        Self::from_roots(xi1, xi2, c0.recip())
    }

    pub fn roots(&self) -> (Complex<T>, Complex<T>) {
        (self.xi1, self.xi2)
    }

    pub fn sigma2(&self) -> T {
        self.sigma2
    }

    /// `(a, b)` with `φ(z) = 1 - a z - b z²`.
    pub fn coeffs(&self) -> (T, T) {
        ar_coeffs_from_roots(self.xi1, self.xi2).expect("validated roots")
    }
}

fn validate_roots<T: Real>(xi1: Complex<T>, xi2: Complex<T>) -> Result<()> {
    let tol = T::realness_tolerance();
    for xi in [xi1, xi2] {
        if !xi.re.is_finite() || !xi.im.is_finite() {
            return Err(Error::OrderDegeneracy);
        }
        if !(xi.norm() > T::one()) {
            return Err(Error::Nonstationary(format!(
                "AR(2) root {xi} has modulus {} <= 1",
                xi.norm()
            )));
        }
    }
    let scale = xi1.norm().max(xi2.norm());
    let both_real = xi1.im.abs() <= tol * scale && xi2.im.abs() <= tol * scale;
    let conjugate = (xi1 - xi2.conj()).norm() <= tol * scale;
    if !both_real && !conjugate {
        return Err(Error::ParameterDomain(format!(
            "AR(2) roots {xi1} and {xi2} are neither real nor a conjugate pair"
        )));
    }
    if (xi1 - xi2).norm() <= tol * scale {
        return Err(Error::DegenerateRoot(format!("{xi1}")));
    }
    Ok(())
}

fn real_part<T: Real>(z: Complex<T>, scale: T) -> Result<T> {
    if z.im.abs() > T::realness_tolerance() * scale.max(T::one()) {
        return Err(Error::ComplexResidue { residue: z.im.as_f64() });
    }
    Ok(z.re)
}

/// AR(2) autocovariance from its reciprocal-root form:
/// `σ² ξ1² ξ2² / ((ξ1ξ2 - 1)(ξ2 - ξ1)) · [ξ1^(1-|h|)/(ξ1²-1) - ξ2^(1-|h|)/(ξ2²-1)]`.
pub fn ar2_autocov<T: Real>(h: i64, p: &Ar2Params<T>) -> Result<T> {
    let one = Complex::new(T::one(), T::zero());
    let (x1, x2) = (p.xi1, p.xi2);
    let lag = h.unsigned_abs().min(i32::MAX as u64 - 1) as i32;
    let lead = (x1 * x1 * x2 * x2).scale(p.sigma2) / ((x1 * x2 - one) * (x2 - x1));
    let bracket = x1.powi(1 - lag) / (x1 * x1 - one) - x2.powi(1 - lag) / (x2 * x2 - one);
    let value = lead * bracket;
    real_part(value, lead.norm() * bracket.norm())
}

/// `(a, b)` from the two roots: `ξ1 ξ2 = -1/b`, `ξ1 + ξ2 = -a/b`.
pub fn ar_coeffs_from_roots<T: Real>(xi1: Complex<T>, xi2: Complex<T>) -> Result<(T, T)> {
    let prod = xi1 * xi2;
    let sum = xi1 + xi2;
    if !(prod.re.is_finite() && prod.im.is_finite()) || prod.norm() == T::zero() {
        return Err(Error::OrderDegeneracy);
    }
    let a = sum / prod;
    let b = -prod.inv();
    let scale = a.norm() + b.norm();
    let (a, b) = (real_part(a, scale)?, real_part(b, scale)?);
    if b == T::zero() || !b.is_finite() {
        return Err(Error::OrderDegeneracy);
    }
    Ok((a, b))
}

/// Roots `ξ = (a ± √(a² + 4b)) / (-2b)` of `1 - a z - b z²`.
pub fn ar_roots_from_coeffs<T: Real>(a: T, b: T) -> Result<(Complex<T>, Complex<T>)> {
    if b == T::zero() {
        return Err(Error::OrderDegeneracy);
    }
    let disc = Complex::new(a * a + T::lit(4.0) * b, T::zero()).sqrt();
    let denom = T::lit(-2.0) * b;
    let a = Complex::new(a, T::zero());
    Ok(((a + disc).unscale(denom), (a - disc).unscale(denom)))
}

/// Checks that `1 - Σ φ_j z^j` has no roots in the closed unit disk, via the
/// step-down recursion on partial autocorrelations.
pub fn check_causal<T: Real>(coeffs: &[T]) -> Result<()> {
    let mut cur: Vec<T> = coeffs.to_vec();
    while let Some(&k) = cur.last() {
        if !(k.abs() < T::one()) {
            return Err(Error::Nonstationary(format!(
                "AR coefficients {coeffs:?} are not causal (partial autocorrelation {k})"
            )));
        }
        let p = cur.len();
        let denom = T::one() - k * k;
        let prev: Vec<T> = (0..p - 1).map(|j| (cur[j] + k * cur[p - 2 - j]) / denom).collect();
        cur = prev;
    }
    Ok(())
}

/// Autocovariances `γ(0..=max_lag)` of a causal AR(P) with innovation variance `sigma2`.
pub fn ar_autocovariances<T: Real>(coeffs: &[T], sigma2: T, max_lag: usize) -> Result<Vec<T>> {
    check_causal(coeffs)?;
    let p = coeffs.len();
    let mut system = Array2::<T>::zeros((p + 1, p + 1));
    let mut rhs = ndarray::Array1::<T>::zeros(p + 1);
    rhs[0] = sigma2;
    for k in 0..=p {
        system[[k, k]] += T::one();
        for (j, &phi) in coeffs.iter().enumerate() {
            let lag = (k as i64 - (j as i64 + 1)).unsigned_abs() as usize;
            system[[k, lag]] -= phi;
        }
    }
    let head = solve_general(&system, rhs.view())?;
    let mut out: Vec<T> = head.to_vec();
    out.truncate(max_lag + 1);
    while out.len() <= max_lag {
        let k = out.len();
        let next = coeffs.iter().enumerate().map(|(j, &phi)| phi * out[k - j - 1]).sum();
        out.push(next);
    }
    Ok(out)
}

/// `g(λ) = σ²/(2π) · |1 - Σ φ_j e^{-ijλ}|^{-2}`.
pub fn ar_spectral_density<T: Real>(lambda: T, coeffs: &[T], sigma2: T) -> Result<T> {
    check_causal(coeffs)?;
    positive("sigma2", sigma2)?;
    Ok(ar_spectral_density_unchecked(lambda, coeffs, sigma2))
}

pub(crate) fn ar_spectral_density_unchecked<T: Real>(lambda: T, coeffs: &[T], sigma2: T) -> T {
    let mut re = T::one();
    let mut im = T::zero();
    for (j, &phi) in coeffs.iter().enumerate() {
        let w = lambda * T::from_usize_lossy(j + 1);
        re -= phi * w.cos();
        im += phi * w.sin();
    }
    sigma2 / (T::lit(2.0) * T::PI() * (re * re + im * im))
}

/// One-dimensional stationary kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel1d<T> {
    Matern(MaternParams<T>),
    Ar1(Ar1Params<T>),
    Ar2(Ar2Params<T>),
}

impl<T: Real> Kernel1d<T> {
    pub fn autocov(&self, h: i64) -> Result<T> {
        match self {
            Kernel1d::Matern(p) => matern_cov(T::from_i64(h.abs()).unwrap(), p),
            Kernel1d::Ar1(p) => Ok(ar1_autocov(h, p)),
            Kernel1d::Ar2(p) => ar2_autocov(h, p),
        }
    }

    /// `γ(0), …, γ(len - 1)`.
    pub fn autocov_vec(&self, len: usize) -> Result<Vec<T>> {
        (0..len as i64).map(|h| self.autocov(h)).collect()
    }
}

/// Stationary covariance `γ_ε(h1, h2)` on the integer lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovarianceModel<T> {
    IsotropicMatern(MaternParams<T>),
    /// `γ(h1, h2) = γ1(h1) γ2(h2)`; axis 1 indexes `t1`, axis 2 indexes `t2`.
    Product(Kernel1d<T>, Kernel1d<T>),
}

impl<T: Real> CovarianceModel<T> {
    pub fn cov(&self, h1: i64, h2: i64) -> Result<T> {
        match self {
            CovarianceModel::IsotropicMatern(p) => {
                let (a, b) = (T::from_i64(h1).unwrap(), T::from_i64(h2).unwrap());
                matern_cov((a * a + b * b).sqrt(), p)
            }
            CovarianceModel::Product(k1, k2) => Ok(k1.autocov(h1)? * k2.autocov(h2)?),
        }
    }

    pub fn is_separable(&self) -> bool {
        matches!(self, CovarianceModel::Product(..))
    }

    /// `γ(h1, h2)` for `0 <= h1, h2 < len`. All supported models are even in each
    /// coordinate, so this table determines the covariance at every lag.
    pub fn lag_table(&self, len: usize) -> Result<Array2<T>> {
        match self {
            CovarianceModel::IsotropicMatern(_) => {
                let mut t = Array2::zeros((len, len));
                for h1 in 0..len {
                    for h2 in 0..=h1 {
                        let v = self.cov(h1 as i64, h2 as i64)?;
                        t[[h1, h2]] = v;
                        t[[h2, h1]] = v;
                    }
                }
                Ok(t)
            }
            CovarianceModel::Product(k1, k2) => {
                let a = k1.autocov_vec(len)?;
                let b = k2.autocov_vec(len)?;
                Ok(Array2::from_shape_fn((len, len), |(i, j)| a[i] * b[j]))
            }
        }
    }
}

/// The six true covariance models of the reference experiments, each scaled so
/// that `γ(0, 0) = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelId {
    #[serde(rename = "matern2")]
    MaternNu2,
    #[serde(rename = "matern1")]
    MaternNu1,
    #[serde(rename = "matern2xmatern1")]
    MaternProduct,
    #[serde(rename = "matern1xar2")]
    MaternAr2,
    #[serde(rename = "ar1xar2")]
    Ar1Ar2,
    #[serde(rename = "ar1xar1")]
    Ar1Ar1,
}

impl ModelId {
    pub const ALL: [ModelId; 6] = [
        ModelId::MaternNu2,
        ModelId::MaternNu1,
        ModelId::MaternProduct,
        ModelId::MaternAr2,
        ModelId::Ar1Ar2,
        ModelId::Ar1Ar1,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::MaternNu2 => "matern2",
            ModelId::MaternNu1 => "matern1",
            ModelId::MaternProduct => "matern2xmatern1",
            ModelId::MaternAr2 => "matern1xar2",
            ModelId::Ar1Ar2 => "ar1xar2",
            ModelId::Ar1Ar1 => "ar1xar1",
        }
    }

    pub fn build<T: Real>(self) -> CovarianceModel<T> {
        let lit = T::lit;
        let matern = |nu: f64| MaternParams::new(lit(nu), lit(3.0), T::one()).expect("valid");
        let ar2 = || Kernel1d::Ar2(reference_ar2().expect("valid"));
        match self {
            ModelId::MaternNu2 => CovarianceModel::IsotropicMatern(matern(2.0)),
            ModelId::MaternNu1 => CovarianceModel::IsotropicMatern(matern(1.0)),
            ModelId::MaternProduct => {
                CovarianceModel::Product(Kernel1d::Matern(matern(2.0)), Kernel1d::Matern(matern(1.0)))
            }
            ModelId::MaternAr2 => CovarianceModel::Product(Kernel1d::Matern(matern(1.0)), ar2()),
            ModelId::Ar1Ar2 => {
                CovarianceModel::Product(Kernel1d::Ar1(Ar1Params::normalized(lit(0.5)).unwrap()), ar2())
            }
            ModelId::Ar1Ar1 => {
                let k = Kernel1d::Ar1(Ar1Params::normalized(lit(0.9)).unwrap());
                CovarianceModel::Product(k, k)
            }
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model '{s}'")))
    }
}

/// AR(2) with roots `(2/3)(1 ± √3 i)` and unit variance.
pub fn reference_ar2<T: Real>() -> Result<Ar2Params<T>> {
    let re = T::lit(2.0 / 3.0);
    let im = T::lit(2.0 / 3.0) * T::lit(3.0).sqrt();
    Ar2Params::normalized(Complex::new(re, im), Complex::new(re, -im))
}

/// Spectral density evaluator on `[-π, π]²`, normalized so that
/// `γ(h) = ∫ e^{i h·λ} f(λ) dλ`.
pub trait SpectralDensity<T: Real> {
    fn density(&self, lambda1: T, lambda2: T) -> Result<T>;
}

/// Constant (white noise) spectral density.
#[derive(Debug, Clone, Copy)]
pub struct ConstantSpectrum<T>(pub T);

impl<T: Real> SpectralDensity<T> for ConstantSpectrum<T> {
    fn density(&self, _: T, _: T) -> Result<T> {
        Ok(self.0)
    }
}

/// Adapter turning a closure into a [`SpectralDensity`].
pub struct FnSpectrum<F>(pub F);

impl<T: Real, F: Fn(T, T) -> T> SpectralDensity<T> for FnSpectrum<F> {
    fn density(&self, lambda1: T, lambda2: T) -> Result<T> {
        Ok((self.0)(lambda1, lambda2))
    }
}

/// Smallest `H` with `|γ(H,0)| + |γ(0,H)| < 1e-12`.
pub fn adaptive_truncation<T: Real>(model: &CovarianceModel<T>) -> Result<usize> {
    let tail = T::lit(TRUNCATION_TAIL);
    let mut last = T::zero();
    for h in 1..=MAX_TRUNCATION {
        last = model.cov(h as i64, 0)?.abs() + model.cov(0, h as i64)?.abs();
        if last < tail {
            return Ok(h);
        }
    }
    Err(Error::TruncationInsufficient { truncation: MAX_TRUNCATION, value: last.as_f64() })
}

/// Weighted cosine sum `Σ_{h=-H..H} c(|h|) cos(hλ)` from the one-sided coefficients.
fn cosine_sum<T: Real>(coeffs: &[T], lambda: T) -> T {
    let mut acc = coeffs[0];
    for (h, &c) in coeffs.iter().enumerate().skip(1) {
        acc += T::lit(2.0) * c * (lambda * T::from_usize_lossy(h)).cos();
    }
    acc
}

/// Aliased spectral density of the lattice-sampled process, computed as the truncated
/// lattice sum `(2π)^-2 Σ_{|h1|,|h2| <= H} γ(h1,h2) e^{-i(h1 λ1 + h2 λ2)}`.
#[derive(Debug, Clone)]
pub struct AliasedSpectrum<T> {
    truncation: usize,
    terms: AliasedTerms<T>,
}

#[derive(Debug, Clone)]
enum AliasedTerms<T> {
    Full(Array2<T>),
    Separable(Vec<T>, Vec<T>),
}

impl<T: Real> AliasedSpectrum<T> {
    /// Truncation chosen by [`adaptive_truncation`].
    pub fn new(model: &CovarianceModel<T>) -> Result<Self> {
        let h = adaptive_truncation(model)?;
        Self::with_truncation(model, h)
    }

    pub fn with_truncation(model: &CovarianceModel<T>, truncation: usize) -> Result<Self> {
        if truncation < 1 {
            return Err(Error::ParameterDomain("truncation H must be >= 1".into()));
        }
        let len = truncation + 1;
        let terms = match model {
            CovarianceModel::Product(k1, k2) => AliasedTerms::Separable(k1.autocov_vec(len)?, k2.autocov_vec(len)?),
            CovarianceModel::IsotropicMatern(_) => AliasedTerms::Full(model.lag_table(len)?),
        };
        Ok(Self { truncation, terms })
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }
}

impl<T: Real> SpectralDensity<T> for AliasedSpectrum<T> {
    fn density(&self, lambda1: T, lambda2: T) -> Result<T> {
        let two_pi = T::lit(2.0) * T::PI();
        let value = match &self.terms {
            AliasedTerms::Separable(a, b) => cosine_sum(a, lambda1) * cosine_sum(b, lambda2) / (two_pi * two_pi),
            AliasedTerms::Full(table) => {
                let len = table.nrows();
                let cos2: Vec<T> = (0..len)
                    .map(|h| {
                        let w = if h == 0 { T::one() } else { T::lit(2.0) };
                        w * (lambda2 * T::from_usize_lossy(h)).cos()
                    })
                    .collect();
                let mut acc = T::zero();
                for h1 in 0..len {
                    let w1 = if h1 == 0 { T::one() } else { T::lit(2.0) };
                    let row: T = table.row(h1).iter().zip(&cos2).map(|(&g, &c)| g * c).sum();
                    acc += w1 * (lambda1 * T::from_usize_lossy(h1)).cos() * row;
                }
                acc / (two_pi * two_pi)
            }
        };
        if !(value > T::zero()) {
            return Err(Error::TruncationInsufficient { truncation: self.truncation, value: value.as_f64() });
        }
        Ok(value)
    }
}

/// Aliased spectral density at a single point with an explicit truncation.
pub fn lattice_spectral_density<T: Real>(
    lambda1: T,
    lambda2: T,
    model: &CovarianceModel<T>,
    truncation: usize,
) -> Result<T> {
    AliasedSpectrum::with_truncation(model, truncation)?.density(lambda1, lambda2)
}
