//! Moment fits of the separable AR approximation from regression residuals.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceModel;
use crate::design::LatticeDesign;
use crate::error::{Error, Result};
use crate::estimators::{ArAxis, SeparableArModel};
use crate::scalar::Real;

/// AR orders `(P1, P2)` of a separable approximation, each in `{1, 2}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Approximation {
    p1: u8,
    p2: u8,
}

impl Approximation {
    pub const AR1XAR1: Approximation = Approximation { p1: 1, p2: 1 };
    pub const AR1XAR2: Approximation = Approximation { p1: 1, p2: 2 };
    pub const AR2XAR1: Approximation = Approximation { p1: 2, p2: 1 };
    pub const AR2XAR2: Approximation = Approximation { p1: 2, p2: 2 };
    /// The three approximations used by the reference experiments.
    pub const STANDARD: [Approximation; 3] = [Self::AR1XAR1, Self::AR1XAR2, Self::AR2XAR2];
    pub const ALL: [Approximation; 4] = [Self::AR1XAR1, Self::AR1XAR2, Self::AR2XAR1, Self::AR2XAR2];

    pub fn new(p1: usize, p2: usize) -> Result<Self> {
        if !(1..=2).contains(&p1) || !(1..=2).contains(&p2) {
            return Err(Error::Config(format!("AR orders must be 1 or 2, got ({p1}, {p2})")));
        }
        Ok(Self { p1: p1 as u8, p2: p2 as u8 })
    }

    pub fn orders(self) -> (usize, usize) {
        (self.p1 as usize, self.p2 as usize)
    }
}

impl fmt::Display for Approximation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ar{}xar{}", self.p1, self.p2)
    }
}

impl FromStr for Approximation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown approximation '{s}' (expected e.g. ar1xar2)"));
        let (a, b) = s.split_once('x').ok_or_else(bad)?;
        let order = |t: &str| t.strip_prefix("ar").and_then(|d| d.parse::<usize>().ok()).ok_or_else(bad);
        Approximation::new(order(a)?, order(b)?)
    }
}

impl TryFrom<String> for Approximation {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Approximation> for String {
    fn from(a: Approximation) -> String {
        a.to_string()
    }
}

/// `y - X β`.
pub fn residuals<T: Real>(design: &LatticeDesign<T>, y: ArrayView1<T>, beta: ArrayView1<T>) -> Result<Array1<T>> {
    if y.len() != design.matrix().nrows() || beta.len() != design.regressors() {
        return Err(Error::Shape(format!("response {} / coefficients {} for design {:?}", y.len(), beta.len(), design.matrix().dim())));
    }
    Ok(&y - &design.mean(beta))
}

fn mean<T: Real>(v: ArrayView1<T>) -> T {
    v.sum() / T::from_usize_lossy(v.len())
}

fn lag_sum<T: Real>(e: ArrayView1<T>, n: usize, mean: T, h1: i64, h2: i64) -> Result<T> {
    if h1.unsigned_abs() as usize >= n || h2.unsigned_abs() as usize >= n {
        return Err(Error::LagOutOfRange { h1, h2, n });
    }
    // γ̂(h) and γ̂(-h) sum the same pairs; a canonical sign gives bit-identical values.
    let (h1, h2) = if h1 < 0 || (h1 == 0 && h2 < 0) { (-h1, -h2) } else { (h1, h2) };
    let lo2 = (-h2).max(0) as usize;
    let hi2 = (n as i64 - h2).min(n as i64) as usize;
    let mut acc = T::zero();
    for t1 in 0..n - h1 as usize {
        let s1 = t1 + h1 as usize;
        for t2 in lo2..hi2 {
            let s2 = (t2 as i64 + h2) as usize;
            acc += (e[s1 * n + s2] - mean) * (e[t1 * n + t2] - mean);
        }
    }
    let count = (n - h1.unsigned_abs() as usize) * (n - h2.unsigned_abs() as usize);
    Ok(acc / T::from_usize_lossy(count))
}

/// `γ̂(h1, h2) = (1/N(h)) Σ_{S(h)} (ε̂_{t+h} - ε̄)(ε̂_t - ε̄)`.
pub fn empirical_cov<T: Real>(residuals: ArrayView1<T>, n: usize, h1: i64, h2: i64) -> Result<T> {
    if residuals.len() != n * n {
        return Err(Error::Shape(format!("{} residuals for N = {n}", residuals.len())));
    }
    lag_sum(residuals, n, mean(residuals), h1, h2)
}

/// `γ̂(h)` for `|h1|, |h2| <= max_lag`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCovEstimate<T> {
    n: usize,
    max_lag: usize,
    mean: T,
    table: Array2<T>,
}

impl<T: Real> EmpiricalCovEstimate<T> {
    pub fn new(residuals: ArrayView1<T>, n: usize, max_lag: usize) -> Result<Self> {
        if residuals.len() != n * n {
            return Err(Error::Shape(format!("{} residuals for N = {n}", residuals.len())));
        }
        if max_lag >= n {
            return Err(Error::LagOutOfRange { h1: max_lag as i64, h2: max_lag as i64, n });
        }
        let m = mean(residuals);
        let w = 2 * max_lag + 1;
        let mut table = Array2::zeros((w, w));
        for i in 0..w {
            for j in 0..w {
                let (h1, h2) = (i as i64 - max_lag as i64, j as i64 - max_lag as i64);
                table[[i, j]] = lag_sum(residuals, n, m, h1, h2)?;
            }
        }
        Ok(Self { n, max_lag, mean: m, table })
    }

    pub fn get(&self, h1: i64, h2: i64) -> Result<T> {
        let m = self.max_lag as i64;
        if h1.abs() > m || h2.abs() > m {
            return Err(Error::LagOutOfRange { h1, h2, n: self.n });
        }
        Ok(self.table[[(h1 + m) as usize, (h2 + m) as usize]])
    }

    /// `N(h) = (N - |h1|)(N - |h2|)`.
    pub fn count(&self, h1: i64, h2: i64) -> usize {
        (self.n - h1.unsigned_abs() as usize) * (self.n - h2.unsigned_abs() as usize)
    }

    /// `ε̄`.
    pub fn mean(&self) -> T {
        self.mean
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }
}

fn fit_axis<T: Real>(order: usize, g0: T, g1: T, g2: T) -> Result<ArAxis<T>> {
    let r1 = g1 / g0;
    match order {
        1 => {
            if !(r1.abs() < T::one()) {
                return Err(Error::NonstationaryFit(format!("fitted AR(1) coefficient {r1}")));
            }
            Ok(ArAxis::Ar1 { phi: r1 })
        }
        _ => {
            let r2 = g2 / g0;
            let denom = T::one() - r1 * r1;
            if !(denom > T::zero()) {
                return Err(Error::NonstationaryFit(format!("lag-one correlation {r1}")));
            }
            let a = r1 * (T::one() - r2) / denom;
            let b = (r2 - r1 * r1) / denom;
            if b == T::zero() {
                return Err(Error::OrderDegeneracy);
            }
            let axis = ArAxis::Ar2 { a, b };
            axis.check_causal()
                .map_err(|_| Error::NonstationaryFit(format!("fitted AR(2) coefficients ({a}, {b})")))?;
            Ok(axis)
        }
    }
}

/// Fit from the five moments `γ(0,0), γ(1,0), γ(2,0), γ(0,1), γ(0,2)`.
pub fn fit_from_moments<T: Real>(moments: [T; 5], approx: Approximation) -> Result<SeparableArModel<T>> {
    let [g00, g10, g20, g01, g02] = moments;
    if !(g00 > T::zero()) {
        return Err(Error::NonstationaryFit(format!("lag-zero covariance {g00}")));
    }
    let (p1, p2) = approx.orders();
    let axis1 = fit_axis(p1, g00, g10, g20)?;
    let axis2 = fit_axis(p2, g00, g01, g02)?;
    let unit = axis1.unit_autocov(0)?[0] * axis2.unit_autocov(0)?[0];
    SeparableArModel::new(axis1, axis2, g00 / unit)
}

/// Yule-Walker-type fit of the separable AR approximation to residuals on an `N × N` lattice.
pub fn fit_separable<T: Real>(residuals: ArrayView1<T>, n: usize, approx: Approximation) -> Result<SeparableArModel<T>> {
    if residuals.len() != n * n {
        return Err(Error::Shape(format!("{} residuals for N = {n}", residuals.len())));
    }
    if n < 3 {
        return Err(Error::ParameterDomain(format!("fit needs N >= 3, got {n}")));
    }
    fit_from_moments(fit_moments(residuals, n)?, approx)
}

/// `[γ̂(0,0), γ̂(1,0), γ̂(2,0), γ̂(0,1), γ̂(0,2)]`, the moments every approximation uses.
pub fn fit_moments<T: Real>(residuals: ArrayView1<T>, n: usize) -> Result<[T; 5]> {
    if residuals.len() != n * n {
        return Err(Error::Shape(format!("{} residuals for N = {n}", residuals.len())));
    }
    let m = mean(residuals);
    let g = |h1, h2| lag_sum(residuals, n, m, h1, h2);
    Ok([g(0, 0)?, g(1, 0)?, g(2, 0)?, g(0, 1)?, g(0, 2)?])
}

/// Fit using the exact covariances of `model` in place of sample moments.
pub fn fit_population<T: Real>(model: &CovarianceModel<T>, approx: Approximation) -> Result<SeparableArModel<T>> {
    let g = |h1, h2| model.cov(h1, h2);
    fit_from_moments([g(0, 0)?, g(1, 0)?, g(2, 0)?, g(0, 1)?, g(0, 2)?], approx)
}

/// Componentwise average of fitted models sharing one approximation: `φ`, `(a, b)` and
/// `σ12²` are averaged and the roots follow from the averaged coefficients.
pub fn average_fits<T: Real>(fits: &[SeparableArModel<T>]) -> Result<SeparableArModel<T>> {
    let first = fits.first().ok_or(Error::InsufficientReplicates { needed: 1, got: 0 })?;
    let orders = first.orders();
    if fits.iter().any(|f| f.orders() != orders) {
        return Err(Error::Shape("cannot average fits of different orders".into()));
    }
    let count = T::from_usize_lossy(fits.len());
    let avg_axis = |pick: fn(&SeparableArModel<T>) -> ArAxis<T>| -> ArAxis<T> {
        let len = pick(first).coeffs().len();
        let mut sum = vec![T::zero(); len];
        for f in fits {
            for (s, c) in sum.iter_mut().zip(pick(f).coeffs()) {
                *s += c;
            }
        }
        match len {
            1 => ArAxis::Ar1 { phi: sum[0] / count },
            _ => ArAxis::Ar2 { a: sum[0] / count, b: sum[1] / count },
        }
    };
    let sigma12 = fits.iter().map(|f| f.sigma12).fold(T::zero(), |a, b| a + b) / count;
    SeparableArModel::new(avg_axis(|f| f.axis1), avg_axis(|f| f.axis2), sigma12)
}
