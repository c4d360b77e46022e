//! Limiting `D`-scaled covariances of the LSE, GLSE and PBE for regressors with an
//! atomic spectral measure.

use ndarray::Array2;
use num_traits::Zero;
use serde::Serialize;

use crate::covariance::SpectralDensity;
use crate::design::{rational_rank, JumpMeasure};
use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::linalg::inverse_spd;
use crate::scalar::Real;

/// Spectral values used at one atom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AtomSpectrum<T> {
    pub lambda1: T,
    pub lambda2: T,
    pub f: T,
    pub g: Option<T>,
}

/// Limit of `D Var(β̂) D` for one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticResult<T> {
    pub estimator: EstimatorKind,
    pub cov: Array2<T>,
    pub atoms: Vec<AtomSpectrum<T>>,
}

impl<T: Real> AsymptoticResult<T> {
    /// The `(0, 0)` entry, the scalar limit when `p = 1`.
    pub fn scalar(&self) -> T {
        self.cov[[0, 0]]
    }
}

fn positive_at<T: Real>(s: &dyn SpectralDensity<T>, l1: T, l2: T) -> Result<T> {
    let v = s.density(l1, l2)?;
    if !(v > T::zero()) || !v.is_finite() {
        return Err(Error::SingularSpectrum { lambda1: l1.as_f64(), lambda2: l2.as_f64() });
    }
    Ok(v)
}

fn four_pi_sq<T: Real>() -> T {
    let two_pi = T::lit(2.0) * T::PI();
    two_pi * two_pi
}

/// `(2π)² (∫ 1/f dM)⁻¹`.
pub fn asym_cov_glse<T: Real>(f: &dyn SpectralDensity<T>, jumps: &JumpMeasure) -> Result<AsymptoticResult<T>> {
    let p = jumps.dim();
    let mut a = Array2::<T>::zeros((p, p));
    let mut atoms = Vec::with_capacity(jumps.atoms().len());
    for atom in jumps.atoms() {
        let (l1, l2) = atom.frequency::<T>();
        let fv = positive_at(f, l1, l2)?;
        a.scaled_add(fv.recip(), &atom.mass::<T>());
        atoms.push(AtomSpectrum { lambda1: l1, lambda2: l2, f: fv, g: None });
    }
    let cov = inverse_spd(&a).map_err(|_| Error::SingularDesign)? * four_pi_sq::<T>();
    Ok(AsymptoticResult { estimator: EstimatorKind::Glse, cov, atoms })
}

/// `(2π)² R(0)⁻¹ (∫ f dM) R(0)⁻¹`.
pub fn asym_cov_lse<T: Real>(f: &dyn SpectralDensity<T>, jumps: &JumpMeasure, r00: &Array2<T>) -> Result<AsymptoticResult<T>> {
    let p = jumps.dim();
    if r00.dim() != (p, p) {
        return Err(Error::Shape(format!("R(0,0) of shape {:?} for p = {p}", r00.dim())));
    }
    let r_inv = inverse_spd(r00).map_err(|_| Error::SingularDesign)?;
    let mut c = Array2::<T>::zeros((p, p));
    let mut atoms = Vec::with_capacity(jumps.atoms().len());
    for atom in jumps.atoms() {
        let (l1, l2) = atom.frequency::<T>();
        let fv = positive_at(f, l1, l2)?;
        c.scaled_add(fv, &atom.mass::<T>());
        atoms.push(AtomSpectrum { lambda1: l1, lambda2: l2, f: fv, g: None });
    }
    let cov = r_inv.dot(&c).dot(&r_inv) * four_pi_sq::<T>();
    Ok(AsymptoticResult { estimator: EstimatorKind::Lse, cov, atoms })
}

/// `(2π)² A⁻¹ C A⁻¹` with `A = ∫ 1/g dM` and `C = ∫ f/g² dM`.
pub fn asym_cov_pbe<T: Real>(
    f: &dyn SpectralDensity<T>,
    g: &dyn SpectralDensity<T>,
    jumps: &JumpMeasure,
) -> Result<AsymptoticResult<T>> {
    let p = jumps.dim();
    let mut a = Array2::<T>::zeros((p, p));
    let mut c = Array2::<T>::zeros((p, p));
    let mut atoms = Vec::with_capacity(jumps.atoms().len());
    for atom in jumps.atoms() {
        let (l1, l2) = atom.frequency::<T>();
        let fv = positive_at(f, l1, l2)?;
        let gv = positive_at(g, l1, l2)?;
        let m = atom.mass::<T>();
        a.scaled_add(gv.recip(), &m);
        c.scaled_add(fv / (gv * gv), &m);
        atoms.push(AtomSpectrum { lambda1: l1, lambda2: l2, f: fv, g: Some(gv) });
    }
    let a_inv = inverse_spd(&a).map_err(|_| Error::SingularDesign)?;
    let cov = a_inv.dot(&c).dot(&a_inv) * four_pi_sq::<T>();
    Ok(AsymptoticResult { estimator: EstimatorKind::Pbe, cov, atoms })
}

/// Limits of `Var(LSE)/Var(GLSE)` and `Var(PBE)/Var(GLSE)` for a single regressor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoreticalRatios<T> {
    pub lse_ratio: T,
    pub pbe_ratio: T,
}

pub fn theoretical_ratios<T: Real>(
    f: &dyn SpectralDensity<T>,
    g: &dyn SpectralDensity<T>,
    jumps: &JumpMeasure,
    r00: &Array2<T>,
) -> Result<TheoreticalRatios<T>> {
    if jumps.dim() != 1 {
        return Err(Error::Shape(format!("scalar ratios need p = 1, got p = {}", jumps.dim())));
    }
    let glse = asym_cov_glse(f, jumps)?.scalar();
    let lse = asym_cov_lse(f, jumps, r00)?.scalar();
    let pbe = asym_cov_pbe(f, g, jumps)?.scalar();
    Ok(TheoreticalRatios { lse_ratio: lse / glse, pbe_ratio: pbe / glse })
}

/// Whether the spectral measure forces the LSE to be asymptotically efficient for every
/// axially symmetric spectral density: after folding the atoms onto `[0, π]²`, the
/// ranks of the folded masses sum to `p`.
pub fn lse_efficient_for_all_spectra(jumps: &JumpMeasure) -> bool {
    let ranks: usize = jumps
        .folded()
        .iter()
        .filter(|(_, m)| m.iter().any(|v| !v.is_zero()))
        .map(|(_, m)| rational_rank(m))
        .sum();
    ranks == jumps.dim()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{AliasedSpectrum, ConstantSpectrum, FnSpectrum, ModelId};
    use crate::design::{jump_measure, RegressorKind};
    use crate::estimators::{ArAxis, SeparableArModel};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn spectrum(id: ModelId) -> AliasedSpectrum<f64> {
        AliasedSpectrum::new(&id.build()).unwrap()
    }

    fn r00(kind: RegressorKind) -> Array2<f64> {
        jump_measure(kind).r00()
    }

    #[test]
    fn polynomial_limits_coincide() {
        let jumps = jump_measure(RegressorKind::Polynomial);
        let f = spectrum(ModelId::Ar1Ar2);
        let f0 = f.density(0.0, 0.0).unwrap() * 4.0 * PI * PI;
        assert_relative_eq!(asym_cov_glse(&f, &jumps).unwrap().scalar(), f0, max_relative = 1e-12);
        assert_relative_eq!(asym_cov_lse(&f, &jumps, &r00(RegressorKind::Polynomial)).unwrap().scalar(), f0, max_relative = 1e-12);
        let g = SeparableArModel::new(ArAxis::Ar1 { phi: -0.3 }, ArAxis::Ar2 { a: 0.4, b: -0.2 }, 2.0).unwrap();
        assert_relative_eq!(asym_cov_pbe(&f, &g, &jumps).unwrap().scalar(), f0, max_relative = 1e-12);
    }

    #[test]
    fn reference_glse_values() {
        let jumps = jump_measure(RegressorKind::Polynomial);
        let v = asym_cov_glse(&spectrum(ModelId::MaternNu2), &jumps).unwrap().scalar();
        assert!((v / 28.276 - 1.0).abs() < 5e-3, "{v}");
        let v = asym_cov_glse(&spectrum(ModelId::Ar1Ar1), &jumps).unwrap().scalar();
        assert!((v / 360.999 - 1.0).abs() < 5e-3, "{v}");
    }

    #[test]
    fn harmonic_pbe_does_not_depend_on_g() {
        let jumps = jump_measure(RegressorKind::Harmonic);
        let f = spectrum(ModelId::MaternNu2);
        let target = f.density(PI / 2.0, PI / 2.0).unwrap() * 4.0 * PI * PI;
        for (phi, a, b) in [(0.1, 0.3, -0.2), (-0.7, 1.2, -0.5), (0.95, -0.4, 0.3)] {
            let g = SeparableArModel::new(ArAxis::Ar1 { phi }, ArAxis::Ar2 { a, b }, 0.7).unwrap();
            assert_relative_eq!(asym_cov_pbe(&f, &g, &jumps).unwrap().scalar(), target, max_relative = 1e-10);
        }
        let lse = asym_cov_lse(&f, &jumps, &r00(RegressorKind::Harmonic)).unwrap().scalar();
        assert_relative_eq!(lse, target, max_relative = 1e-10);
    }

    #[test]
    fn pbe_reduces_to_glse_and_lse() {
        let jumps = jump_measure(RegressorKind::PolyPlusHarmonic);
        let f = spectrum(ModelId::MaternProduct);
        let glse = asym_cov_glse(&f, &jumps).unwrap().scalar();
        let lse = asym_cov_lse(&f, &jumps, &r00(RegressorKind::PolyPlusHarmonic)).unwrap().scalar();
        assert_relative_eq!(asym_cov_pbe(&f, &f, &jumps).unwrap().scalar(), glse, max_relative = 1e-12);
        assert_relative_eq!(asym_cov_pbe(&f, &ConstantSpectrum(3.0), &jumps).unwrap().scalar(), lse, max_relative = 1e-12);
        let g = SeparableArModel::new(ArAxis::Ar1 { phi: 0.5 }, ArAxis::Ar1 { phi: 0.2 }, 1.0).unwrap();
        let ratios = theoretical_ratios(&f, &g, &jumps, &r00(RegressorKind::PolyPlusHarmonic)).unwrap();
        assert!(ratios.lse_ratio >= 1.0 - 1e-9 && ratios.pbe_ratio >= 1.0 - 1e-9);
    }

    #[test]
    fn single_atom_ratios_are_one() {
        let jumps = jump_measure(RegressorKind::Polynomial);
        let f = spectrum(ModelId::MaternNu1);
        let g = ConstantSpectrum(0.1);
        let r = theoretical_ratios(&f, &g, &jumps, &r00(RegressorKind::Polynomial)).unwrap();
        assert_relative_eq!(r.lse_ratio, 1.0, max_relative = 1e-12);
        assert_relative_eq!(r.pbe_ratio, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn zero_spectrum_at_atom_is_rejected() {
        let jumps = jump_measure(RegressorKind::Polynomial);
        let f = FnSpectrum(|l1: f64, _l2: f64| l1.abs());
        assert!(matches!(asym_cov_glse(&f, &jumps), Err(Error::SingularSpectrum { .. })));
    }

    #[test]
    fn efficiency_diagnostic() {
        assert!(lse_efficient_for_all_spectra(&jump_measure(RegressorKind::Polynomial)));
        assert!(lse_efficient_for_all_spectra(&jump_measure(RegressorKind::Harmonic)));
        assert!(!lse_efficient_for_all_spectra(&jump_measure(RegressorKind::PolyPlusHarmonic)));
    }
}
