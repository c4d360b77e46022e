// Negated comparisons are used on purpose so that NaN inputs fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod covariance;
pub mod design;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod fit;
pub mod linalg;
pub mod sampler;
pub mod scalar;
pub mod special;

pub use error::{Error, ErrorCategory, Result};
pub use scalar::Real;

/// Double-precision instantiations used by the experiment and command-line layers.
pub mod f64 {
    pub type CovarianceModel = crate::covariance::CovarianceModel<f64>;
    pub type LatticeDesign = crate::design::LatticeDesign<f64>;
    pub type SeparableArModel = crate::estimators::SeparableArModel<f64>;
    pub type ArAxis = crate::estimators::ArAxis<f64>;
    pub type AliasedSpectrum = crate::covariance::AliasedSpectrum<f64>;
}
