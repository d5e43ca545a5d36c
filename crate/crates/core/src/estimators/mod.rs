//! Nonparametric first-stage estimators.

pub mod bandwidth;
pub mod cdf;
pub mod locpoly;
pub mod nw;
pub mod propensity;
pub mod qreg;
