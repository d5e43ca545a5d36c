//! Kernel functions.
//!
//! Continuous kernels are second order with compact support on `[-1, 1]`.
//! Discrete regressors use the unordered Li–Racine kernel: weight 1 when the
//! categories match and `lambda` otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelSpec {
    #[default]
    Epanechnikov,
    Biweight,
    Triangular,
}

impl KernelSpec {
    #[inline]
    pub fn eval(self, v: f64) -> f64 {
        let a = v.abs();
        if a > 1.0 {
            return 0.0;
        }
        match self {
            KernelSpec::Epanechnikov => 0.75 * (1.0 - v * v),
            KernelSpec::Biweight => {
                let t = 1.0 - v * v;
                0.9375 * t * t
            }
            KernelSpec::Triangular => 1.0 - a,
        }
    }

    /// `∫ K(v)^2 dv`, closed form.
    pub fn roughness(self) -> f64 {
        match self {
            KernelSpec::Epanechnikov => 0.6,
            KernelSpec::Biweight => 5.0 / 7.0,
            KernelSpec::Triangular => 2.0 / 3.0,
        }
    }

    /// Standard deviation of the kernel as a density.
    pub fn std_dev(self) -> f64 {
        match self {
            KernelSpec::Epanechnikov => 5f64.sqrt().recip(),
            KernelSpec::Biweight => 7f64.sqrt().recip(),
            KernelSpec::Triangular => 6f64.sqrt().recip(),
        }
    }

    /// Product kernel `Π_j K(u_j / h_j)`.
    pub fn product(self, u: &[f64], h: &[f64]) -> Result<f64> {
        if u.len() != h.len() {
            return Err(Error::config(
                Stage::Config,
                format!(
                    "product kernel dimension mismatch: {} offsets, {} bandwidths",
                    u.len(),
                    h.len()
                ),
            ));
        }
        if let Some(bad) = h.iter().find(|&&b| !(b > 0.0)) {
            return Err(Error::config(
                Stage::Config,
                format!("bandwidth must be positive, got {bad}"),
            ));
        }
        Ok(self.product_unchecked(u, h))
    }

    /// Unchecked product kernel for hot loops; stops at the first zero factor.
    #[inline]
    pub fn product_unchecked(self, u: &[f64], h: &[f64]) -> f64 {
        let mut w = 1.0;
        for (&uj, &hj) in u.iter().zip(h) {
            let k = self.eval(uj / hj);
            if k == 0.0 {
                return 0.0;
            }
            w *= k;
        }
        w
    }
}

/// Smoothing parameters for the discrete coordinates of `z`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DiscreteKernelSpec {
    pub lambda: Vec<f64>,
}

impl DiscreteKernelSpec {
    pub fn new(lambda: Vec<f64>) -> Result<Self> {
        if let Some(l) = lambda.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return Err(Error::config(
                Stage::Config,
                format!("discrete kernel lambda must lie in [0, 1], got {l}"),
            ));
        }
        Ok(Self { lambda })
    }

    pub fn exact_match(dim: usize) -> Self {
        Self {
            lambda: vec![0.0; dim],
        }
    }

    pub fn eval(&self, a: &[i64], b: &[i64]) -> Result<f64> {
        if a.len() != b.len() || a.len() != self.lambda.len() {
            return Err(Error::config(
                Stage::Config,
                format!(
                    "discrete kernel dimension mismatch: {} vs {} categories, {} lambdas",
                    a.len(),
                    b.len(),
                    self.lambda.len()
                ),
            ));
        }
        Ok(self.eval_unchecked(a, b))
    }

    #[inline]
    pub fn eval_unchecked(&self, a: &[i64], b: &[i64]) -> f64 {
        let mut w = 1.0;
        for ((x, y), &l) in a.iter().zip(b).zip(&self.lambda) {
            if x != y {
                w *= l;
                if w == 0.0 {
                    return 0.0;
                }
            }
        }
        w
    }
}
