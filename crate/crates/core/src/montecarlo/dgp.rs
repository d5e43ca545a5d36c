//! Simulation designs: cubic quantile or quadratic mean outcome, probit-type
//! selection driven by `x` and an excluded instrument `z̃`, and correlated
//! outcome and selection noise.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result, Stage};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Design {
    /// `z̃ ~ N(0, v)`.
    Normal,
    /// `z̃ ~ Bernoulli(1/2) − 1/2`.
    Binomial,
    /// `z̃ ~ 1.5 − Poisson(1.5)`.
    Poisson,
    /// `z̃` uniform on `{0, …, 6}`, shifted to `{−3, …, 3}`.
    DiscreteUniform,
}

impl Design {
    pub fn is_discrete(self) -> bool {
        !matches!(self, Design::Normal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeKind {
    /// `(x−½)³ + (x−½)² + (x−½) + γ₁z̃ + ½ε`.
    CubicQuantile,
    /// `x² + ½x + γ₁z̃ + ½ε`.
    QuadraticMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub design: Design,
    pub rho: f64,
    pub gamma1: f64,
    pub sigma: f64,
    pub n: usize,
    pub outcome: OutcomeKind,
    /// Variance of the normal instrument.
    pub instrument_variance: f64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            design: Design::Normal,
            rho: 0.0,
            gamma1: 0.0,
            sigma: 1.0,
            n: 1000,
            outcome: OutcomeKind::CubicQuantile,
            instrument_variance: 1.0,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho.abs() <= 1.0) {
            return Err(Error::config(Stage::Simulation, "rho must lie in [-1, 1]"));
        }
        if self.n < 1 || !(self.sigma > 0.0) || !(self.instrument_variance > 0.0) || !self.gamma1.is_finite() {
            return Err(Error::config(
                Stage::Simulation,
                "n must be positive; sigma and the instrument variance must be positive",
            ));
        }
        Ok(())
    }

    /// Selection index `0.75(x − ½) + 0.75 z̃`.
    pub fn index(x: f64, z: f64) -> f64 {
        0.75 * (x - 0.5) + 0.75 * z
    }

    /// `Pr(s = 1 | x, z̃) = Φ(index / σ)`.
    pub fn oracle_p(&self, x: f64, z: f64) -> f64 {
        std_normal().cdf(Self::index(x, z) / self.sigma)
    }

    /// Outcome mean part without noise.
    pub fn signal(&self, x: f64, z: f64) -> f64 {
        let base = match self.outcome {
            OutcomeKind::CubicQuantile => {
                let c = x - 0.5;
                c * c * c + c * c + c
            }
            OutcomeKind::QuadraticMean => x * x + 0.5 * x,
        };
        base + self.gamma1 * z
    }

    /// `τ`-quantile of `signal(x, 0) + ½ε`: the conditional quantile of the
    /// outcome when `γ₁ = 0` and there is no selection.
    pub fn structural_quantile(&self, x: f64, tau: f64) -> f64 {
        self.signal(x, 0.0) + 0.5 * std_normal().inverse_cdf(tau)
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub data: Dataset,
    pub oracle_p: Vec<f64>,
    pub ztilde: Vec<f64>,
}

/// One sample. The selection block holds `x` plus the instrument: as a
/// continuous column for the normal design, as a category otherwise.
pub fn generate_dgp(cfg: &DgpConfig, stream: RngStream) -> Result<Simulated> {
    cfg.validate()?;
    let mut rng = stream.rng();
    let n = cfg.n;
    let sd_z = cfg.instrument_variance.sqrt();
    let poisson = Poisson::new(1.5).map_err(|e| Error::config(Stage::Simulation, e.to_string()))?;
    let rho_c = (1.0 - cfg.rho * cfg.rho).sqrt();
    let mut y = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut zt = Vec::with_capacity(n);
    let mut cat = Vec::with_capacity(n);
    let mut oracle = Vec::with_capacity(n);
    for _ in 0..n {
        let xi: f64 = rng.random();
        let (z, c) = match cfg.design {
            Design::Normal => {
                let g: f64 = StandardNormal.sample(&mut rng);
                (sd_z * g, 0)
            }
            Design::Binomial => {
                let b = i64::from(rng.random::<bool>());
                (b as f64 - 0.5, b)
            }
            Design::Poisson => {
                let k = poisson.sample(&mut rng) as i64;
                (1.5 - k as f64, k)
            }
            Design::DiscreteUniform => {
                let k = rng.random_range(0..7i64);
                (k as f64 - 3.0, k)
            }
        };
        let e1: f64 = StandardNormal.sample(&mut rng);
        let e2: f64 = StandardNormal.sample(&mut rng);
        let eps = e1;
        let v = cfg.rho * e1 + rho_c * e2;
        let sel = DgpConfig::index(xi, z) > cfg.sigma * v;
        y.push(if sel { cfg.signal(xi, z) + 0.5 * eps } else { f64::NAN });
        x.push(xi);
        s.push(sel);
        zt.push(z);
        cat.push(c);
        oracle.push(cfg.oracle_p(xi, z));
    }
    let data = if cfg.design.is_discrete() {
        Dataset::new(y, x.clone(), 1, x, 1, cat, 1, s)?
    } else {
        let zc = x.iter().zip(&zt).flat_map(|(&a, &b)| [a, b]).collect();
        Dataset::new(y, x, 1, zc, 2, Vec::new(), 0, s)?
    };
    Ok(Simulated {
        data,
        oracle_p: oracle,
        ztilde: zt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_support() {
        let cfg = DgpConfig {
            design: Design::Binomial,
            n: 400,
            ..DgpConfig::default()
        };
        let sim = generate_dgp(&cfg, RngStream::new(1, 0)).unwrap();
        assert!(sim.ztilde.iter().all(|&z| z == -0.5 || z == 0.5));
        let ones = sim.ztilde.iter().filter(|&&z| z > 0.0).count();
        assert!((150..250).contains(&ones));
    }

    #[test]
    fn discrete_uniform_support() {
        let cfg = DgpConfig {
            design: Design::DiscreteUniform,
            n: 700,
            ..DgpConfig::default()
        };
        let sim = generate_dgp(&cfg, RngStream::new(2, 0)).unwrap();
        let mut seen: Vec<i64> = sim.ztilde.iter().map(|&z| z as i64).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen, vec![-3, -2, -1, 0, 1, 2, 3]);
    }

    #[test]
    fn selection_rate_near_half() {
        let sim = generate_dgp(&DgpConfig { n: 20_000, ..DgpConfig::default() }, RngStream::new(3, 0)).unwrap();
        let rate = sim.data.n_selected() as f64 / 20_000.0;
        assert!((rate - 0.5).abs() < 0.03, "{rate}");
    }

    #[test]
    fn invalid_rho_rejected() {
        let cfg = DgpConfig { rho: 1.5, ..DgpConfig::default() };
        assert!(generate_dgp(&cfg, RngStream::new(0, 0)).is_err());
    }
}
