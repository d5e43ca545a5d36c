//! Test reports, bootstrap critical values and p-values.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauValue {
    pub tau: f64,
    pub value: f64,
}

/// Cell attaining the sup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Argmax {
    pub tau: Option<f64>,
    /// `(lower, upper)` per covariate; infinite for unrestricted sides.
    pub x_box: Vec<(f64, f64)>,
    pub p_interval: (f64, f64),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n: usize,
    pub n_selected: usize,
    /// Observations entering the second test's window.
    pub n_window: Option<usize>,
    pub undefined_propensity: usize,
    pub undefined_cdf: usize,
    pub reduced_order_points: usize,
    pub grid_boxes: usize,
    pub grid_p_intervals: usize,
    pub marginal_fallback: bool,
    pub eta_warning: bool,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test: String,
    pub statistic: f64,
    pub per_tau: Vec<TauValue>,
    pub argmax: Option<Argmax>,
    pub boot_draws: Vec<f64>,
    /// Keyed by α as written (e.g. `"0.05"`).
    pub critical_values: BTreeMap<String, f64>,
    pub p_value: f64,
    pub diagnostics: Diagnostics,
    pub config_echo: serde_json::Value,
    pub seed: u64,
}

impl TestReport {
    pub fn rejects(&self, alpha: f64) -> Option<bool> {
        self.critical_values.get(&alpha_key(alpha)).map(|&cv| self.statistic >= cv)
    }
}

/// Canonical key for an α level.
pub fn alpha_key(alpha: f64) -> String {
    let s = format!("{alpha:.6}");
    let s = s.trim_end_matches('0');
    s.trim_end_matches('.').to_string()
}

pub fn validate_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() || alphas.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
        return Err(Error::config(Stage::Config, "alpha levels must lie in (0, 1)"));
    }
    Ok(())
}

/// `c*_{1-α}`: the `⌈(1-α)R⌉`-th order statistic of the draws.
pub fn critical_value(draws: &[f64], alpha: f64) -> f64 {
    let mut v = draws.to_vec();
    v.sort_by(f64::total_cmp);
    critical_value_sorted(&v, alpha)
}

pub fn critical_value_sorted(sorted: &[f64], alpha: f64) -> f64 {
    let r = sorted.len();
    let k = (((1.0 - alpha) * r as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[k.min(r) - 1]
}

pub fn critical_values(draws: &[f64], alphas: &[f64]) -> BTreeMap<String, f64> {
    let mut v = draws.to_vec();
    v.sort_by(f64::total_cmp);
    alphas
        .iter()
        .map(|&a| (alpha_key(a), critical_value_sorted(&v, a)))
        .collect()
}

/// `(1 + #{draw ≥ stat}) / (R + 1)`.
pub fn p_value(draws: &[f64], statistic: f64) -> f64 {
    let exceed = draws.iter().filter(|&&d| d >= statistic).count();
    (1 + exceed) as f64 / (draws.len() + 1) as f64
}
