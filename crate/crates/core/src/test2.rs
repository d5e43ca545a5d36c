//! Identification-at-infinity test: a studentized residual-indicator sum in a
//! kernel window centred at `δ = 1 − H`, its wild bootstrap, the data-driven
//! choice of `(η, h_p, H)`, and the two-step decision rule.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result, Stage};
use crate::estimators::bandwidth::{resolve_hx, HxChoice};
use crate::estimators::locpoly::{centred_indicator, quantile_residuals_at, QuantileFit, TieRule};
use crate::estimators::propensity::{resolve_propensity, PropensitySpec};
use crate::kernels::KernelSpec;
use crate::parallel::map_indexed;
use crate::report::{critical_values, p_value, validate_alphas, Diagnostics, TauValue, TestReport};
use crate::rng::RngStream;
use crate::test1::{boot_indicator, default_taus, echo, propensity_echo, PROPENSITY_TAG};

const THIN_HINT: &str = "increase h_p or lower delta";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaOptions {
    pub epsilon: f64,
    /// Ascending, inside `[0, 1)`.
    pub eta_grid: Vec<f64>,
    pub threshold: f64,
    /// Scaling constant `C` in `h_p(η)`.
    pub scale: f64,
}

impl Default for EtaOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            eta_grid: (1..10).map(|k| k as f64 / 10.0).collect(),
            threshold: 0.1,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaScan {
    pub eta_grid: Vec<f64>,
    pub epsilon: f64,
    pub threshold: f64,
    pub density_proxy: Vec<f64>,
    pub h_p: Vec<f64>,
    pub big_h: Vec<f64>,
    pub eta_hat: f64,
    /// No grid value cleared the threshold; `eta_hat` is the grid maximum.
    pub warning: bool,
}

impl EtaScan {
    fn pick(&self) -> usize {
        self.eta_grid.iter().position(|&e| e == self.eta_hat).unwrap_or(0)
    }

    pub fn h_p_hat(&self) -> f64 {
        self.h_p[self.pick()]
    }

    pub fn delta_hat(&self) -> f64 {
        1.0 - self.big_h[self.pick()]
    }
}

/// `h_p(η) = C n^{-(1+ε)/(1+ε+η)} log n`.
pub fn h_p_of(n: usize, epsilon: f64, eta: f64, scale: f64) -> f64 {
    let n = n as f64;
    scale * n.powf(-(1.0 + epsilon) / (1.0 + epsilon + eta)) * n.ln()
}

/// `H(η) = h_p(η)^{1/(1+ε)}`.
pub fn big_h_of(h_p: f64, epsilon: f64) -> f64 {
    h_p.powf(1.0 / (1.0 + epsilon))
}

/// Scan `η` and keep the smallest value whose density proxy
/// `(n h_p)^{-(1-η)} Σ_i K((p̂_i − (1 − H))/h_p)` exceeds the threshold.
pub fn select_eta(phat: &[f64], n: usize, opts: &EtaOptions, kernel: KernelSpec) -> Result<EtaScan> {
    if opts.eta_grid.is_empty() {
        return Err(Error::config(Stage::Bandwidth, "eta grid is empty"));
    }
    if opts.eta_grid.windows(2).any(|w| w[0] >= w[1]) || opts.eta_grid.iter().any(|&e| !(0.0..1.0).contains(&e)) {
        return Err(Error::config(Stage::Bandwidth, "eta grid must be ascending inside [0, 1)"));
    }
    if !(opts.epsilon > 0.0) || !(opts.scale > 0.0) || n < 2 {
        return Err(Error::config(Stage::Bandwidth, "epsilon and C must be positive and n at least 2"));
    }
    let mut scan = EtaScan {
        eta_grid: opts.eta_grid.clone(),
        epsilon: opts.epsilon,
        threshold: opts.threshold,
        density_proxy: Vec::with_capacity(opts.eta_grid.len()),
        h_p: Vec::with_capacity(opts.eta_grid.len()),
        big_h: Vec::with_capacity(opts.eta_grid.len()),
        eta_hat: *opts.eta_grid.last().unwrap(),
        warning: true,
    };
    for &eta in &opts.eta_grid {
        let h_p = h_p_of(n, opts.epsilon, eta, opts.scale);
        let big_h = big_h_of(h_p, opts.epsilon);
        let centre = 1.0 - big_h;
        let mass: f64 = phat
            .iter()
            .filter(|p| p.is_finite())
            .map(|&p| kernel.eval((p - centre) / h_p))
            .sum();
        let proxy = mass / (n as f64 * h_p).powf(1.0 - eta);
        scan.density_proxy.push(proxy);
        scan.h_p.push(h_p);
        scan.big_h.push(big_h);
    }
    if let Some(k) = scan.density_proxy.iter().position(|&d| d > opts.threshold) {
        scan.eta_hat = opts.eta_grid[k];
        scan.warning = false;
    }
    Ok(scan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Test2Config {
    pub taus: Vec<f64>,
    pub order: usize,
    pub kernel: KernelSpec,
    pub hx: HxChoice,
    /// When both `delta` and `h_p` are set they are used as given and the
    /// `η` scan is skipped.
    pub delta: Option<f64>,
    pub h_p: Option<f64>,
    pub eta: EtaOptions,
    pub ties: TieRule,
    pub replications: usize,
    pub alphas: Vec<f64>,
}

impl Default for Test2Config {
    fn default() -> Self {
        Self {
            taus: default_taus(),
            order: 3,
            kernel: KernelSpec::Epanechnikov,
            hx: HxChoice::RuleOfThumb { c: 4.0 },
            delta: None,
            h_p: None,
            eta: EtaOptions::default(),
            ties: TieRule::default(),
            replications: 400,
            alphas: vec![0.1, 0.05],
        }
    }
}

/// Window centre and half-width actually used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub delta: f64,
    pub h_p: f64,
    pub scan: Option<EtaScan>,
}

pub fn resolve_window(phat: &[f64], n: usize, cfg: &Test2Config) -> Result<Window> {
    match (cfg.delta, cfg.h_p) {
        (Some(delta), Some(h_p)) => {
            if !(h_p > 0.0) || !delta.is_finite() {
                return Err(Error::config(Stage::Bandwidth, "h_p must be positive and delta finite"));
            }
            Ok(Window { delta, h_p, scan: None })
        }
        _ => {
            let scan = select_eta(phat, n, &cfg.eta, cfg.kernel)?;
            Ok(Window {
                delta: scan.delta_hat(),
                h_p: scan.h_p_hat(),
                scan: Some(scan),
            })
        }
    }
}

/// In-window selected rows with their kernel weights and indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub n: usize,
    pub rows: Vec<usize>,
    pub weights: Vec<f64>,
    /// `1{û_τ ≤ 0} − τ` per τ, aligned with `rows`.
    pub centred: Vec<Vec<f64>>,
    pub taus: Vec<f64>,
    pub roughness: f64,
}

impl WindowSample {
    pub fn build(
        data: &Dataset,
        fits: &[QuantileFit],
        phat: &[f64],
        delta: f64,
        h_p: f64,
        kernel: KernelSpec,
        ties: TieRule,
    ) -> Result<Self> {
        if phat.len() != data.n() {
            return Err(Error::config(Stage::Statistic, "propensity vector length differs from the sample size"));
        }
        if data.n_selected() == 0 {
            return Err(Error::EmptySample { stage: Stage::Statistic });
        }
        let mut rows = Vec::new();
        let mut weights = Vec::new();
        for i in data.selected() {
            let p = phat[i];
            if !p.is_finite() {
                continue;
            }
            let k = kernel.eval((p - delta) / h_p);
            if k > 0.0 {
                rows.push(i);
                weights.push(k);
            }
        }
        if rows.is_empty() {
            return Err(Error::ThinSet {
                stage: Stage::Statistic,
                count: 0,
                hint: THIN_HINT.into(),
            });
        }
        let centred = fits
            .iter()
            .map(|f| rows.iter().map(|&i| centred_indicator(f.uhat[i], f.tau, i, ties)).collect())
            .collect();
        Ok(Self {
            n: data.n(),
            rows,
            weights,
            centred,
            taus: fits.iter().map(|f| f.tau).collect(),
            roughness: kernel.roughness(),
        })
    }

    pub fn n_window(&self) -> usize {
        self.rows.len()
    }

    /// Signed `Z2(τ)` per τ.
    pub fn z2_profile(&self) -> Vec<f64> {
        self.centred
            .iter()
            .map(|centred| {
                let (mut num, mut den) = (0.0, 0.0);
                for (&e, &k) in centred.iter().zip(&self.weights) {
                    num += e * k;
                    den += e * e * k;
                }
                num / (self.roughness * den).sqrt()
            })
            .collect()
    }

    /// One bootstrap sup. `U_i` is drawn for all `n` rows; the variance
    /// average `n^{-1} Σ (B_i − τ)²` runs over all of them.
    pub fn draw(&self, stream: RngStream) -> f64 {
        let u = stream.uniforms(self.n);
        let mass: f64 = self.weights.iter().sum();
        self.taus
            .iter()
            .map(|&tau| {
                let hits = u.iter().filter(|&&v| boot_indicator(v, tau)).count() as f64;
                let n = self.n as f64;
                let mean_sq = (hits * (1.0 - tau).powi(2) + (n - hits) * tau * tau) / n;
                let num: f64 = self
                    .rows
                    .iter()
                    .zip(&self.weights)
                    .map(|(&i, &k)| if boot_indicator(u[i], tau) { (1.0 - tau) * k } else { -tau * k })
                    .sum();
                (num / (mean_sq * self.roughness * mass).sqrt()).abs()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Z2Result {
    pub statistic: f64,
    pub per_tau: Vec<f64>,
    pub n_window: usize,
}

pub fn statistic_z2(
    data: &Dataset,
    fits: &[QuantileFit],
    phat: &[f64],
    delta: f64,
    h_p: f64,
    kernel: KernelSpec,
    ties: TieRule,
) -> Result<Z2Result> {
    let w = WindowSample::build(data, fits, phat, delta, h_p, kernel, ties)?;
    let per_tau = w.z2_profile();
    Ok(Z2Result {
        statistic: per_tau.iter().fold(0.0, |m, v| m.max(v.abs())),
        per_tau,
        n_window: w.n_window(),
    })
}

/// `R` bootstrap sups; draw `r` uses `stream.child(r)`.
pub fn bootstrap_z2(window: &WindowSample, replications: usize, stream: RngStream) -> Result<Vec<f64>> {
    if replications < 1 {
        return Err(Error::config(Stage::Bootstrap, "need at least one bootstrap replication"));
    }
    Ok(map_indexed(replications, |r| window.draw(stream.child(r as u64))))
}

/// Residuals, window and statistic for a given propensity vector.
pub fn prepare_test2(data: &Dataset, phat: &[f64], cfg: &Test2Config) -> Result<(WindowSample, Window, Vec<f64>)> {
    let window = resolve_window(phat, data.n(), cfg)?;
    let (h_x, _) = resolve_hx(data, &cfg.hx, cfg.order, cfg.kernel)?;
    // only in-window residuals enter the statistic
    let at: Vec<usize> = data
        .selected()
        .into_iter()
        .filter(|&i| phat[i].is_finite() && cfg.kernel.eval((phat[i] - window.delta) / window.h_p) > 0.0)
        .collect();
    let fits = quantile_residuals_at(data, &cfg.taus, &h_x, cfg.order, cfg.kernel, &at)?;
    let sample = WindowSample::build(data, &fits, phat, window.delta, window.h_p, cfg.kernel, cfg.ties)?;
    Ok((sample, window, h_x))
}

pub fn run_test2(data: &Dataset, propensity: &PropensitySpec, cfg: &Test2Config, stream: RngStream) -> Result<TestReport> {
    validate_alphas(&cfg.alphas)?;
    if cfg.replications < 1 {
        return Err(Error::config(Stage::Bootstrap, "need at least one bootstrap replication"));
    }
    let prop = resolve_propensity(data, propensity, cfg.kernel, stream.child(PROPENSITY_TAG))?;
    let (sample, window, h_x) = prepare_test2(data, &prop.phat, cfg)?;
    let per_tau = sample.z2_profile();
    let statistic = per_tau.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    let draws = bootstrap_z2(&sample, cfg.replications, stream)?;
    let eta_warning = window.scan.as_ref().is_some_and(|s| s.warning);
    let mut diagnostics = Diagnostics {
        n: data.n(),
        n_selected: data.n_selected(),
        n_window: Some(sample.n_window()),
        undefined_propensity: prop.n_undefined,
        eta_warning,
        ..Diagnostics::default()
    };
    if eta_warning {
        diagnostics
            .notes
            .push("no eta on the grid cleared the density threshold; the grid maximum was used".into());
    }
    let mut extra = propensity_echo(&prop);
    extra["h_x_used"] = serde_json::json!(h_x);
    extra["delta_used"] = serde_json::json!(window.delta);
    extra["h_p_used"] = serde_json::json!(window.h_p);
    extra["eta_used"] = serde_json::json!(window.scan.as_ref().map(|s| s.eta_hat));
    extra["eta_scan"] = serde_json::json!(window.scan);
    Ok(TestReport {
        test: "test2".into(),
        statistic,
        per_tau: cfg
            .taus
            .iter()
            .zip(&per_tau)
            .map(|(&tau, &value)| TauValue { tau, value })
            .collect(),
        argmax: None,
        critical_values: critical_values(&draws, &cfg.alphas),
        p_value: p_value(&draws, statistic),
        boot_draws: draws,
        diagnostics,
        config_echo: echo(cfg, extra),
        seed: stream.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    NoSelectionEvidence,
    SelectionOnly,
    Misspecification,
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Decision::NoSelectionEvidence => "no-selection-evidence",
            Decision::SelectionOnly => "selection-only",
            Decision::Misspecification => "misspecification-possibly-with-selection",
        })
    }
}

/// Two-step classification; a test rejects when its p-value is at most α.
/// The second report must be present exactly when the first test rejects.
pub fn decision_rule(report1: &TestReport, report2: Option<&TestReport>, alpha1: f64, alpha2: f64) -> Result<Decision> {
    validate_alphas(&[alpha1, alpha2])?;
    let reject1 = report1.p_value <= alpha1;
    match (reject1, report2) {
        (false, None) => Ok(Decision::NoSelectionEvidence),
        (false, Some(_)) => Err(Error::config(
            Stage::Config,
            "second-stage report supplied although the first test does not reject",
        )),
        (true, None) => Err(Error::config(
            Stage::Config,
            "first test rejects; the second-stage report is required",
        )),
        (true, Some(r2)) if r2.p_value <= alpha2 => Ok(Decision::Misspecification),
        (true, Some(_)) => Ok(Decision::SelectionOnly),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(le: Vec<bool>, weights: Vec<f64>, tau: f64, n: usize) -> WindowSample {
        WindowSample {
            n,
            rows: (0..le.len()).collect(),
            weights,
            centred: vec![le.iter().map(|&b| if b { 1.0 - tau } else { -tau }).collect()],
            taus: vec![tau],
            roughness: 0.6,
        }
    }

    #[test]
    fn single_term_by_hand() {
        let k = KernelSpec::Epanechnikov.eval(0.4);
        let z = window(vec![true], vec![k], 0.5, 1).z2_profile()[0];
        assert!((z - 0.5 * (k / 0.15).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn symmetric_signs_cancel() {
        let z = window(vec![true, false], vec![0.3, 0.3], 0.5, 2).z2_profile()[0];
        assert_eq!(z, 0.0);
    }

    #[test]
    fn duplicating_the_window_scales_by_root_two() {
        let le = vec![true, false, false, true, false];
        let w = vec![0.7, 0.2, 0.5, 0.1, 0.9];
        let one = window(le.clone(), w.clone(), 0.3, 5).z2_profile()[0];
        let two = window([le.clone(), le].concat(), [w.clone(), w].concat(), 0.3, 10).z2_profile()[0];
        assert!((two - 2f64.sqrt() * one).abs() < 1e-12 * two.abs().max(1.0));
    }

    #[test]
    fn eta_from_mass_at_one() {
        let phat: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { 0.3 }).collect();
        let s = select_eta(&phat, 1000, &EtaOptions::default(), KernelSpec::Epanechnikov).unwrap();
        // H > h_p keeps p̂ = 1 outside the window, so mass at one alone does not qualify
        assert!(s.big_h.iter().zip(&s.h_p).all(|(a, b)| a > b));
        let near: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 0.99 } else { 0.3 }).collect();
        let s = select_eta(&near, 1000, &EtaOptions::default(), KernelSpec::Epanechnikov).unwrap();
        assert!(!s.warning);
        assert_eq!(s.eta_hat, 0.1);
    }

    #[test]
    fn eta_warning_without_high_scores() {
        let phat: Vec<f64> = (0..500).map(|i| 0.1 + 0.4 * i as f64 / 500.0).collect();
        let s = select_eta(&phat, 500, &EtaOptions::default(), KernelSpec::Epanechnikov).unwrap();
        assert!(s.warning);
        assert_eq!(s.eta_hat, 0.9);
    }

    #[test]
    fn empty_eta_grid_rejected() {
        let opts = EtaOptions {
            eta_grid: vec![],
            ..EtaOptions::default()
        };
        assert!(select_eta(&[0.5], 10, &opts, KernelSpec::Epanechnikov).is_err());
    }
}
