//! Omitted-predictor test for nonparametric conditional means.
//!
//! `Z1m = sup |n^{-1/2} Σ_i s_i (y_i − m̂(x_i)) f̂_x(x_i) 1{x_i ∈ box} 1{p̲ ≤ p̂_i ≤ p̄}|`
//! with a residual wild bootstrap `y*_i = m̂(x_i) + v_i (y_i − m̂(x_i))`.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result, Stage};
use crate::estimators::bandwidth::{rule_of_thumb_hx, HxChoice};
use crate::estimators::nw::{nw_at_selected, NwFit};
use crate::estimators::propensity::{resolve_propensity, PropensitySpec};
use crate::grid::{
    build_default_grid, fixed_scale, from_fixed, sup_cells_fast, sup_cells_naive, to_fixed, AtomIndex, CellMax,
    GridOptions, GridSpec, PInterval,
};
use crate::kernels::KernelSpec;
use crate::parallel::map_indexed;
use crate::report::{critical_values, p_value, validate_alphas, Diagnostics, TestReport};
use crate::rng::RngStream;
use crate::test1::{argmax_of, echo, propensity_echo, PROPENSITY_TAG};

/// Propensity intervals are closed on both ends.
pub const P_INTERVAL: PInterval = PInterval::Closed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Multiplier {
    /// `±1` with probability one half each.
    Rademacher,
    /// Two-point law with `E v = 0`, `E v² = E v³ = 1`.
    Mammen,
}

impl Multiplier {
    /// Multipliers for all `n` rows from one stream.
    pub fn draw(self, n: usize, stream: RngStream) -> Vec<f64> {
        let u = stream.uniforms(n);
        match self {
            Multiplier::Rademacher => u.iter().map(|&v| if v < 0.5 { -1.0 } else { 1.0 }).collect(),
            Multiplier::Mammen => {
                let r5 = 5f64.sqrt();
                let p_low = (r5 + 1.0) / (2.0 * r5);
                let (low, high) = (-(r5 - 1.0) / 2.0, (r5 + 1.0) / 2.0);
                u.iter().map(|&v| if v < p_low { low } else { high }).collect()
            }
        }
    }
}

/// What a mean-test bandwidth measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthScale {
    /// Half-width of the kernel support.
    Support,
    /// Standard deviation of the scaled kernel; the support half-width is
    /// `h / sd(K)`.
    #[default]
    StdDev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanTestConfig {
    pub kernel: KernelSpec,
    /// Rule of thumb or fixed; cross-validation is a quantile device and is
    /// not accepted here.
    pub hx: HxChoice,
    pub hx_scale: BandwidthScale,
    pub grid: GridOptions,
    pub replications: usize,
    pub alphas: Vec<f64>,
    pub multiplier: Multiplier,
}

impl Default for MeanTestConfig {
    fn default() -> Self {
        Self {
            kernel: KernelSpec::Epanechnikov,
            hx: HxChoice::RuleOfThumb { c: 0.25 },
            hx_scale: BandwidthScale::default(),
            grid: GridOptions::default(),
            replications: 400,
            alphas: vec![0.1, 0.05],
            multiplier: Multiplier::Rademacher,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Z1mResult {
    pub statistic: f64,
    pub argmax: Option<crate::report::Argmax>,
}

/// Everything the statistic and its bootstrap share.
#[derive(Debug, Clone)]
pub struct MeanPrepared {
    pub n: usize,
    /// Selected rows with a defined propensity score.
    pub rows: Vec<usize>,
    /// Position of each entry of `rows` within `nw.rows`.
    pos: Vec<usize>,
    pub grid: GridSpec,
    atoms: AtomIndex,
    members: Vec<Vec<u32>>,
    pub nw: NwFit,
    pub h_x: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Support half-widths for the configured bandwidth.
fn resolve_mean_hx(data: &Dataset, cfg: &MeanTestConfig) -> Result<Vec<f64>> {
    let h = match &cfg.hx {
        HxChoice::RuleOfThumb { c } => rule_of_thumb_hx(data, *c)?,
        HxChoice::Fixed(h) => h.clone(),
        HxChoice::CrossValidated(_) => {
            return Err(Error::config(
                Stage::Bandwidth,
                "the mean test takes a rule-of-thumb or fixed h_x",
            ))
        }
    };
    let k = match cfg.hx_scale {
        BandwidthScale::Support => 1.0,
        BandwidthScale::StdDev => cfg.kernel.std_dev().recip(),
    };
    Ok(h.into_iter().map(|v| v * k).collect())
}

fn cell_to_stat(cell: Option<CellMax>, scale: i32, n: usize) -> f64 {
    cell.map_or(0.0, |c| from_fixed(c.abs as i128, scale) / (n as f64).sqrt())
}

/// Shared fixed-point encoding of per-row values.
fn encode(v: &[f64]) -> (Vec<i128>, i32) {
    let max_abs = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = fixed_scale(max_abs);
    (v.iter().map(|&x| to_fixed(x, scale)).collect(), scale)
}

impl MeanPrepared {
    /// `(y_i − m̂_i) f̂_i` over `rows` for a given mean fit and outcomes.
    fn values(&self, y: &[f64], mhat: &[f64]) -> Vec<f64> {
        self.pos
            .iter()
            .map(|&k| (y[k] - mhat[k]) * self.nw.fhat[k])
            .collect()
    }

    fn observed_y(&self, data: &Dataset) -> Vec<f64> {
        self.nw.rows.iter().map(|&i| data.y[i]).collect()
    }

    pub fn statistic(&self, data: &Dataset) -> Z1mResult {
        let (v, scale) = encode(&self.values(&self.observed_y(data), &self.nw.mhat));
        let cell = sup_cells_fast(&self.grid, &self.atoms, &self.members, &v, None, P_INTERVAL);
        Z1mResult {
            statistic: cell_to_stat(cell, scale, self.n),
            argmax: cell.map(|c| argmax_of(&self.grid, None, &c)),
        }
    }

    /// One bootstrap sup for given multipliers (indexed like the dataset).
    pub fn draw_with(&self, data: &Dataset, v: &[f64]) -> f64 {
        let y = self.observed_y(data);
        let ystar: Vec<f64> = self
            .nw
            .rows
            .iter()
            .enumerate()
            .map(|(k, &i)| self.nw.mhat[k] + v[i] * (y[k] - self.nw.mhat[k]))
            .collect();
        let mstar = self.nw.refit(&ystar);
        let (vals, scale) = encode(&self.values(&ystar, &mstar));
        cell_to_stat(
            sup_cells_fast(&self.grid, &self.atoms, &self.members, &vals, None, P_INTERVAL),
            scale,
            self.n,
        )
    }

    pub fn draw(&self, data: &Dataset, multiplier: Multiplier, stream: RngStream) -> f64 {
        self.draw_with(data, &multiplier.draw(self.n, stream))
    }
}

/// Direct triple-loop evaluation of the statistic on the prepared fit.
pub fn statistic_z1m_naive(data: &Dataset, phat: &[f64], prep: &MeanPrepared) -> f64 {
    let (v, scale) = encode(&prep.values(&prep.observed_y(data), &prep.nw.mhat));
    cell_to_stat(
        sup_cells_naive(&prep.grid, data, &prep.rows, phat, &v, None, P_INTERVAL),
        scale,
        prep.n,
    )
}

/// Mean fit, density and grid on an explicit grid.
pub fn prepare_meantest_on(data: &Dataset, phat: &[f64], h_x: Vec<f64>, kernel: KernelSpec, grid: GridSpec) -> Result<MeanPrepared> {
    if phat.len() != data.n() {
        return Err(Error::config(Stage::Statistic, "propensity vector length differs from the sample size"));
    }
    if data.n_selected() == 0 {
        return Err(Error::EmptySample { stage: Stage::Statistic });
    }
    let nw = nw_at_selected(data, &h_x, kernel)?;
    let mut rows = Vec::new();
    let mut pos = Vec::new();
    for (k, &i) in nw.rows.iter().enumerate() {
        if phat[i].is_finite() {
            rows.push(i);
            pos.push(k);
        }
    }
    if rows.is_empty() {
        return Err(Error::ThinSet {
            stage: Stage::Statistic,
            count: 0,
            hint: "no selected observation has a defined propensity score".into(),
        });
    }
    let atoms = grid.atoms(data, &rows, phat);
    let members = grid.box_members(&atoms);
    let diagnostics = Diagnostics {
        n: data.n(),
        n_selected: data.n_selected(),
        undefined_propensity: nw.rows.len() - rows.len(),
        grid_boxes: grid.boxes.len(),
        grid_p_intervals: grid.n_p_intervals(),
        marginal_fallback: grid.marginal_fallback,
        ..Diagnostics::default()
    };
    Ok(MeanPrepared {
        n: data.n(),
        rows,
        pos,
        grid,
        atoms,
        members,
        nw,
        h_x,
        diagnostics,
    })
}

pub fn prepare_meantest(data: &Dataset, phat: &[f64], cfg: &MeanTestConfig) -> Result<MeanPrepared> {
    let h_x = resolve_mean_hx(data, cfg)?;
    // the grid carries no τ; a placeholder keeps the shared type
    let grid = build_default_grid(data, phat, &[0.5], &cfg.grid)?;
    prepare_meantest_on(data, phat, h_x, cfg.kernel, grid)
}

pub fn bootstrap_z1m(
    data: &Dataset,
    prep: &MeanPrepared,
    replications: usize,
    multiplier: Multiplier,
    stream: RngStream,
) -> Result<Vec<f64>> {
    if replications < 1 {
        return Err(Error::config(Stage::Bootstrap, "need at least one bootstrap replication"));
    }
    Ok(map_indexed(replications, |r| prep.draw(data, multiplier, stream.child(r as u64))))
}

pub fn run_meantest(data: &Dataset, propensity: &PropensitySpec, cfg: &MeanTestConfig, stream: RngStream) -> Result<TestReport> {
    validate_alphas(&cfg.alphas)?;
    if cfg.replications < 1 {
        return Err(Error::config(Stage::Bootstrap, "need at least one bootstrap replication"));
    }
    let prop = resolve_propensity(data, propensity, cfg.kernel, stream.child(PROPENSITY_TAG))?;
    let prep = prepare_meantest(data, &prop.phat, cfg)?;
    let z = prep.statistic(data);
    let draws = bootstrap_z1m(data, &prep, cfg.replications, cfg.multiplier, stream)?;
    let mut diagnostics = prep.diagnostics.clone();
    diagnostics.undefined_propensity = prop.n_undefined;
    let mut extra = propensity_echo(&prop);
    extra["h_x_used"] = serde_json::json!(prep.h_x);
    Ok(TestReport {
        test: "meantest".into(),
        statistic: z.statistic,
        per_tau: Vec::new(),
        argmax: z.argmax,
        critical_values: critical_values(&draws, &cfg.alphas),
        p_value: p_value(&draws, z.statistic),
        boot_draws: draws,
        diagnostics,
        config_echo: echo(cfg, extra),
        seed: stream.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point() -> (Dataset, Vec<f64>, GridSpec) {
        let d = Dataset::with_external_propensity(vec![1.0, 3.0], vec![0.2, 0.6], 1, vec![true, true]).unwrap();
        let grid = GridSpec::new(vec![0.5], vec![vec![0.0, 1.0]], vec![0.4, 0.5], 100).unwrap();
        (d, vec![0.4, 0.5], grid)
    }

    #[test]
    fn two_point_hand_sum() {
        // h = 0.3 keeps the two points out of each other's window:
        // m̂ = y, residuals vanish
        let (d, phat, grid) = two_point();
        let p = prepare_meantest_on(&d, &phat, vec![0.3], KernelSpec::Epanechnikov, grid.clone()).unwrap();
        assert_eq!(p.statistic(&d).statistic, 0.0);

        // h = 1: K(0.4) = 0.63
        let p = prepare_meantest_on(&d, &phat, vec![1.0], KernelSpec::Epanechnikov, grid).unwrap();
        let k0: f64 = 0.75;
        let k1 = 0.75 * (1.0 - 0.16);
        let m = (k0 + 3.0 * k1) / (k0 + k1);
        let f = (k0 + k1) / 2.0;
        let r1 = (1.0 - m) * f;
        let r2 = (3.0 - (k1 + 3.0 * k0) / (k0 + k1)) * f;
        // one box and one closed interval holding both rows
        let expect = (r1 + r2).abs() / 2f64.sqrt();
        assert!((p.statistic(&d).statistic - expect).abs() < 1e-14);
        assert_eq!(p.statistic(&d).statistic, statistic_z1m_naive(&d, &phat, &p));
    }

    #[test]
    fn zero_multipliers_give_a_small_draw() {
        let n = 200;
        let u = RngStream::new(3, 0).uniforms(3 * n);
        let x = u[..n].to_vec();
        // smooth mean plus centred uniform noise
        let y: Vec<f64> = x.iter().zip(&u[2 * n..]).map(|(v, e)| v * v + e - 0.5).collect();
        let d = Dataset::with_external_propensity(y, x, 1, vec![true; n]).unwrap();
        let phat = u[n..2 * n].to_vec();
        let grid = build_default_grid(&d, &phat, &[0.5], &GridOptions::default()).unwrap();
        let p = prepare_meantest_on(&d, &phat, vec![0.1], KernelSpec::Epanechnikov, grid).unwrap();
        let zero = p.draw_with(&d, &vec![0.0; n]);
        let stat = p.statistic(&d).statistic;
        assert!(zero < 0.2 * stat, "{zero} vs {stat}");
    }

    #[test]
    fn multipliers_have_unit_variance() {
        for m in [Multiplier::Rademacher, Multiplier::Mammen] {
            let v = m.draw(200_000, RngStream::new(11, 0));
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
            assert!(mean.abs() < 0.01, "{m:?}");
            assert!((var - 1.0).abs() < 0.01, "{m:?}");
        }
    }

    #[test]
    fn cross_validated_hx_rejected() {
        let (d, phat, _) = two_point();
        let cfg = MeanTestConfig {
            hx: HxChoice::CrossValidated(Default::default()),
            ..MeanTestConfig::default()
        };
        assert!(prepare_meantest(&d, &phat, &cfg).is_err());
    }
}
