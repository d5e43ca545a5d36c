//! Omnibus omitted-predictor test for conditional quantiles.
//!
//! `Z1 = sup |n^{-1/2} Σ_i s_i (1{û_τ,i ≤ 0} − τ) 1{x_i ∈ box} 1{p̲ ≤ p̂_i < p̄}|`
//! over τ, covariate boxes and propensity intervals, with a wild bootstrap
//! built from `B_{i,τ} = 1{U_i ≤ τ}` and a conditional-CDF correction.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result, Stage};
use crate::estimators::bandwidth::{resolve_hx, rule_of_thumb_hf, CvBandwidth, HxChoice};
use crate::estimators::cdf::{cond_cdf_table, CdfTable};
use crate::estimators::locpoly::{centred_indicator, quantile_residuals, QuantileFit, TieRule};
use crate::estimators::propensity::{resolve_propensity, PropensitySpec, ResolvedPropensity};
use crate::grid::{
    build_default_grid, fixed_scale, from_fixed, sup_cells_fast, sup_cells_naive, to_fixed, AtomIndex, CellMax,
    GridOptions, GridSpec, PInterval,
};
use crate::kernels::KernelSpec;
use crate::parallel::map_indexed;
use crate::report::{critical_values, p_value, validate_alphas, Argmax, Diagnostics, TauValue, TestReport};
use crate::rng::RngStream;

/// Propensity intervals are `[p̲, p̄)` in both the statistic and the bootstrap.
pub const P_INTERVAL: PInterval = PInterval::HalfOpen;

/// Stream tag reserved for propensity cross-validation.
pub(crate) const PROPENSITY_TAG: u64 = 1 << 40;

pub fn default_taus() -> Vec<f64> {
    (1..10).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Test1Config {
    pub taus: Vec<f64>,
    pub order: usize,
    pub kernel: KernelSpec,
    pub hx: HxChoice,
    /// Per-τ `[h_u, h_x...]`; the rule of thumb is used when absent.
    pub hf: Option<Vec<Vec<f64>>>,
    pub ties: TieRule,
    pub grid: GridOptions,
    pub replications: usize,
    pub alphas: Vec<f64>,
}

impl Default for Test1Config {
    fn default() -> Self {
        Self {
            taus: default_taus(),
            order: 3,
            kernel: KernelSpec::Epanechnikov,
            hx: HxChoice::RuleOfThumb { c: 4.0 },
            hf: None,
            ties: TieRule::default(),
            grid: GridOptions::default(),
            replications: 400,
            alphas: vec![0.1, 0.05],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Z1Result {
    pub statistic: f64,
    pub per_tau: Vec<f64>,
    pub argmax: Option<Argmax>,
}

/// Everything the statistic and its bootstrap share.
#[derive(Debug, Clone)]
pub struct Test1Prepared {
    pub n: usize,
    /// Selected rows with a defined propensity score.
    pub rows: Vec<usize>,
    pub grid: GridSpec,
    atoms: AtomIndex,
    members: Vec<Vec<u32>>,
    /// `1{û_τ ≤ 0} − τ` per τ, aligned with `rows`.
    pub centred: Vec<Vec<f64>>,
    pub cdf: Vec<CdfTable>,
    pub h_x: Vec<f64>,
    pub h_f: Vec<Vec<f64>>,
    pub cv: Option<CvBandwidth>,
    pub diagnostics: Diagnostics,
}

fn usable_rows(data: &Dataset, phat: &[f64]) -> Result<(Vec<usize>, usize)> {
    if phat.len() != data.n() {
        return Err(Error::config(Stage::Statistic, "propensity vector length differs from the sample size"));
    }
    let selected = data.selected();
    if selected.is_empty() {
        return Err(Error::EmptySample { stage: Stage::Statistic });
    }
    let rows: Vec<usize> = selected.iter().copied().filter(|&i| phat[i].is_finite()).collect();
    let dropped = selected.len() - rows.len();
    if rows.is_empty() {
        return Err(Error::ThinSet {
            stage: Stage::Statistic,
            count: 0,
            hint: "no selected observation has a defined propensity score".into(),
        });
    }
    Ok((rows, dropped))
}

fn indicator_values(centred: &[f64], scale: i32) -> Vec<i128> {
    centred.iter().map(|&e| to_fixed(e, scale)).collect()
}

pub(crate) fn centred_per_tau(fits: &[QuantileFit], rows: &[usize], ties: TieRule) -> Vec<Vec<f64>> {
    fits.iter()
        .map(|f| rows.iter().map(|&i| centred_indicator(f.uhat[i], f.tau, i, ties)).collect())
        .collect()
}

pub(crate) fn argmax_of(grid: &GridSpec, tau: Option<f64>, cell: &CellMax) -> Argmax {
    let x_box = grid.boxes[cell.box_index]
        .iter()
        .enumerate()
        .map(|(k, side)| match side {
            None => (f64::NEG_INFINITY, f64::INFINITY),
            Some((a, b)) => (grid.x_cuts[k][*a], grid.x_cuts[k][*b]),
        })
        .collect();
    Argmax {
        tau,
        x_box,
        p_interval: (grid.p_cuts[cell.p_pair.0], grid.p_cuts[cell.p_pair.1]),
    }
}

/// Fold per-τ cell maxima into the overall statistic.
fn assemble(grid: &GridSpec, n: usize, scale: i32, per_tau_cells: Vec<Option<CellMax>>) -> Z1Result {
    let root_n = (n as f64).sqrt();
    let mut per_tau = Vec::with_capacity(per_tau_cells.len());
    let mut best: Option<(usize, CellMax)> = None;
    for (t, cell) in per_tau_cells.into_iter().enumerate() {
        let v = cell.map_or(0.0, |c| from_fixed(c.abs as i128, scale) / root_n);
        per_tau.push(v);
        if let Some(c) = cell {
            if best.is_none_or(|(_, b)| c.abs > b.abs) {
                best = Some((t, c));
            }
        }
    }
    let statistic = per_tau.iter().copied().fold(0.0, f64::max);
    Z1Result {
        statistic,
        per_tau,
        argmax: best.map(|(t, c)| argmax_of(grid, Some(grid.taus[t]), &c)),
    }
}

/// Prefix-sum evaluation of the statistic.
pub fn statistic_z1(
    data: &Dataset,
    fits: &[QuantileFit],
    phat: &[f64],
    grid: &GridSpec,
    ties: TieRule,
) -> Result<Z1Result> {
    let (rows, _) = usable_rows(data, phat)?;
    check_fits(fits, grid)?;
    let atoms = grid.atoms(data, &rows, phat);
    let members = grid.box_members(&atoms);
    let centred = centred_per_tau(fits, &rows, ties);
    Ok(statistic_from_parts(grid, &atoms, &members, &centred, data.n()))
}

/// Direct triple-loop evaluation; equals [`statistic_z1`] exactly.
pub fn statistic_z1_naive(
    data: &Dataset,
    fits: &[QuantileFit],
    phat: &[f64],
    grid: &GridSpec,
    ties: TieRule,
) -> Result<Z1Result> {
    let (rows, _) = usable_rows(data, phat)?;
    check_fits(fits, grid)?;
    let centred = centred_per_tau(fits, &rows, ties);
    let scale = fixed_scale(1.0);
    let cells = centred
        .iter()
        .map(|e| {
            let v = indicator_values(e, scale);
            sup_cells_naive(grid, data, &rows, phat, &v, None, P_INTERVAL)
        })
        .collect();
    Ok(assemble(grid, data.n(), scale, cells))
}

fn check_fits(fits: &[QuantileFit], grid: &GridSpec) -> Result<()> {
    if fits.len() != grid.taus.len() || fits.iter().zip(&grid.taus).any(|(f, &t)| f.tau != t) {
        return Err(Error::config(Stage::Statistic, "quantile fits do not match the grid's tau values"));
    }
    Ok(())
}

fn statistic_from_parts(
    grid: &GridSpec,
    atoms: &AtomIndex,
    members: &[Vec<u32>],
    centred: &[Vec<f64>],
    n: usize,
) -> Z1Result {
    let scale = fixed_scale(1.0);
    let cells = centred
        .iter()
        .map(|e| {
            let v = indicator_values(e, scale);
            sup_cells_fast(grid, atoms, members, &v, None, P_INTERVAL)
        })
        .collect();
    assemble(grid, n, scale, cells)
}

/// Bootstrap hit `B_{i,τ} = 1{U_i ≤ τ}`; one `U_i` serves every τ, so hits
/// are nested in τ.
#[inline]
pub fn boot_indicator(u: f64, tau: f64) -> bool {
    u <= tau
}

impl Test1Prepared {
    pub fn statistic(&self) -> Z1Result {
        statistic_from_parts(&self.grid, &self.atoms, &self.members, &self.centred, self.n)
    }

    /// Fixed-point multiplier values and correction terms for one draw and τ.
    fn draw_parts(&self, u: &[f64], t: usize, scale: i32) -> (Vec<i128>, Vec<i128>) {
        let tau = self.grid.taus[t];
        let k = self.grid.p_cuts.len();
        let cdf = &self.cdf[t];
        let mut vals = Vec::with_capacity(self.rows.len());
        let mut corr = Vec::with_capacity(self.rows.len() * k);
        for (r, &i) in self.rows.iter().enumerate() {
            let w = if boot_indicator(u[i], tau) { 1.0 - tau } else { -tau };
            vals.push(to_fixed(w, scale));
            for c in 0..k {
                corr.push(to_fixed(w * cdf.get(r, c), scale));
            }
        }
        (vals, corr)
    }

    /// One bootstrap sup. Multipliers `U_i` are drawn for all `n` rows so a
    /// row's draw does not depend on which rows are selected.
    pub fn draw(&self, stream: RngStream) -> f64 {
        self.draw_profile(stream).0
    }

    /// Bootstrap sup and its per-τ profile.
    pub fn draw_profile(&self, stream: RngStream) -> (f64, Vec<f64>) {
        let u = stream.uniforms(self.n);
        let scale = fixed_scale(1.0);
        let root_n = (self.n as f64).sqrt();
        let per_tau: Vec<f64> = (0..self.grid.taus.len())
            .map(|t| {
                let (vals, corr) = self.draw_parts(&u, t, scale);
                sup_cells_fast(&self.grid, &self.atoms, &self.members, &vals, Some(&corr), P_INTERVAL)
                    .map_or(0.0, |c| from_fixed(c.abs as i128, scale) / root_n)
            })
            .collect();
        (per_tau.iter().copied().fold(0.0, f64::max), per_tau)
    }

    /// Reference evaluation of [`Self::draw`] by direct loops.
    pub fn draw_naive(&self, data: &Dataset, phat: &[f64], stream: RngStream) -> f64 {
        let u = stream.uniforms(self.n);
        let scale = fixed_scale(1.0);
        let root_n = (self.n as f64).sqrt();
        (0..self.grid.taus.len())
            .map(|t| {
                let (vals, corr) = self.draw_parts(&u, t, scale);
                sup_cells_naive(&self.grid, data, &self.rows, phat, &vals, Some(&corr), P_INTERVAL)
                    .map_or(0.0, |c| from_fixed(c.abs as i128, scale) / root_n)
            })
            .fold(0.0, f64::max)
    }
}

/// Residuals, grid, bandwidths and CDF tables for a given propensity vector.
pub fn prepare_test1(data: &Dataset, phat: &[f64], cfg: &Test1Config) -> Result<Test1Prepared> {
    let (rows, dropped) = usable_rows(data, phat)?;
    let (h_x, cv) = resolve_hx(data, &cfg.hx, cfg.order, cfg.kernel)?;
    let fits = quantile_residuals(data, &cfg.taus, &h_x, cfg.order, cfg.kernel)?;
    let grid = build_default_grid(data, phat, &cfg.taus, &cfg.grid)?;
    let h_f = match &cfg.hf {
        Some(h) if h.len() == cfg.taus.len() => h.clone(),
        Some(h) if h.len() == 1 => vec![h[0].clone(); cfg.taus.len()],
        Some(_) => {
            return Err(Error::config(Stage::ConditionalCdf, "give one h_F vector, or one per tau"));
        }
        None => fits
            .iter()
            .map(|f| rule_of_thumb_hf(data, &f.uhat))
            .collect::<Result<_>>()?,
    };
    let cdf = fits
        .iter()
        .zip(&h_f)
        .map(|(f, h)| cond_cdf_table(data, &rows, &f.uhat, phat, &grid.p_cuts, h, cfg.kernel))
        .collect::<Result<Vec<_>>>()?;
    let atoms = grid.atoms(data, &rows, phat);
    let members = grid.box_members(&atoms);
    let centred = centred_per_tau(&fits, &rows, cfg.ties);
    let diagnostics = Diagnostics {
        n: data.n(),
        n_selected: data.n_selected(),
        undefined_propensity: dropped,
        undefined_cdf: cdf.iter().map(|c| c.n_undefined).sum(),
        reduced_order_points: fits.iter().map(|f| f.reduced_order_points).sum(),
        grid_boxes: grid.boxes.len(),
        grid_p_intervals: grid.n_p_intervals(),
        marginal_fallback: grid.marginal_fallback,
        ..Diagnostics::default()
    };
    Ok(Test1Prepared {
        n: data.n(),
        rows,
        grid,
        atoms,
        members,
        centred,
        cdf,
        h_x,
        h_f,
        cv,
        diagnostics,
    })
}

/// `R` bootstrap sups; draw `r` uses `stream.child(r)`.
pub fn bootstrap_z1(prep: &Test1Prepared, replications: usize, stream: RngStream) -> Result<Vec<f64>> {
    if replications < 1 {
        return Err(Error::config(Stage::Bootstrap, "need at least one bootstrap replication"));
    }
    Ok(map_indexed(replications, |r| prep.draw(stream.child(r as u64))))
}

pub(crate) fn echo(cfg: &impl Serialize, extra: serde_json::Value) -> serde_json::Value {
    let mut v = serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null);
    if let (Some(obj), serde_json::Value::Object(add)) = (v.as_object_mut(), extra) {
        obj.extend(add);
    }
    v
}

pub(crate) fn propensity_echo(p: &ResolvedPropensity) -> serde_json::Value {
    serde_json::json!({
        "h_z": p.h_z,
        "lambda": p.lambda,
        "propensity_cv": p.cv,
    })
}

/// Full pipeline: propensity, residuals, statistic, bootstrap, inference.
pub fn run_test1(data: &Dataset, propensity: &PropensitySpec, cfg: &Test1Config, stream: RngStream) -> Result<TestReport> {
    validate_alphas(&cfg.alphas)?;
    if cfg.replications < 1 {
        return Err(Error::config(Stage::Bootstrap, "need at least one bootstrap replication"));
    }
    let prop = resolve_propensity(data, propensity, cfg.kernel, stream.child(PROPENSITY_TAG))?;
    let prep = prepare_test1(data, &prop.phat, cfg)?;
    let z = prep.statistic();
    let draws = bootstrap_z1(&prep, cfg.replications, stream)?;
    let mut diagnostics = prep.diagnostics.clone();
    diagnostics.undefined_propensity = prop.n_undefined;
    if let Some(cv) = &prep.cv {
        if cv.at_upper_edge {
            diagnostics.notes.push("cross-validated h_x sits at the widened grid's upper edge".into());
        }
    }
    let mut extra = propensity_echo(&prop);
    extra["h_x_used"] = serde_json::json!(prep.h_x);
    extra["h_f_used"] = serde_json::json!(prep.h_f);
    extra["h_x_cv"] = serde_json::json!(prep.cv);
    Ok(TestReport {
        test: "test1".into(),
        statistic: z.statistic,
        per_tau: cfg
            .taus
            .iter()
            .zip(&z.per_tau)
            .map(|(&tau, &value)| TauValue { tau, value })
            .collect(),
        argmax: z.argmax,
        critical_values: critical_values(&draws, &cfg.alphas),
        p_value: p_value(&draws, z.statistic),
        boot_draws: draws,
        diagnostics,
        config_echo: echo(cfg, extra),
        seed: stream.seed,
    })
}
