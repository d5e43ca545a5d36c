//! Bandwidth rules and cross-validation.

use serde::{Deserialize, Serialize};

use super::locpoly::{sorted_candidates, MultiIndexBasis};
use super::qreg;
use crate::data::{std_dev, Dataset};
use crate::error::{Error, Result, Stage};
use crate::kernels::KernelSpec;
use crate::parallel::map_indexed;

/// Tuning parameters of both tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthPlan {
    /// Quantile-regression bandwidth per covariate.
    pub h_x: Vec<f64>,
    /// Local polynomial order.
    pub order: usize,
    /// Conditional-CDF bandwidths per τ: `[h_u, h_x...]`.
    pub h_f: Vec<Vec<f64>>,
    pub h_p: Option<f64>,
    /// Trimming width `H`; `delta = 1 - H`.
    pub big_h: Option<f64>,
    pub delta: Option<f64>,
    pub eta: Option<f64>,
    pub epsilon: f64,
    pub c_x: f64,
}

impl BandwidthPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::config(Stage::Bandwidth, format!("{what} must be positive")));
        if self.h_x.is_empty() || self.h_x.iter().any(|&h| !(h > 0.0)) {
            return bad("h_x");
        }
        if self.h_f.iter().flatten().any(|&h| !(h > 0.0)) {
            return bad("h_F");
        }
        if self.order == 0 {
            return Err(Error::config(Stage::Bandwidth, "polynomial order must be at least 1"));
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon");
        }
        if let Some(hp) = self.h_p {
            if !(hp > 0.0) {
                return bad("h_p");
            }
        }
        if let (Some(h), Some(d)) = (self.big_h, self.delta) {
            if (d - (1.0 - h)).abs() > 1e-12 {
                return Err(Error::config(Stage::Bandwidth, "delta must equal 1 - H"));
            }
        }
        if let (Some(h), Some(hp)) = (self.big_h, self.h_p) {
            if h <= hp {
                return Err(Error::config(Stage::Bandwidth, "trimming width H must exceed h_p"));
            }
        }
        if let Some(e) = self.eta {
            if !(0.0..1.0).contains(&e) {
                return Err(Error::config(Stage::Bandwidth, "eta must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

fn sd_checked(v: &[f64], name: impl Fn() -> String) -> Result<f64> {
    let sd = std_dev(v);
    if !(sd > 0.0) {
        return Err(Error::data(format!("{} has zero variance", name())));
    }
    Ok(sd)
}

/// `h_x = c · sd(x_k) · n^{-1/3}` per covariate, over selected rows.
pub fn rule_of_thumb_hx(data: &Dataset, c_x: f64) -> Result<Vec<f64>> {
    let n = data.n();
    if n < 2 {
        return Err(Error::config(Stage::Bandwidth, "rule-of-thumb bandwidths need n >= 2"));
    }
    if !(c_x > 0.0) {
        return Err(Error::config(Stage::Bandwidth, "c_x must be positive"));
    }
    let rate = (n as f64).powf(-1.0 / 3.0);
    (0..data.dx)
        .map(|k| Ok(c_x * sd_checked(&data.x_column(k, true), || format!("x column {k}"))? * rate))
        .collect()
}

/// `[2.2 · sd(û_τ), 2.2 · sd(x_k)...] · n^{-1/6}` over selected rows.
pub fn rule_of_thumb_hf(data: &Dataset, uhat: &[f64]) -> Result<Vec<f64>> {
    let n = data.n();
    if n < 2 {
        return Err(Error::config(Stage::Bandwidth, "rule-of-thumb bandwidths need n >= 2"));
    }
    let rate = 2.2 * (n as f64).powf(-1.0 / 6.0);
    let u: Vec<f64> = data.selected().iter().map(|&i| uhat[i]).collect();
    let mut out = vec![rate * sd_checked(&u, || "quantile residual".into())?];
    for k in 0..data.dx {
        out.push(rate * sd_checked(&data.x_column(k, true), || format!("x column {k}"))?);
    }
    Ok(out)
}

/// Both rules at once: `h_x` and one `h_F` vector per residual set.
pub fn rule_of_thumb_bandwidths(data: &Dataset, c_x: f64, uhats: &[&[f64]]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let hx = rule_of_thumb_hx(data, c_x)?;
    let hf = uhats.iter().map(|u| rule_of_thumb_hf(data, u)).collect::<Result<_>>()?;
    Ok((hx, hf))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvBandwidth {
    pub h_x: Vec<f64>,
    /// Multipliers of `sd(x_k)` that were scored.
    pub grid: Vec<f64>,
    pub scores: Vec<f64>,
    pub widened: bool,
    /// The minimum sat on the upper edge even after widening.
    pub at_upper_edge: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub grid: Vec<f64>,
    pub tau: f64,
    /// Share of rows allowed to lack a leave-one-out fit.
    pub max_undefined: f64,
}

impl Default for CvOptions {
    fn default() -> Self {
        let (lo, hi, m) = (0.05f64, 2.0f64, 16);
        let grid = (0..m)
            .map(|k| (lo.ln() + (hi / lo).ln() * k as f64 / (m - 1) as f64).exp())
            .collect();
        Self {
            grid,
            tau: 0.5,
            max_undefined: 0.05,
        }
    }
}

/// Leave-one-out local-linear check-loss CV; the selected bandwidth is
/// reused for the higher order fit, which undersmooths it.
pub fn cv_bandwidth_undersmoothed(
    data: &Dataset,
    order: usize,
    kernel: KernelSpec,
    opts: &CvOptions,
) -> Result<CvBandwidth> {
    if order <= 1 {
        return Err(Error::config(Stage::Bandwidth, "undersmoothed cross-validation needs order > 1"));
    }
    if opts.grid.is_empty() || opts.grid.iter().any(|&g| !(g > 0.0)) {
        return Err(Error::config(Stage::Bandwidth, "cross-validation grid must be non-empty and positive"));
    }
    let sds = (0..data.dx)
        .map(|k| sd_checked(&data.x_column(k, true), || format!("x column {k}")))
        .collect::<Result<Vec<f64>>>()?;
    let mut grid = opts.grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.len() == 1 {
        let h_x = sds.iter().map(|s| s * grid[0]).collect();
        return Ok(CvBandwidth {
            h_x,
            scores: vec![cv_score(data, &sds, grid[0], kernel, opts)],
            grid,
            widened: false,
            at_upper_edge: false,
        });
    }
    let mut scores: Vec<f64> = grid.iter().map(|&g| cv_score(data, &sds, g, kernel, opts)).collect();
    let argmin = |s: &[f64]| (0..s.len()).min_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
    let mut best = argmin(&scores);
    if !scores[best].is_finite() {
        return Err(Error::Numerical {
            stage: Stage::Bandwidth,
            msg: "no grid bandwidth leaves enough local data for leave-one-out fits".into(),
        });
    }
    let mut widened = false;
    let last = grid.len() - 1;
    if best == 0 || best == last {
        widened = true;
        let ratio = grid[1] / grid[0];
        let extra: Vec<f64> = if best == 0 {
            (1..=4).map(|k| grid[0] / ratio.powi(k)).rev().collect()
        } else {
            (1..=4).map(|k| grid[last] * ratio.powi(k)).collect()
        };
        let extra_scores: Vec<f64> = extra.iter().map(|&g| cv_score(data, &sds, g, kernel, opts)).collect();
        if best == 0 {
            grid.splice(0..0, extra);
            scores.splice(0..0, extra_scores);
        } else {
            grid.extend(extra);
            scores.extend(extra_scores);
        }
        best = argmin(&scores);
        if best == 0 {
            return Err(Error::CvBoundary { h: grid[0] });
        }
    }
    let at_upper_edge = best == grid.len() - 1;
    Ok(CvBandwidth {
        h_x: sds.iter().map(|s| s * grid[best]).collect(),
        grid,
        scores,
        widened,
        at_upper_edge,
    })
}

fn cv_score(data: &Dataset, sds: &[f64], mult: f64, kernel: KernelSpec, opts: &CvOptions) -> f64 {
    let h: Vec<f64> = sds.iter().map(|s| s * mult).collect();
    let basis = MultiIndexBasis::new(data.dx, 1);
    let p = basis.len();
    let selected = data.selected();
    let sorted = sorted_candidates(data, &selected);
    let losses: Vec<Option<f64>> = map_indexed(selected.len(), |a| {
        let i = selected[a];
        let x0 = data.x_row(i);
        let lo = sorted.key.partition_point(|&v| v < x0[0] - h[0]);
        let hi = sorted.key.partition_point(|&v| v <= x0[0] + h[0]);
        let mut window: Vec<usize> = sorted.rows[lo..hi].iter().copied().filter(|&j| j != i).collect();
        window.sort_unstable();
        let (mut design, mut y, mut w) = (Vec::new(), Vec::new(), Vec::new());
        let mut u = vec![0.0; data.dx];
        for j in window {
            let xj = data.x_row(j);
            for k in 0..data.dx {
                u[k] = (xj[k] - x0[k]) / h[k];
            }
            let wk: f64 = u.iter().map(|&v| kernel.eval(v)).product();
            if wk > 0.0 {
                basis.eval_into(&u, &mut design);
                y.push(data.y[j]);
                w.push(wk);
            }
        }
        let sol = qreg::solve(&design, p, &y, &w, opts.tau).ok()?;
        Some(qreg::rho(data.y[i] - sol.coef[0], opts.tau))
    });
    let undefined = losses.iter().filter(|l| l.is_none()).count();
    if undefined as f64 > opts.max_undefined * losses.len() as f64 {
        return f64::INFINITY;
    }
    let defined: Vec<f64> = losses.into_iter().flatten().collect();
    defined.iter().sum::<f64>() / defined.len() as f64
}

/// How the quantile-regression bandwidth is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HxChoice {
    RuleOfThumb { c: f64 },
    Fixed(Vec<f64>),
    CrossValidated(CvOptions),
}

/// Resolve `h_x`; the CV record is returned when cross-validation ran.
pub fn resolve_hx(
    data: &Dataset,
    choice: &HxChoice,
    order: usize,
    kernel: KernelSpec,
) -> Result<(Vec<f64>, Option<CvBandwidth>)> {
    match choice {
        HxChoice::RuleOfThumb { c } => Ok((rule_of_thumb_hx(data, *c)?, None)),
        HxChoice::Fixed(h) => {
            if h.len() != data.dx || h.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::config(
                    Stage::Bandwidth,
                    format!("need {} positive h_x value(s), got {h:?}", data.dx),
                ));
            }
            Ok((h.clone(), None))
        }
        HxChoice::CrossValidated(opts) => {
            let cv = cv_bandwidth_undersmoothed(data, order, kernel, opts)?;
            Ok((cv.h_x.clone(), Some(cv)))
        }
    }
}
