//! Local polynomial conditional quantile estimation.

use serde::{Deserialize, Serialize};

use super::qreg::{self, QrError};
use crate::data::Dataset;
use crate::error::{Error, Result, Stage};
use crate::kernels::KernelSpec;
use crate::parallel::map_indexed;

/// Multi-index monomial basis `{(x - x0)^t : |t| <= r}`.
///
/// Ordering: by total degree, then lexicographically in `(t_1, ..., t_d)`
/// with `t_1` varying slowest. Index 0 is always the intercept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndexBasis {
    pub dim: usize,
    pub order: usize,
    pub exponents: Vec<Vec<u32>>,
}

impl MultiIndexBasis {
    pub fn new(dim: usize, order: usize) -> Self {
        let mut exponents = Vec::new();
        for deg in 0..=order as u32 {
            let mut t = vec![0u32; dim];
            enumerate_degree(&mut t, 0, deg, &mut exponents);
        }
        Self {
            dim,
            order,
            exponents,
        }
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    /// Evaluate all monomials at `u`, appending to `out`.
    pub fn eval_into(&self, u: &[f64], out: &mut Vec<f64>) {
        for t in &self.exponents {
            out.push(t.iter().zip(u).map(|(&e, &v)| v.powi(e as i32)).product());
        }
    }
}

fn enumerate_degree(t: &mut Vec<u32>, pos: usize, remaining: u32, out: &mut Vec<Vec<u32>>) {
    if pos + 1 == t.len() {
        t[pos] = remaining;
        out.push(t.clone());
        return;
    }
    if t.is_empty() {
        return;
    }
    for e in 0..=remaining {
        t[pos] = e;
        enumerate_degree(t, pos + 1, remaining - e, out);
    }
}

/// Result of one local fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalFit {
    /// Coefficients on `(x - x0)^t` in basis order; `coef[0]` is the
    /// fitted quantile.
    pub coef: Vec<f64>,
    pub order_used: usize,
    /// The requested order was lowered because the local design was rank
    /// deficient.
    pub order_reduced: bool,
    /// Dataset row indices interpolated by the fit.
    pub basis_rows: Vec<usize>,
    pub objective: f64,
}

impl LocalFit {
    pub fn qhat(&self) -> f64 {
        self.coef[0]
    }
}

/// Kernel-weighted local design around `x0` for selected observations.
struct LocalDesign {
    rows: Vec<usize>,
    u: Vec<f64>,
    w: Vec<f64>,
    y: Vec<f64>,
}

fn local_design(
    data: &Dataset,
    x0: &[f64],
    h: &[f64],
    kernel: KernelSpec,
    extra: Option<&[f64]>,
    candidates: &[usize],
) -> LocalDesign {
    let dx = data.dx;
    let mut out = LocalDesign {
        rows: Vec::new(),
        u: Vec::new(),
        w: Vec::new(),
        y: Vec::new(),
    };
    let mut uj = vec![0.0; dx];
    for &i in candidates {
        let xi = data.x_row(i);
        for k in 0..dx {
            uj[k] = (xi[k] - x0[k]) / h[k];
        }
        let mut wi = 1.0;
        for &v in &uj {
            wi *= kernel.eval(v);
            if wi == 0.0 {
                break;
            }
        }
        if let Some(e) = extra {
            wi *= e[i];
        }
        if wi > 0.0 {
            out.rows.push(i);
            out.u.extend_from_slice(&uj);
            out.w.push(wi);
            out.y.push(data.y[i]);
        }
    }
    out
}

fn solve_local(
    ld: &LocalDesign,
    dx: usize,
    tau: f64,
    order: usize,
    h: &[f64],
    x0: &[f64],
) -> Result<LocalFit> {
    let mut r = order;
    loop {
        let basis = MultiIndexBasis::new(dx, r);
        let p = basis.len();
        let mut design = Vec::with_capacity(ld.w.len() * p);
        for i in 0..ld.w.len() {
            basis.eval_into(&ld.u[i * dx..(i + 1) * dx], &mut design);
        }
        match qreg::solve(&design, p, &ld.y, &ld.w, tau) {
            Ok(sol) => {
                // back from scaled offsets u = (x - x0)/h to raw (x - x0)
                let coef = sol
                    .coef
                    .iter()
                    .zip(&basis.exponents)
                    .map(|(c, t)| c / t.iter().zip(h).map(|(&e, &hk)| hk.powi(e as i32)).product::<f64>())
                    .collect();
                return Ok(LocalFit {
                    coef,
                    order_used: r,
                    order_reduced: r < order,
                    basis_rows: sol.basis.iter().map(|&k| ld.rows[k]).collect(),
                    objective: sol.objective,
                });
            }
            Err(QrError::Insufficient { available, needed }) if r == order => {
                return Err(Error::InsufficientLocalData {
                    point: x0.to_vec(),
                    available,
                    needed,
                })
            }
            Err(QrError::Insufficient { .. } | QrError::RankDeficient { .. }) if r > 0 => r -= 1,
            Err(QrError::Insufficient { available, needed }) => {
                return Err(Error::InsufficientLocalData {
                    point: x0.to_vec(),
                    available,
                    needed,
                })
            }
            Err(QrError::RankDeficient { .. }) => {
                return Err(Error::InsufficientLocalData {
                    point: x0.to_vec(),
                    available: 0,
                    needed: 1,
                })
            }
            Err(QrError::Numerical(msg)) => {
                return Err(Error::Numerical {
                    stage: Stage::Quantile,
                    msg: format!("at {x0:?}: {msg}"),
                })
            }
        }
    }
}

fn check_bandwidth(h: &[f64], dx: usize) -> Result<()> {
    if h.len() != dx || h.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::config(
            Stage::Quantile,
            format!("need {dx} positive quantile bandwidth(s), got {h:?}"),
        ));
    }
    Ok(())
}

/// Local polynomial τ-quantile fit at `x0` on the selected observations.
pub fn fit_local_poly_quantile(
    data: &Dataset,
    tau: f64,
    x0: &[f64],
    h: &[f64],
    order: usize,
    kernel: KernelSpec,
) -> Result<LocalFit> {
    check_bandwidth(h, data.dx)?;
    let ld = local_design(data, x0, h, kernel, None, &data.selected());
    solve_local(&ld, data.dx, tau, order, h, x0)
}

/// Local polynomial fit restricted to observations with propensity near
/// `delta`: the kernel weight is multiplied by `K((p̂_i - δ)/h_p)`.
#[allow(clippy::too_many_arguments)]
pub fn fit_local_poly_quantile_near_one(
    data: &Dataset,
    tau: f64,
    x0: &[f64],
    h: &[f64],
    order: usize,
    kernel: KernelSpec,
    phat: &[f64],
    delta: f64,
    h_p: f64,
) -> Result<LocalFit> {
    check_bandwidth(h, data.dx)?;
    if !(h_p > 0.0) {
        return Err(Error::config(Stage::Quantile, "h_p must be positive"));
    }
    let extra: Vec<f64> = phat.iter().map(|&p| kernel.eval((p - delta) / h_p)).collect();
    let selected = data.selected();
    let near = selected.iter().filter(|&&i| extra[i] > 0.0).count();
    let needed = MultiIndexBasis::new(data.dx, order).len();
    if near < needed {
        return Err(Error::ThinSet {
            stage: Stage::Quantile,
            count: near,
            hint: "increase h_p or lower delta".into(),
        });
    }
    let ld = local_design(data, x0, h, kernel, Some(&extra), &selected);
    solve_local(&ld, data.dx, tau, order, h, x0)
}

/// Treatment of residuals that are exactly zero, which happens when a row
/// is one of the interpolated points of its own local fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieRule {
    /// `1{û ≤ 0}` taken literally: a zero residual counts as a hit.
    Inclusive,
    /// A zero residual contributes its expectation `τ`, so the centred
    /// indicator is 0.
    Centred,
    /// A zero residual is a hit with probability `τ`, drawn from a fixed
    /// hash of `(row, τ)` so the statistic stays a function of the data.
    #[default]
    Randomized,
}

fn tie_uniform(row: usize, tau: f64) -> f64 {
    let h = crate::rng::splitmix64(crate::rng::splitmix64(row as u64) ^ tau.to_bits());
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `1{û ≤ 0} − τ` for observation `row` under the given tie rule.
#[inline]
pub fn centred_indicator(u: f64, tau: f64, row: usize, ties: TieRule) -> f64 {
    let hit = if u == 0.0 {
        match ties {
            TieRule::Inclusive => true,
            TieRule::Centred => return 0.0,
            TieRule::Randomized => tie_uniform(row, tau) < tau,
        }
    } else {
        u < 0.0
    };
    if hit {
        1.0 - tau
    } else {
        -tau
    }
}

/// Fits at every selected observation for one τ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileFit {
    pub tau: f64,
    /// Selected row indices, in dataset order.
    pub rows: Vec<usize>,
    pub qhat: Vec<f64>,
    pub coeffs: Vec<Vec<f64>>,
    /// `y_i - q̂_τ(x_i)` for every row (`NaN` where unselected). Rows
    /// interpolated by their own fit carry an exact zero.
    pub uhat: Vec<f64>,
    pub reduced_order_points: usize,
}

/// Residuals `û_τ(x_i)` at each selected observation for every τ in the
/// grid. The local design at each point is built once and shared across τ.
pub fn quantile_residuals(
    data: &Dataset,
    taus: &[f64],
    h: &[f64],
    order: usize,
    kernel: KernelSpec,
) -> Result<Vec<QuantileFit>> {
    quantile_residuals_at(data, taus, h, order, kernel, &data.selected())
}

/// [`quantile_residuals`] restricted to the selected rows in `at`; the
/// fits themselves still use every selected observation.
pub fn quantile_residuals_at(
    data: &Dataset,
    taus: &[f64],
    h: &[f64],
    order: usize,
    kernel: KernelSpec,
    at: &[usize],
) -> Result<Vec<QuantileFit>> {
    check_bandwidth(h, data.dx)?;
    if let Some(t) = taus.iter().find(|&&t| !(t > 0.0 && t < 1.0)) {
        return Err(Error::config(Stage::Quantile, format!("tau {t} outside (0, 1)")));
    }
    let selected = data.selected();
    if selected.is_empty() {
        return Err(Error::EmptySample { stage: Stage::Quantile });
    }
    if at.iter().any(|&i| i >= data.n() || !data.s[i]) {
        return Err(Error::config(Stage::Quantile, "residuals requested at an unselected row"));
    }
    let candidates = sorted_candidates(data, &selected);
    let per_point: Vec<Result<Vec<LocalFit>>> = map_indexed(at.len(), |k| {
        let i = at[k];
        let x0 = data.x_row(i);
        let ld = local_design_windowed(data, x0, h, kernel, &candidates);
        taus.iter()
            .map(|&tau| solve_local(&ld, data.dx, tau, order, h, x0))
            .collect()
    });
    let mut fits: Vec<QuantileFit> = taus
        .iter()
        .map(|&tau| QuantileFit {
            tau,
            rows: at.to_vec(),
            qhat: Vec::with_capacity(at.len()),
            coeffs: Vec::with_capacity(at.len()),
            uhat: vec![f64::NAN; data.n()],
            reduced_order_points: 0,
        })
        .collect();
    for (k, res) in per_point.into_iter().enumerate() {
        let i = at[k];
        for (t, fit) in res?.into_iter().enumerate() {
            let f = &mut fits[t];
            f.uhat[i] = if fit.basis_rows.contains(&i) {
                0.0
            } else {
                data.y[i] - fit.qhat()
            };
            f.qhat.push(fit.qhat());
            if fit.order_reduced {
                f.reduced_order_points += 1;
            }
            f.coeffs.push(fit.coef);
        }
    }
    Ok(fits)
}

/// Selected rows sorted by the first covariate, for windowed scans.
pub(crate) struct SortedRows {
    pub rows: Vec<usize>,
    pub key: Vec<f64>,
}

pub(crate) fn sorted_candidates(data: &Dataset, selected: &[usize]) -> SortedRows {
    let mut rows = selected.to_vec();
    rows.sort_by(|&a, &b| data.x_row(a)[0].total_cmp(&data.x_row(b)[0]).then(a.cmp(&b)));
    let key = rows.iter().map(|&i| data.x_row(i)[0]).collect();
    SortedRows { rows, key }
}

fn local_design_windowed(
    data: &Dataset,
    x0: &[f64],
    h: &[f64],
    kernel: KernelSpec,
    sorted: &SortedRows,
) -> LocalDesign {
    let lo = sorted.key.partition_point(|&v| v < x0[0] - h[0]);
    let hi = sorted.key.partition_point(|&v| v <= x0[0] + h[0]);
    let mut window: Vec<usize> = sorted.rows[lo..hi].to_vec();
    // dataset order keeps tie-breaking independent of the window scan
    window.sort_unstable();
    local_design(data, x0, h, kernel, None, &window)
}
