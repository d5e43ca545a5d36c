//! Nadaraya–Watson conditional mean among selected observations and the
//! full-sample covariate density.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result, Stage};
use crate::kernels::KernelSpec;
use crate::parallel::map_indexed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NwEstimate {
    /// `None` when no selected observation has positive weight.
    pub mhat: Option<f64>,
    pub fhat: f64,
}

fn check(data: &Dataset, h: &[f64]) -> Result<()> {
    if h.len() != data.dx || h.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::config(
            Stage::Statistic,
            format!("need {} positive mean bandwidth(s), got {h:?}", data.dx),
        ));
    }
    Ok(())
}

/// `m̂(x0) = Σ_j s_j y_j K_j / Σ_j s_j K_j` and
/// `f̂(x0) = (n Π h)^{-1} Σ_j K_j` over all `n` rows.
pub fn nw_mean_and_density(data: &Dataset, x0: &[f64], h: &[f64], kernel: KernelSpec) -> Result<NwEstimate> {
    check(data, h)?;
    if x0.len() != data.dx {
        return Err(Error::config(Stage::Statistic, "evaluation point dimension mismatch"));
    }
    let mut u = vec![0.0; data.dx];
    let (mut num, mut den, mut dens) = (0.0, 0.0, 0.0);
    for j in 0..data.n() {
        for (k, uk) in u.iter_mut().enumerate() {
            *uk = x0[k] - data.x_row(j)[k];
        }
        let w = kernel.product_unchecked(&u, h);
        dens += w;
        if data.s[j] {
            num += w * data.y[j];
            den += w;
        }
    }
    let hprod: f64 = h.iter().product();
    Ok(NwEstimate {
        mhat: (den > 0.0).then(|| num / den),
        fhat: dens / (data.n() as f64 * hprod),
    })
}

/// Kernel weights among selected rows, cached for bootstrap refits.
#[derive(Debug, Clone, PartialEq)]
pub struct NwFit {
    pub rows: Vec<usize>,
    /// `K((x_a - x_b)/h)` for selected `a, b`, row-major.
    pub weights: Vec<f64>,
    pub row_sums: Vec<f64>,
    pub mhat: Vec<f64>,
    pub fhat: Vec<f64>,
}

impl NwFit {
    /// Refit the mean with replacement outcomes `ystar` (indexed like `rows`).
    pub fn refit(&self, ystar: &[f64]) -> Vec<f64> {
        let m = self.rows.len();
        (0..m)
            .map(|a| {
                let row = &self.weights[a * m..(a + 1) * m];
                row.iter().zip(ystar).map(|(w, y)| w * y).sum::<f64>() / self.row_sums[a]
            })
            .collect()
    }
}

/// `m̂` and `f̂_x` at every selected observation.
pub fn nw_at_selected(data: &Dataset, h: &[f64], kernel: KernelSpec) -> Result<NwFit> {
    check(data, h)?;
    let rows = data.selected();
    if rows.is_empty() {
        return Err(Error::EmptySample { stage: Stage::Statistic });
    }
    let m = rows.len();
    let n = data.n();
    let hprod: f64 = h.iter().product();
    let per_row: Vec<(Vec<f64>, f64)> = map_indexed(m, |a| {
        let xa = data.x_row(rows[a]);
        let mut u = vec![0.0; data.dx];
        let mut kern = |j: usize| {
            for (k, uk) in u.iter_mut().enumerate() {
                *uk = xa[k] - data.x_row(j)[k];
            }
            kernel.product_unchecked(&u, h)
        };
        let w: Vec<f64> = rows.iter().map(|&j| kern(j)).collect();
        let dens: f64 = (0..n).map(kern).sum();
        (w, dens / (n as f64 * hprod))
    });
    let mut weights = Vec::with_capacity(m * m);
    let mut fhat = Vec::with_capacity(m);
    for (w, f) in per_row {
        weights.extend(w);
        fhat.push(f);
    }
    let row_sums: Vec<f64> = (0..m).map(|a| weights[a * m..(a + 1) * m].iter().sum()).collect();
    let y: Vec<f64> = rows.iter().map(|&i| data.y[i]).collect();
    let mut fit = NwFit {
        rows,
        weights,
        row_sums,
        mhat: Vec::new(),
        fhat,
    };
    // self-weight K(0) > 0 keeps every row sum positive
    fit.mhat = fit.refit(&y);
    Ok(fit)
}
