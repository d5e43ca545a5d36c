use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A sample subject to selection: `y` is observed only where `s` is true.
///
/// Matrices are stored row-major. Unobserved outcomes are `NaN`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub dx: usize,
    pub zc: Vec<f64>,
    pub dzc: usize,
    pub zd: Vec<i64>,
    pub dzd: usize,
    pub s: Vec<bool>,
}

impl Dataset {
    pub fn new(
        y: Vec<f64>,
        x: Vec<f64>,
        dx: usize,
        zc: Vec<f64>,
        dzc: usize,
        zd: Vec<i64>,
        dzd: usize,
        s: Vec<bool>,
    ) -> Result<Self> {
        let n = s.len();
        if y.len() != n {
            return Err(Error::data(format!("y has {} rows, s has {n}", y.len())));
        }
        if dx == 0 {
            return Err(Error::data("at least one outcome covariate is required"));
        }
        if x.len() != n * dx {
            return Err(Error::data(format!("x has {} values, expected {}", x.len(), n * dx)));
        }
        if zc.len() != n * dzc || zd.len() != n * dzd {
            return Err(Error::data("instrument block sizes do not match the row count"));
        }
        if dzc + dzd == 0 {
            return Err(Error::data("at least one selection covariate (zc or zd) is required"));
        }
        if let Some(i) = (0..n).find(|&i| s[i] && !y[i].is_finite()) {
            return Err(Error::data(format!("row {i}: selected observation has non-finite y")));
        }
        if let Some(i) = x.iter().chain(&zc).position(|v| !v.is_finite()) {
            return Err(Error::data(format!("non-finite covariate value at flat index {i}")));
        }
        let data = Self { y, x, dx, zc, dzc, zd, dzd, s };
        if !data.has_excluded_instrument() {
            return Err(Error::data(
                "exclusion restriction violated: every selection covariate duplicates an x column",
            ));
        }
        Ok(data)
    }

    /// Outcome-only sample where the propensity score is supplied externally.
    /// The single instrument column is filled with the row index so the
    /// exclusion check passes trivially.
    pub fn with_external_propensity(y: Vec<f64>, x: Vec<f64>, dx: usize, s: Vec<bool>) -> Result<Self> {
        let n = s.len();
        let zd = (0..n as i64).collect();
        Self::new(y, x, dx, Vec::new(), 0, zd, 1, s)
    }

    fn has_excluded_instrument(&self) -> bool {
        if self.dzd > 0 {
            return true;
        }
        (0..self.dzc).any(|c| {
            !(0..self.dx).any(|k| (0..self.n()).all(|i| self.zc[i * self.dzc + c] == self.x[i * self.dx + k]))
        })
    }

    pub fn n(&self) -> usize {
        self.s.len()
    }

    pub fn n_selected(&self) -> usize {
        self.s.iter().filter(|&&b| b).count()
    }

    #[inline]
    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dx..(i + 1) * self.dx]
    }

    #[inline]
    pub fn zc_row(&self, i: usize) -> &[f64] {
        &self.zc[i * self.dzc..(i + 1) * self.dzc]
    }

    #[inline]
    pub fn zd_row(&self, i: usize) -> &[i64] {
        &self.zd[i * self.dzd..(i + 1) * self.dzd]
    }

    pub fn selected(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.s[i]).collect()
    }

    pub fn x_column(&self, k: usize, selected_only: bool) -> Vec<f64> {
        (0..self.n())
            .filter(|&i| !selected_only || self.s[i])
            .map(|i| self.x[i * self.dx + k])
            .collect()
    }

    pub fn zc_column(&self, k: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.zc[i * self.dzc + k]).collect()
    }

    /// Copy with `y -> a*y + b` on the observed outcomes.
    pub fn affine_outcome(&self, a: f64, b: f64) -> Self {
        let mut out = self.clone();
        for (v, &sel) in out.y.iter_mut().zip(&self.s) {
            if sel {
                *v = a * *v + b;
            }
        }
        out
    }

    /// Per-coordinate bounds of the compact evaluation set: the empirical
    /// `frac` and `1-frac` quantiles of the selected `x` (full range when
    /// `frac == 0`).
    pub fn x_bounds(&self, frac: f64) -> Vec<(f64, f64)> {
        (0..self.dx)
            .map(|k| {
                let mut col = self.x_column(k, true);
                col.sort_by(f64::total_cmp);
                if col.is_empty() {
                    return (f64::NEG_INFINITY, f64::INFINITY);
                }
                if frac <= 0.0 {
                    (col[0], col[col.len() - 1])
                } else {
                    (empirical_quantile(&col, frac), empirical_quantile(&col, 1.0 - frac))
                }
            })
            .collect()
    }
}

/// Inverse-ECDF quantile (an order statistic) of a sorted slice.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty sample");
    let k = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n-1 denominator).
pub fn std_dev(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}
