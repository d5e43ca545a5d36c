//! Kernel estimator of the conditional CDF of `p̂` given `x` and `û_τ = 0`
//! among selected observations.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result, Stage};
use crate::kernels::KernelSpec;
use crate::parallel::map_indexed;

/// `h_f[0]` smooths the residual, `h_f[1..]` the covariates.
fn check(data: &Dataset, h_f: &[f64]) -> Result<()> {
    if h_f.len() != data.dx + 1 || h_f.iter().any(|&h| !(h > 0.0)) {
        return Err(Error::config(
            Stage::ConditionalCdf,
            format!("need {} positive bandwidths (residual then x), got {h_f:?}", data.dx + 1),
        ));
    }
    Ok(())
}

#[inline]
fn weight(data: &Dataset, uhat: &[f64], i: usize, j: usize, h_f: &[f64], kernel: KernelSpec) -> f64 {
    let mut w = kernel.eval(uhat[j] / h_f[0]);
    if w == 0.0 {
        return 0.0;
    }
    let (xi, xj) = (data.x_row(i), data.x_row(j));
    for k in 0..data.dx {
        w *= kernel.eval((xj[k] - xi[k]) / h_f[k + 1]);
        if w == 0.0 {
            return 0.0;
        }
    }
    w
}

/// `F̂(p | x_i, û = 0, s = 1)`; `None` when the kernel denominator vanishes.
pub fn fit_cond_cdf(
    data: &Dataset,
    uhat: &[f64],
    phat: &[f64],
    p: f64,
    i: usize,
    h_f: &[f64],
    kernel: KernelSpec,
) -> Result<Option<f64>> {
    check(data, h_f)?;
    if !data.s[i] {
        return Err(Error::config(Stage::ConditionalCdf, format!("row {i} is not selected")));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..data.n() {
        if !data.s[j] || !phat[j].is_finite() {
            continue;
        }
        let w = weight(data, uhat, i, j, h_f, kernel);
        den += w;
        if phat[j] <= p {
            num += w;
        }
    }
    Ok((den > 0.0).then(|| (num / den).clamp(0.0, 1.0)))
}

/// `F̂` at every selected row (`rows`) and every cutpoint, row-major
/// `rows.len() × cutpoints.len()`. Undefined rows hold zeros and are flagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfTable {
    pub cutpoints: Vec<f64>,
    pub values: Vec<f64>,
    pub undefined: Vec<bool>,
    pub n_undefined: usize,
}

impl CdfTable {
    #[inline]
    pub fn get(&self, row: usize, cut: usize) -> f64 {
        self.values[row * self.cutpoints.len() + cut]
    }
}

pub fn cond_cdf_table(
    data: &Dataset,
    rows: &[usize],
    uhat: &[f64],
    phat: &[f64],
    cutpoints: &[f64],
    h_f: &[f64],
    kernel: KernelSpec,
) -> Result<CdfTable> {
    check(data, h_f)?;
    let k = cutpoints.len();
    let per_row: Vec<Option<Vec<f64>>> = map_indexed(rows.len(), |a| {
        let i = rows[a];
        let mut den = 0.0;
        let mut mass = vec![0.0; k];
        for &j in rows {
            if !phat[j].is_finite() {
                continue;
            }
            let w = weight(data, uhat, i, j, h_f, kernel);
            if w == 0.0 {
                continue;
            }
            den += w;
            // first cutpoint at or above p̂_j
            let c = cutpoints.partition_point(|&c| c < phat[j]);
            if c < k {
                mass[c] += w;
            }
        }
        if den > 0.0 {
            let mut acc = 0.0;
            Some(
                mass.into_iter()
                    .map(|m| {
                        acc += m;
                        (acc / den).clamp(0.0, 1.0)
                    })
                    .collect(),
            )
        } else {
            None
        }
    });
    let mut values = Vec::with_capacity(rows.len() * k);
    let mut undefined = Vec::with_capacity(rows.len());
    for r in per_row {
        match r {
            Some(v) => {
                values.extend(v);
                undefined.push(false);
            }
            None => {
                values.extend(std::iter::repeat_n(0.0, k));
                undefined.push(true);
            }
        }
    }
    let n_undefined = undefined.iter().filter(|&&u| u).count();
    Ok(CdfTable {
        cutpoints: cutpoints.to_vec(),
        values,
        undefined,
        n_undefined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance() -> (Dataset, Vec<f64>, Vec<f64>) {
        let x = vec![0.0, 0.2, 0.5, 0.9];
        let d = Dataset::with_external_propensity(vec![1.0, 2.0, 3.0, 4.0], x, 1, vec![true; 4]).unwrap();
        let uhat = vec![0.0, 0.1, -0.3, 0.05];
        let phat = vec![0.3, 0.6, 0.45, 0.9];
        (d, uhat, phat)
    }

    #[test]
    fn extremes() {
        let (d, u, p) = instance();
        let h = [1.0, 1.0];
        let hi = fit_cond_cdf(&d, &u, &p, 0.95, 1, &h, KernelSpec::Epanechnikov).unwrap();
        let lo = fit_cond_cdf(&d, &u, &p, 0.1, 1, &h, KernelSpec::Epanechnikov).unwrap();
        assert_eq!(hi, Some(1.0));
        assert_eq!(lo, Some(0.0));
    }

    #[test]
    fn hand_instance() {
        let (d, u, p) = instance();
        let h = [0.5, 0.6];
        let k = |v: f64| if v.abs() <= 1.0 { 0.75 * (1.0 - v * v) } else { 0.0 };
        // evaluation at i=1 (x=0.2), p=0.5: rows with p̂ <= 0.5 are 0 and 2
        let w: Vec<f64> = (0..4).map(|j| k(u[j] / 0.5) * k((d.x[j] - 0.2) / 0.6)).collect();
        let expect = (w[0] + w[2]) / w.iter().sum::<f64>();
        let got = fit_cond_cdf(&d, &u, &p, 0.5, 1, &h, KernelSpec::Epanechnikov).unwrap().unwrap();
        assert!((got - expect).abs() < 1e-15);
        let table = cond_cdf_table(&d, &[0, 1, 2, 3], &u, &p, &[0.5], &h, KernelSpec::Epanechnikov).unwrap();
        assert!((table.get(1, 0) - expect).abs() < 1e-15);
    }

    #[test]
    fn table_matches_pointwise_and_is_monotone() {
        let (d, u, p) = instance();
        let h = [0.4, 0.5];
        let cuts = [0.2, 0.3, 0.45, 0.5, 0.6, 0.9, 1.0];
        let table = cond_cdf_table(&d, &[0, 1, 2, 3], &u, &p, &cuts, &h, KernelSpec::Epanechnikov).unwrap();
        for r in 0..4 {
            let mut prev = 0.0;
            for (c, &cut) in cuts.iter().enumerate() {
                let point = fit_cond_cdf(&d, &u, &p, cut, r, &h, KernelSpec::Epanechnikov).unwrap();
                match point {
                    Some(v) => assert!((table.get(r, c) - v).abs() < 1e-12),
                    None => assert!(table.undefined[r]),
                }
                assert!(table.get(r, c) >= prev);
                prev = table.get(r, c);
            }
        }
    }

    #[test]
    fn vanishing_denominator_flagged() {
        let (d, _, p) = instance();
        let u = vec![5.0; 4];
        let table = cond_cdf_table(&d, &[0, 1, 2, 3], &u, &p, &[0.5], &[0.5, 0.5], KernelSpec::Epanechnikov).unwrap();
        assert_eq!(table.n_undefined, 4);
        assert_eq!(fit_cond_cdf(&d, &u, &p, 0.5, 0, &[0.5, 0.5], KernelSpec::Epanechnikov).unwrap(), None);
    }
}
