//! Local-constant propensity score with mixed continuous/discrete kernels.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::{std_dev, Dataset};
use crate::error::{Error, Result, Stage};
use crate::kernels::{DiscreteKernelSpec, KernelSpec};
use crate::parallel::map_indexed;
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityFit {
    /// `p̂_i` per observation; `NaN` where the kernel denominator vanished.
    pub phat: Vec<f64>,
    pub n_undefined: usize,
    pub h_z: Vec<f64>,
    pub lambda: Vec<f64>,
}

fn check_params(data: &Dataset, h_z: &[f64], lambda: &DiscreteKernelSpec) -> Result<()> {
    if data.n() < 2 {
        return Err(Error::config(Stage::Propensity, "need at least two observations"));
    }
    if h_z.len() != data.dzc || h_z.iter().any(|&h| !(h > 0.0)) {
        return Err(Error::config(
            Stage::Propensity,
            format!("need {} positive continuous bandwidth(s), got {h_z:?}", data.dzc),
        ));
    }
    if lambda.lambda.len() != data.dzd {
        return Err(Error::config(
            Stage::Propensity,
            format!("need {} discrete smoothing parameter(s), got {}", data.dzd, lambda.lambda.len()),
        ));
    }
    Ok(())
}

#[inline]
fn weight(data: &Dataset, i: usize, j: usize, h_z: &[f64], lambda: &DiscreteKernelSpec, kernel: KernelSpec) -> f64 {
    let (zi, zj) = (data.zc_row(i), data.zc_row(j));
    let mut w = 1.0;
    for k in 0..data.dzc {
        w *= kernel.eval((zj[k] - zi[k]) / h_z[k]);
        if w == 0.0 {
            return 0.0;
        }
    }
    w * lambda.eval_unchecked(data.zd_row(i), data.zd_row(j))
}

fn estimate(
    data: &Dataset,
    h_z: &[f64],
    lambda: &DiscreteKernelSpec,
    kernel: KernelSpec,
    leave_one_out: bool,
) -> Vec<Option<f64>> {
    map_indexed(data.n(), |i| {
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..data.n() {
            if leave_one_out && j == i {
                continue;
            }
            let w = weight(data, i, j, h_z, lambda, kernel);
            den += w;
            if data.s[j] {
                num += w;
            }
        }
        (den > 0.0).then(|| (num / den).clamp(0.0, 1.0))
    })
}

/// `p̂(z_i) = Σ_j s_j W_ij / Σ_j W_ij` at every observation.
pub fn fit_propensity(
    data: &Dataset,
    h_z: &[f64],
    lambda: &DiscreteKernelSpec,
    kernel: KernelSpec,
) -> Result<PropensityFit> {
    check_params(data, h_z, lambda)?;
    Ok(pack(estimate(data, h_z, lambda, kernel, false), h_z, lambda))
}

/// Leave-one-out variant: observation `i` is excluded from its own sums.
pub fn fit_propensity_loo(
    data: &Dataset,
    h_z: &[f64],
    lambda: &DiscreteKernelSpec,
    kernel: KernelSpec,
) -> Result<PropensityFit> {
    check_params(data, h_z, lambda)?;
    Ok(pack(estimate(data, h_z, lambda, kernel, true), h_z, lambda))
}

fn pack(est: Vec<Option<f64>>, h_z: &[f64], lambda: &DiscreteKernelSpec) -> PropensityFit {
    let n_undefined = est.iter().filter(|v| v.is_none()).count();
    PropensityFit {
        phat: est.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
        n_undefined,
        h_z: h_z.to_vec(),
        lambda: lambda.lambda.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityCv {
    pub h_z: Vec<f64>,
    pub lambda: Vec<f64>,
    pub reps_used: usize,
    pub reps_dropped: usize,
}

/// Least-squares leave-one-out CV on random subsets; the coordinate-wise
/// median over converged replications is returned.
pub fn cv_bandwidth_propensity(
    data: &Dataset,
    subset_size: usize,
    reps: usize,
    kernel: KernelSpec,
    stream: RngStream,
) -> Result<PropensityCv> {
    let n = data.n();
    if n < 3 {
        return Err(Error::config(Stage::Propensity, "cross-validation needs at least three observations"));
    }
    if reps == 0 || subset_size < 3 {
        return Err(Error::config(Stage::Propensity, "need reps >= 1 and subset size >= 3"));
    }
    for k in 0..data.dzc {
        if !(std_dev(&data.zc_column(k)) > 0.0) {
            return Err(Error::data(format!("continuous selection covariate {k} has zero variance")));
        }
    }
    let full = n <= subset_size;
    let reps = if full { 1 } else { reps };
    let results: Vec<Option<(Vec<f64>, Vec<f64>)>> = map_indexed(reps, |r| {
        let rows: Vec<usize> = if full {
            (0..n).collect()
        } else {
            let mut rng = stream.child(r as u64).rng();
            let mut v = sample(&mut rng, n, subset_size).into_vec();
            v.sort_unstable();
            v
        };
        CvProblem::new(data, rows, kernel).optimize()
    });
    let ok: Vec<(Vec<f64>, Vec<f64>)> = results.into_iter().flatten().collect();
    let dropped = reps - ok.len();
    if ok.is_empty() || 2 * dropped > reps {
        return Err(Error::Numerical {
            stage: Stage::Propensity,
            msg: format!("cross-validation failed to converge on {dropped} of {reps} subsets"),
        });
    }
    let h_z = (0..data.dzc)
        .map(|k| median(ok.iter().map(|(h, _)| h[k]).collect()))
        .collect();
    let lambda = (0..data.dzd)
        .map(|k| median(ok.iter().map(|(_, l)| l[k]).collect()))
        .collect();
    Ok(PropensityCv {
        h_z,
        lambda,
        reps_used: ok.len(),
        reps_dropped: dropped,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Pairwise factors on a subset, so one coordinate can be varied while the
/// others stay cached.
struct CvProblem {
    m: usize,
    s: Vec<f64>,
    dzc: usize,
    dzd: usize,
    /// per continuous coordinate, `|z_i - z_j|` row-major `m×m`
    dist: Vec<Vec<f64>>,
    /// per discrete coordinate, category mismatch indicator
    mismatch: Vec<Vec<bool>>,
    sd: Vec<f64>,
    kernel: KernelSpec,
}

const H_GRID: usize = 24;
const H_LO: f64 = 0.02;
const H_HI: f64 = 20.0;
const LAMBDA_STEPS: usize = 20;
const MAX_SWEEPS: usize = 6;

impl CvProblem {
    fn new(data: &Dataset, rows: Vec<usize>, kernel: KernelSpec) -> Self {
        let m = rows.len();
        let mut dist = Vec::with_capacity(data.dzc);
        let mut sd = Vec::with_capacity(data.dzc);
        for k in 0..data.dzc {
            let col: Vec<f64> = rows.iter().map(|&i| data.zc_row(i)[k]).collect();
            sd.push(std_dev(&col).max(f64::MIN_POSITIVE));
            let mut d = vec![0.0; m * m];
            for a in 0..m {
                for b in 0..m {
                    d[a * m + b] = (col[a] - col[b]).abs();
                }
            }
            dist.push(d);
        }
        let mut mismatch = Vec::with_capacity(data.dzd);
        for k in 0..data.dzd {
            let col: Vec<i64> = rows.iter().map(|&i| data.zd_row(i)[k]).collect();
            let mut d = vec![false; m * m];
            for a in 0..m {
                for b in 0..m {
                    d[a * m + b] = col[a] != col[b];
                }
            }
            mismatch.push(d);
        }
        Self {
            m,
            s: rows.iter().map(|&i| if data.s[i] { 1.0 } else { 0.0 }).collect(),
            dzc: data.dzc,
            dzd: data.dzd,
            dist,
            mismatch,
            sd,
            kernel,
        }
    }

    fn factor(&self, coord: usize, value: f64, idx: usize) -> f64 {
        if coord < self.dzc {
            self.kernel.eval(self.dist[coord][idx] / value)
        } else if self.mismatch[coord - self.dzc][idx] {
            value
        } else {
            1.0
        }
    }

    /// Product of all factors except `skip`.
    fn partial(&self, theta: &[f64], skip: usize) -> Vec<f64> {
        let mut w = vec![1.0; self.m * self.m];
        for c in 0..self.dzc + self.dzd {
            if c == skip {
                continue;
            }
            for (idx, wv) in w.iter_mut().enumerate() {
                if *wv != 0.0 {
                    *wv *= self.factor(c, theta[c], idx);
                }
            }
        }
        w
    }

    /// Mean squared LOO error; `None` when over half the points have no
    /// neighbours.
    fn objective(&self, partial: &[f64], coord: usize, value: f64) -> Option<f64> {
        let m = self.m;
        let (mut sse, mut used) = (0.0, 0usize);
        for a in 0..m {
            let (mut num, mut den) = (0.0, 0.0);
            for b in 0..m {
                if a == b {
                    continue;
                }
                let idx = a * m + b;
                let pw = partial[idx];
                if pw == 0.0 {
                    continue;
                }
                let w = pw * self.factor(coord, value, idx);
                den += w;
                num += w * self.s[b];
            }
            if den > 0.0 {
                sse += (self.s[a] - num / den).powi(2);
                used += 1;
            }
        }
        (2 * used > m).then(|| sse / used as f64)
    }

    fn optimize(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let dims = self.dzc + self.dzd;
        let mut theta: Vec<f64> = (0..dims)
            .map(|c| {
                if c < self.dzc {
                    1.06 * self.sd[c] * (self.m as f64).powf(-0.2)
                } else {
                    0.5
                }
            })
            .collect();
        let mut best = f64::INFINITY;
        for _ in 0..MAX_SWEEPS {
            let before = best;
            for c in 0..dims {
                let partial = self.partial(&theta, c);
                let f = |v: f64| self.objective(&partial, c, v).unwrap_or(f64::INFINITY);
                let (v, fv) = if c < self.dzc {
                    let lo = (self.sd[c] * H_LO).ln();
                    let hi = (self.sd[c] * H_HI).ln();
                    let (t, ft) = grid_then_golden(|t| f(t.exp()), lo, hi, H_GRID);
                    (t.exp(), ft)
                } else {
                    grid_then_golden(f, 0.0, 1.0, LAMBDA_STEPS + 1)
                };
                if fv < best || !best.is_finite() {
                    theta[c] = v;
                    best = fv.min(best);
                }
            }
            if !best.is_finite() {
                return None;
            }
            if before.is_finite() && before - best <= 1e-6 * before.abs().max(1e-12) {
                return Some((theta[..self.dzc].to_vec(), theta[self.dzc..].to_vec()));
            }
        }
        None
    }
}

/// Minimise on an even grid over `[lo, hi]`, then refine by golden section
/// between the neighbours of the best grid point.
fn grid_then_golden(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> (f64, f64) {
    let step = (hi - lo) / (points - 1) as f64;
    let vals: Vec<f64> = (0..points).map(|k| f(lo + step * k as f64)).collect();
    let k = (0..points).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    let (mut a, mut b) = (lo + step * k.saturating_sub(1) as f64, lo + step * (k + 1).min(points - 1) as f64);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..20 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let mut best = (lo + step * k as f64, vals[k]);
    for cand in [(c, fc), (d, fd)] {
        if cand.1 < best.1 {
            best = cand;
        }
    }
    best
}

/// Where the propensity score comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensitySpec {
    /// Known scores, one per observation.
    Given(Vec<f64>),
    Fixed { h_z: Vec<f64>, lambda: Vec<f64> },
    CrossValidated { subset_size: usize, reps: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedPropensity {
    pub phat: Vec<f64>,
    pub n_undefined: usize,
    pub h_z: Option<Vec<f64>>,
    pub lambda: Option<Vec<f64>>,
    pub cv: Option<PropensityCv>,
}

pub fn resolve_propensity(
    data: &Dataset,
    spec: &PropensitySpec,
    kernel: KernelSpec,
    stream: RngStream,
) -> Result<ResolvedPropensity> {
    match spec {
        PropensitySpec::Given(p) => {
            if p.len() != data.n() {
                return Err(Error::data(format!(
                    "propensity column has {} values, expected {}",
                    p.len(),
                    data.n()
                )));
            }
            if let Some(i) = p.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::data(format!("row {i}: propensity {} outside [0, 1]", p[i])));
            }
            Ok(ResolvedPropensity {
                phat: p.clone(),
                n_undefined: 0,
                h_z: None,
                lambda: None,
                cv: None,
            })
        }
        PropensitySpec::Fixed { h_z, lambda } => {
            let fit = fit_propensity(data, h_z, &DiscreteKernelSpec::new(lambda.clone())?, kernel)?;
            Ok(ResolvedPropensity {
                n_undefined: fit.n_undefined,
                phat: fit.phat,
                h_z: Some(fit.h_z),
                lambda: Some(fit.lambda),
                cv: None,
            })
        }
        PropensitySpec::CrossValidated { subset_size, reps } => {
            let cv = cv_bandwidth_propensity(data, *subset_size, *reps, kernel, stream)?;
            let fit = fit_propensity(data, &cv.h_z, &DiscreteKernelSpec::new(cv.lambda.clone())?, kernel)?;
            Ok(ResolvedPropensity {
                n_undefined: fit.n_undefined,
                phat: fit.phat,
                h_z: Some(fit.h_z),
                lambda: Some(fit.lambda),
                cv: Some(cv),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(s: Vec<bool>, zc: Vec<f64>) -> Dataset {
        let n = s.len();
        let y = s.iter().map(|&b| if b { 1.0 } else { f64::NAN }).collect();
        Dataset::new(y, vec![0.0; n], 1, zc, 1, vec![], 0, s).unwrap()
    }

    #[test]
    fn all_selected_gives_one() {
        let d = ds(vec![true; 4], vec![0.0, 1.0, 2.0, 3.0]);
        let fit = fit_propensity(&d, &[1.5], &DiscreteKernelSpec::exact_match(0), KernelSpec::Epanechnikov).unwrap();
        assert!(fit.phat.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn tiny_bandwidth_returns_own_indicator() {
        let d = ds(vec![true, false, true], vec![0.0, 1.0, 2.0]);
        let fit = fit_propensity(&d, &[1e-3], &DiscreteKernelSpec::exact_match(0), KernelSpec::Epanechnikov).unwrap();
        assert_eq!(fit.phat, vec![1.0, 0.0, 1.0]);
        let loo = fit_propensity_loo(&d, &[1e-3], &DiscreteKernelSpec::exact_match(0), KernelSpec::Epanechnikov).unwrap();
        assert_eq!(loo.n_undefined, 3);
    }

    #[test]
    fn hand_summed_ratio() {
        // at z=1 with h=1.5: weights K(-2/3), K(0), K(2/3)
        let d = ds(vec![true, false, true], vec![0.0, 1.0, 2.0]);
        let fit = fit_propensity(&d, &[1.5], &DiscreteKernelSpec::exact_match(0), KernelSpec::Epanechnikov).unwrap();
        let k = |v: f64| 0.75 * (1.0 - v * v);
        let expect = 2.0 * k(2.0 / 3.0) / (2.0 * k(2.0 / 3.0) + k(0.0));
        assert!((fit.phat[1] - expect).abs() < 1e-15);
    }

    #[test]
    fn discrete_smoothing() {
        let n = 4;
        let d = Dataset::new(
            vec![1.0, f64::NAN, 1.0, 1.0],
            vec![0.0; n],
            1,
            vec![],
            0,
            vec![0, 0, 1, 1],
            1,
            vec![true, false, true, true],
        )
        .unwrap();
        let exact = fit_propensity(&d, &[], &DiscreteKernelSpec::exact_match(1), KernelSpec::Epanechnikov).unwrap();
        assert_eq!(exact.phat, vec![0.5, 0.5, 1.0, 1.0]);
        let pooled = fit_propensity(&d, &[], &DiscreteKernelSpec::new(vec![1.0]).unwrap(), KernelSpec::Epanechnikov).unwrap();
        assert!(pooled.phat.iter().all(|&p| (p - 0.75).abs() < 1e-15));
    }

    fn simulated(n: usize, informative: bool, seed: u64) -> Dataset {
        let u = RngStream::new(seed, 0).uniforms(2 * n);
        let zc: Vec<f64> = (0..n).map(|i| 4.0 * u[i] - 2.0).collect();
        let s: Vec<bool> = (0..n)
            .map(|i| if informative { zc[i] > 0.0 } else { u[n + i] < 0.5 })
            .collect();
        ds(s, zc)
    }

    #[test]
    fn cv_noise_smooths_to_mean() {
        let d = simulated(300, false, 11);
        let cv = cv_bandwidth_propensity(&d, 450, 1, KernelSpec::Epanechnikov, RngStream::new(1, 0)).unwrap();
        let sd = std_dev(&d.zc_column(0));
        assert!(cv.h_z[0] > sd, "h {} vs sd {sd}", cv.h_z[0]);
    }

    #[test]
    fn cv_step_function_is_local() {
        let d = simulated(400, true, 12);
        let cv = cv_bandwidth_propensity(&d, 450, 1, KernelSpec::Epanechnikov, RngStream::new(1, 0)).unwrap();
        let sd = std_dev(&d.zc_column(0));
        assert!(cv.h_z[0] < 0.25 * sd, "h {} vs sd {sd}", cv.h_z[0]);
    }

    #[test]
    fn cv_subsets_reproducible() {
        let d = simulated(200, true, 13);
        let a = cv_bandwidth_propensity(&d, 80, 5, KernelSpec::Epanechnikov, RngStream::new(9, 0)).unwrap();
        let b = cv_bandwidth_propensity(&d, 80, 5, KernelSpec::Epanechnikov, RngStream::new(9, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.reps_used + a.reps_dropped, 5);
    }
}
