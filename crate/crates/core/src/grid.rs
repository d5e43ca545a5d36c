//! Finite grids over covariate boxes and propensity intervals, and exact
//! sup-over-cells evaluation.
//!
//! Sorted cutpoints `c_0 < ... < c_{K-1}` split the line into `2K+1` atoms:
//! atom `2j` is the open gap below `c_j` (above `c_{j-1}`), atom `2j+1` is the
//! point `{c_j}`. Every interval with cutpoint endpoints is a contiguous atom
//! range, so cell sums reduce to prefix sums over per-atom histograms.
//!
//! Sums are accumulated in `i128` fixed point, which makes them independent
//! of summation order: the prefix-sum path and the naive loop agree exactly.

use serde::{Deserialize, Serialize};

use crate::data::{empirical_quantile, Dataset};
use crate::error::{Error, Result, Stage};

/// Endpoint convention for propensity intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PInterval {
    /// `p_lo < p < p_hi`
    Open,
    /// `p_lo <= p <= p_hi`
    Closed,
    /// `p_lo <= p < p_hi`
    HalfOpen,
}

impl PInterval {
    /// Inclusive atom range of `(c_a, c_b)` under this convention.
    pub fn atom_range(self, a: usize, b: usize) -> (usize, usize) {
        match self {
            PInterval::Open => (2 * a + 2, 2 * b),
            PInterval::Closed => (2 * a + 1, 2 * b + 1),
            PInterval::HalfOpen => (2 * a + 1, 2 * b),
        }
    }

    pub fn contains(self, lo: f64, hi: f64, p: f64) -> bool {
        match self {
            PInterval::Open => lo < p && p < hi,
            PInterval::Closed => lo <= p && p <= hi,
            PInterval::HalfOpen => lo <= p && p < hi,
        }
    }
}

/// Atom index of `v` among sorted `cuts`.
#[inline]
pub fn atom_of(cuts: &[f64], v: f64) -> u32 {
    let j = cuts.partition_point(|&c| c < v);
    if j < cuts.len() && cuts[j] == v {
        (2 * j + 1) as u32
    } else {
        (2 * j) as u32
    }
}

/// Per-coordinate box side: cutpoint index pair, or the full line.
pub type Side = Option<(usize, usize)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub taus: Vec<f64>,
    pub x_cuts: Vec<Vec<f64>>,
    pub p_cuts: Vec<f64>,
    /// Each box has one side per covariate.
    pub boxes: Vec<Vec<Side>>,
    pub max_cells: usize,
    pub marginal_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    /// Quantile levels used as interior cutpoints.
    pub levels: Vec<f64>,
    /// Tail share trimmed from each end of every covariate before placing
    /// cutpoints; 0 keeps the full range.
    pub trim: f64,
    pub max_cells: usize,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            levels: (1..10).map(|k| k as f64 / 10.0).collect(),
            trim: 0.0,
            max_cells: 100_000,
        }
    }
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1]) && v.iter().all(|c| c.is_finite())
}

fn pairs(k: usize) -> usize {
    k * k.saturating_sub(1) / 2
}

impl GridSpec {
    /// Grid from explicit cutpoints: the full Cartesian product of
    /// per-coordinate intervals, or marginal boxes when the cell count
    /// exceeds `max_cells`.
    pub fn new(taus: Vec<f64>, x_cuts: Vec<Vec<f64>>, p_cuts: Vec<f64>, max_cells: usize) -> Result<Self> {
        if taus.is_empty() || taus.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::config(Stage::Grid, "tau grid must be non-empty and inside (0, 1)"));
        }
        if x_cuts.is_empty() {
            return Err(Error::config(Stage::Grid, "at least one covariate is required"));
        }
        if !x_cuts.iter().all(|c| strictly_increasing(c)) || !strictly_increasing(&p_cuts) {
            return Err(Error::config(Stage::Grid, "cutpoints must be finite and strictly increasing"));
        }
        if p_cuts.len() < 2 {
            return Err(Error::config(Stage::Grid, "need at least two distinct propensity cutpoints"));
        }
        let sides: Vec<Vec<Side>> = x_cuts
            .iter()
            .map(|c| {
                if c.len() < 2 {
                    vec![None]
                } else {
                    let mut v = Vec::with_capacity(pairs(c.len()));
                    for a in 0..c.len() {
                        for b in a + 1..c.len() {
                            v.push(Some((a, b)));
                        }
                    }
                    v
                }
            })
            .collect();
        let n_int = pairs(p_cuts.len());
        let full: usize = sides.iter().map(|s| s.len()).product();
        let (boxes, marginal_fallback) = if full.saturating_mul(n_int) <= max_cells || x_cuts.len() == 1 {
            let mut boxes: Vec<Vec<Side>> = vec![Vec::new()];
            for s in &sides {
                boxes = boxes
                    .into_iter()
                    .flat_map(|prefix| {
                        s.iter().map(move |&side| {
                            let mut b = prefix.clone();
                            b.push(side);
                            b
                        })
                    })
                    .collect();
            }
            (boxes, false)
        } else {
            let d = x_cuts.len();
            let mut boxes = Vec::new();
            for (k, s) in sides.iter().enumerate() {
                for &side in s {
                    if side.is_none() && boxes.iter().any(|b: &Vec<Side>| b.iter().all(|x| x.is_none())) {
                        continue;
                    }
                    let mut b = vec![None; d];
                    b[k] = side;
                    boxes.push(b);
                }
            }
            (boxes, true)
        };
        Ok(Self {
            taus,
            x_cuts,
            p_cuts,
            boxes,
            max_cells,
            marginal_fallback,
        })
    }

    pub fn n_p_intervals(&self) -> usize {
        pairs(self.p_cuts.len())
    }

    pub fn n_cells(&self) -> usize {
        self.boxes.len() * self.n_p_intervals()
    }

    /// `(c_a, c_b)` pairs in enumeration order.
    pub fn p_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let k = self.p_cuts.len();
        (0..k).flat_map(move |a| (a + 1..k).map(move |b| (a, b)))
    }

    /// Strict box membership from raw coordinates.
    pub fn in_box_raw(&self, b: usize, x: &[f64]) -> bool {
        self.boxes[b].iter().enumerate().all(|(k, side)| match side {
            None => true,
            Some((lo, hi)) => self.x_cuts[k][*lo] < x[k] && x[k] < self.x_cuts[k][*hi],
        })
    }

    /// Atom indices of the given rows.
    pub fn atoms(&self, data: &Dataset, rows: &[usize], phat: &[f64]) -> AtomIndex {
        let dx = self.x_cuts.len();
        let mut x = Vec::with_capacity(rows.len() * dx);
        let mut p = Vec::with_capacity(rows.len());
        for &i in rows {
            let xi = data.x_row(i);
            for k in 0..dx {
                x.push(atom_of(&self.x_cuts[k], xi[k]));
            }
            p.push(if phat[i].is_finite() { atom_of(&self.p_cuts, phat[i]) } else { u32::MAX });
        }
        AtomIndex { dx, x, p }
    }

    /// Rows (positions into the atom index) inside each box.
    pub fn box_members(&self, atoms: &AtomIndex) -> Vec<Vec<u32>> {
        self.boxes
            .iter()
            .map(|b| {
                let ranges: Vec<Option<(u32, u32)>> = b
                    .iter()
                    .map(|side| side.map(|(lo, hi)| ((2 * lo + 2) as u32, (2 * hi) as u32)))
                    .collect();
                (0..atoms.p.len())
                    .filter(|&r| {
                        atoms.p[r] != u32::MAX
                            && ranges.iter().enumerate().all(|(k, rg)| match rg {
                                None => true,
                                Some((lo, hi)) => {
                                    let a = atoms.x[r * atoms.dx + k];
                                    *lo <= a && a <= *hi
                                }
                            })
                    })
                    .map(|r| r as u32)
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomIndex {
    pub dx: usize,
    /// Row-major `rows × dx`.
    pub x: Vec<u32>,
    /// `u32::MAX` for rows without a finite propensity.
    pub p: Vec<u32>,
}

/// Fixed-point scale `2^s` with `max_abs · 2^s ≤ 2^96`, leaving headroom
/// for `2^30` summands.
pub fn fixed_scale(max_abs: f64) -> i32 {
    if !(max_abs > 0.0) || !max_abs.is_finite() {
        return 96;
    }
    let e = max_abs.log2().ceil() as i32;
    96 - e
}

#[inline]
pub fn to_fixed(v: f64, scale: i32) -> i128 {
    (v * 2f64.powi(scale)).round() as i128
}

#[inline]
pub fn from_fixed(v: i128, scale: i32) -> f64 {
    v as f64 * 2f64.powi(-scale)
}

/// Best cell within a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellMax {
    pub value: i128,
    pub abs: u128,
    pub box_index: usize,
    pub p_pair: (usize, usize),
}

impl CellMax {
    fn offer(best: &mut Option<CellMax>, cand: CellMax) {
        // ties keep the earliest cell in enumeration order
        if best.is_none_or(|b| cand.abs > b.abs) {
            *best = Some(cand);
        }
    }
}

/// `max |Σ_{i ∈ box, p̂_i ∈ (c_a, c_b)} v_i − (G_b − G_a)|` over all cells,
/// with `G_c = Σ_{i ∈ box} w_{i,c}` when `corr` is given (row-major
/// `rows × K`). Prefix-sum evaluation.
pub fn sup_cells_fast(
    grid: &GridSpec,
    atoms: &AtomIndex,
    members: &[Vec<u32>],
    values: &[i128],
    corr: Option<&[i128]>,
    kind: PInterval,
) -> Option<CellMax> {
    let k = grid.p_cuts.len();
    let n_atoms = 2 * k + 1;
    let mut hist = vec![0i128; n_atoms + 1];
    let mut g = vec![0i128; k];
    let mut best = None;
    for (b, rows) in members.iter().enumerate() {
        hist.iter_mut().for_each(|v| *v = 0);
        g.iter_mut().for_each(|v| *v = 0);
        for &r in rows {
            let r = r as usize;
            hist[atoms.p[r] as usize + 1] += values[r];
            if let Some(c) = corr {
                for (gc, w) in g.iter_mut().zip(&c[r * k..(r + 1) * k]) {
                    *gc += w;
                }
            }
        }
        for t in 1..=n_atoms {
            hist[t] += hist[t - 1];
        }
        for (a, bb) in grid.p_pairs() {
            let (lo, hi) = kind.atom_range(a, bb);
            let mut s = if lo <= hi { hist[hi + 1] - hist[lo] } else { 0 };
            if corr.is_some() {
                s -= g[bb] - g[a];
            }
            CellMax::offer(
                &mut best,
                CellMax {
                    value: s,
                    abs: s.unsigned_abs(),
                    box_index: b,
                    p_pair: (a, bb),
                },
            );
        }
    }
    best
}

/// Reference evaluation of [`sup_cells_fast`] by a direct loop over boxes,
/// intervals and rows using raw coordinates.
#[allow(clippy::too_many_arguments)]
pub fn sup_cells_naive(
    grid: &GridSpec,
    data: &Dataset,
    rows: &[usize],
    phat: &[f64],
    values: &[i128],
    corr: Option<&[i128]>,
    kind: PInterval,
) -> Option<CellMax> {
    let k = grid.p_cuts.len();
    let mut best = None;
    for b in 0..grid.boxes.len() {
        for (a, bb) in grid.p_pairs() {
            let (lo, hi) = (grid.p_cuts[a], grid.p_cuts[bb]);
            let mut s = 0i128;
            for (r, &i) in rows.iter().enumerate() {
                if !phat[i].is_finite() || !grid.in_box_raw(b, data.x_row(i)) {
                    continue;
                }
                if kind.contains(lo, hi, phat[i]) {
                    s += values[r];
                }
                if let Some(c) = corr {
                    s -= c[r * k + bb] - c[r * k + a];
                }
            }
            CellMax::offer(
                &mut best,
                CellMax {
                    value: s,
                    abs: s.unsigned_abs(),
                    box_index: b,
                    p_pair: (a, bb),
                },
            );
        }
    }
    best
}

/// Decile-style default grid on the selected sample.
pub fn build_default_grid(data: &Dataset, phat: &[f64], taus: &[f64], opts: &GridOptions) -> Result<GridSpec> {
    let rows = data.selected();
    if rows.is_empty() {
        return Err(Error::EmptySample { stage: Stage::Grid });
    }
    let bounds = data.x_bounds(opts.trim);
    let mut x_cuts = Vec::with_capacity(data.dx);
    for (k, &(lo, hi)) in bounds.iter().enumerate() {
        let mut col: Vec<f64> = data
            .x_column(k, true)
            .into_iter()
            .filter(|&v| lo <= v && v <= hi)
            .collect();
        col.sort_by(f64::total_cmp);
        let mut cuts = vec![lo, hi];
        cuts.extend(opts.levels.iter().map(|&q| empirical_quantile(&col, q)));
        x_cuts.push(dedup_sorted(cuts));
    }
    let mut pv: Vec<f64> = rows.iter().map(|&i| phat[i]).filter(|p| p.is_finite()).collect();
    if pv.is_empty() {
        return Err(Error::ThinSet {
            stage: Stage::Grid,
            count: 0,
            hint: "no selected observation has a defined propensity score".into(),
        });
    }
    pv.sort_by(f64::total_cmp);
    let mut p_cuts = vec![pv[0], pv[pv.len() - 1]];
    p_cuts.extend(opts.levels.iter().map(|&q| empirical_quantile(&pv, q)));
    let p_cuts = dedup_sorted(p_cuts);
    if p_cuts.len() < 2 {
        return Err(Error::data("estimated propensity scores take a single value; no interval is available"));
    }
    GridSpec::new(taus.to_vec(), x_cuts, p_cuts, opts.max_cells)
}

fn dedup_sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}
