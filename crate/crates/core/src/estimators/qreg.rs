//! Exact weighted linear quantile regression.
//!
//! Minimises `Σ_i w_i ρ_τ(y_i - x_i'b)` with `ρ_τ(v) = v(τ - 1{v < 0})` by a
//! vertex-following simplex method on the LP reformulation. A vertex is a set
//! of `p` observations interpolated exactly (the basis). From each vertex we
//! evaluate the `2p` edge directions that release one basic observation to
//! either side, pick the steepest descent edge, and move along it to the
//! weighted-median breakpoint, where a new observation enters the basis.
//!
//! The starting vertex is reached from the intercept-only solution (the
//! weighted τ-quantile of `y`) by successive exact line minimisations along
//! directions orthogonal to the current basis rows.
//!
//! All ties (equal slopes, equal breakpoints, equal responses) are broken by
//! the smallest observation index, so the returned basis and residual signs
//! depend only on the ordering of the data, never on scheduling.
//!
//! The first design column must be the constant 1.

use std::cmp::Ordering;

#[derive(Debug, Clone, PartialEq)]
pub struct QrSolution {
    pub coef: Vec<f64>,
    /// Observations interpolated at the optimum (`p` of them).
    pub basis: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QrError {
    /// Fewer positively weighted rows than parameters.
    Insufficient { available: usize, needed: usize },
    /// Positively weighted rows do not span the parameter space.
    RankDeficient { rank: usize },
    Numerical(String),
}

/// Check-loss objective at `coef`.
pub fn check_loss(design: &[f64], p: usize, y: &[f64], w: &[f64], tau: f64, coef: &[f64]) -> f64 {
    y.iter()
        .enumerate()
        .map(|(i, &yi)| {
            let r = yi - dot(&design[i * p..(i + 1) * p], coef);
            w[i] * rho(r, tau)
        })
        .sum()
}

#[inline]
pub fn rho(r: f64, tau: f64) -> f64 {
    if r < 0.0 {
        r * (tau - 1.0)
    } else {
        r * tau
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve the weighted quantile regression. Rows with non-positive weight are
/// ignored.
pub fn solve(design: &[f64], p: usize, y: &[f64], w: &[f64], tau: f64) -> Result<QrSolution, QrError> {
    assert!(p > 0 && design.len() == y.len() * p && w.len() == y.len());
    assert!(tau > 0.0 && tau < 1.0, "tau must lie in (0, 1)");
    let active: Vec<usize> = (0..y.len()).filter(|&i| w[i] > 0.0).collect();
    if active.len() < p {
        return Err(QrError::Insufficient {
            available: active.len(),
            needed: p,
        });
    }
    let n = active.len();
    let mut xs = Vec::with_capacity(n * p);
    let mut ys = Vec::with_capacity(n);
    let mut ws = Vec::with_capacity(n);
    for &i in &active {
        xs.extend_from_slice(&design[i * p..(i + 1) * p]);
        ys.push(y[i]);
        ws.push(w[i]);
    }
    let mut solver = Solver::new(&xs, p, &ys, &ws, tau);
    solver.crash()?;
    solver.simplex()?;
    let objective = solver.objective();
    Ok(QrSolution {
        coef: solver.b.clone(),
        basis: solver.basis.iter().map(|&k| active[k]).collect(),
        objective,
        iterations: solver.iterations,
    })
}

struct Solver<'a> {
    x: &'a [f64],
    p: usize,
    y: &'a [f64],
    w: &'a [f64],
    tau: f64,
    b: Vec<f64>,
    r: Vec<f64>,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    iterations: usize,
    /// Scale for "numerically zero" direction components.
    gtol: f64,
    stol: f64,
    /// Residuals at or below this magnitude are exact zeros.
    rtol: f64,
    // scratch
    keys: Vec<(f64, usize)>,
}

impl<'a> Solver<'a> {
    fn new(x: &'a [f64], p: usize, y: &'a [f64], w: &'a [f64], tau: f64) -> Self {
        let n = y.len();
        let xmax = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let wsum: f64 = w.iter().sum();
        let ymax = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Self {
            x,
            p,
            y,
            w,
            tau,
            b: vec![0.0; p],
            r: y.to_vec(),
            basis: Vec::with_capacity(p),
            in_basis: vec![false; n],
            iterations: 0,
            gtol: 1e-11 * xmax,
            stol: 1e-12 * wsum * xmax,
            rtol: 1e-11 * ymax.max(f64::MIN_POSITIVE),
            keys: Vec::with_capacity(n),
        }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn objective(&self) -> f64 {
        self.r.iter().zip(self.w).map(|(&r, &w)| w * rho(r, self.tau)).sum()
    }

    fn refresh_residuals(&mut self) {
        for i in 0..self.n() {
            let r = if self.in_basis[i] {
                0.0
            } else {
                self.y[i] - dot(self.row(i), &self.b)
            };
            self.r[i] = if r.abs() <= self.rtol { 0.0 } else { r };
        }
    }

    /// Reach a vertex: start from the weighted τ-quantile of `y`, then add one
    /// interpolated observation per exact line search.
    fn crash(&mut self) -> Result<(), QrError> {
        let n = self.n();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| self.y[a].total_cmp(&self.y[b]).then(a.cmp(&b)));
        let total: f64 = self.w.iter().sum();
        let target = self.tau * total;
        let mut acc = 0.0;
        let mut k0 = order[n - 1];
        for &i in &order {
            acc += self.w[i];
            if acc >= target {
                k0 = i;
                break;
            }
        }
        self.b.iter_mut().for_each(|v| *v = 0.0);
        self.b[0] = self.y[k0];
        self.push_basis(k0);
        self.refresh_residuals();

        // orthonormal rows of the current basis
        let mut q: Vec<Vec<f64>> = vec![normalize(self.row(k0).to_vec())];
        let mut tried_dirs: Vec<bool>;
        while self.basis.len() < self.p {
            tried_dirs = vec![false; self.p];
            let mut entered = false;
            while let Some(d) = self.null_direction(&q, &mut tried_dirs) {
                let g: Vec<f64> = (0..n)
                    .map(|i| if self.in_basis[i] { 0.0 } else { dot(self.row(i), &d) })
                    .collect();
                if let Some((k, t)) = self.line_min_full(&g) {
                    for (bj, dj) in self.b.iter_mut().zip(&d) {
                        *bj += t * dj;
                    }
                    self.push_basis(k);
                    self.refresh_residuals();
                    // Gram-Schmidt against existing rows
                    let mut v = self.row(k).to_vec();
                    for qi in &q {
                        let c = dot(&v, qi);
                        v.iter_mut().zip(qi).for_each(|(a, b)| *a -= c * b);
                    }
                    q.push(normalize(v));
                    entered = true;
                    break;
                }
            }
            if !entered {
                return Err(QrError::RankDeficient {
                    rank: self.basis.len(),
                });
            }
        }
        Ok(())
    }

    fn push_basis(&mut self, k: usize) {
        self.basis.push(k);
        self.in_basis[k] = true;
    }

    /// Unit vector orthogonal to the rows spanned by `q`, built from the
    /// untried coordinate axis with the largest orthogonal component.
    fn null_direction(&self, q: &[Vec<f64>], tried: &mut [bool]) -> Option<Vec<f64>> {
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for m in 0..self.p {
            if tried[m] {
                continue;
            }
            let mut v = vec![0.0; self.p];
            v[m] = 1.0;
            for qi in q {
                let c = qi[m];
                v.iter_mut().zip(qi).for_each(|(a, b)| *a -= c * b);
            }
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-8 && best.as_ref().is_none_or(|(bn, _, _)| norm > *bn) {
                best = Some((norm, m, v));
            }
        }
        let (norm, m, v) = best?;
        tried[m] = true;
        Some(v.into_iter().map(|a| a / norm).collect())
    }

    /// Minimise `Σ w_i ρ(r_i - t g_i)` over all real `t`; returns the
    /// minimising breakpoint observation and step.
    fn line_min_full(&mut self, g: &[f64]) -> Option<(usize, f64)> {
        self.keys.clear();
        let mut slope = 0.0;
        for i in 0..self.n() {
            if g[i].abs() <= self.gtol {
                continue;
            }
            let a = self.w[i] * g[i].abs();
            let ti = if g[i] > 0.0 { self.tau } else { 1.0 - self.tau };
            slope -= a * ti;
            self.keys.push((self.r[i] / g[i], i));
        }
        if self.keys.is_empty() {
            return None;
        }
        self.keys.sort_by(cmp_key);
        for &(t, i) in &self.keys {
            slope += self.w[i] * g[i].abs();
            if slope >= 0.0 {
                return Some((i, t));
            }
        }
        let &(t, i) = self.keys.last().unwrap();
        Some((i, t))
    }

    fn simplex(&mut self) -> Result<(), QrError> {
        let n = self.n();
        let p = self.p;
        let max_iter = 50 * (n + p) + 100;
        let mut g = vec![0.0; n * p];
        loop {
            let binv = invert_rows(self.x, p, &self.basis)
                .ok_or_else(|| QrError::Numerical("singular basis".into()))?;
            // b = X_h^{-1} y_h
            for a in 0..p {
                self.b[a] = (0..p).map(|j| binv[a * p + j] * self.y[self.basis[j]]).sum();
            }
            self.refresh_residuals();
            // g_ij = x_i' (column j of binv)
            for i in 0..n {
                let xi = &self.x[i * p..(i + 1) * p];
                for j in 0..p {
                    g[i * p + j] = if self.in_basis[i] {
                        if self.basis[j] == i {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        (0..p).map(|a| xi[a] * binv[a * p + j]).sum()
                    };
                }
            }
            // directional derivatives along ±d_j
            let tau = self.tau;
            let mut best: Option<(f64, usize, f64)> = None;
            for j in 0..p {
                let mut lin = 0.0;
                let mut zpos = 0.0;
                let mut zneg = 0.0;
                for i in 0..n {
                    if self.in_basis[i] {
                        continue;
                    }
                    let gij = g[i * p + j];
                    if gij.abs() <= self.gtol {
                        continue;
                    }
                    let ri = self.r[i];
                    if ri > 0.0 {
                        lin -= self.w[i] * gij * tau;
                    } else if ri < 0.0 {
                        lin -= self.w[i] * gij * (tau - 1.0);
                    } else {
                        // degenerate: residual moves off zero in the direction of -σ g
                        let a = self.w[i] * gij.abs();
                        if gij > 0.0 {
                            zpos += a * (1.0 - tau);
                            zneg += a * tau;
                        } else {
                            zpos += a * tau;
                            zneg += a * (1.0 - tau);
                        }
                    }
                }
                let wj = self.w[self.basis[j]];
                let up = lin + zpos + (1.0 - tau) * wj;
                let down = -lin + zneg + tau * wj;
                for (slope, sigma) in [(up, 1.0), (down, -1.0)] {
                    if slope < -self.stol && best.is_none_or(|(s, _, _)| slope < s) {
                        best = Some((slope, j, sigma));
                    }
                }
            }
            let Some((slope0, j, sigma)) = best else {
                return Ok(());
            };
            self.iterations += 1;
            if self.iterations > max_iter {
                return Err(QrError::Numerical("simplex iteration limit reached".into()));
            }
            // ratio test: weighted median of positive breakpoints
            self.keys.clear();
            for i in 0..n {
                if self.in_basis[i] {
                    continue;
                }
                let c = sigma * g[i * p + j];
                if c.abs() <= self.gtol || self.r[i] == 0.0 {
                    continue;
                }
                let t = self.r[i] / c;
                if t > 0.0 {
                    self.keys.push((t, i));
                }
            }
            self.keys.sort_by(cmp_key);
            let mut slope = slope0;
            let mut enter = None;
            for &(_, i) in &self.keys {
                slope += self.w[i] * g[i * p + j].abs();
                if slope >= 0.0 {
                    enter = Some(i);
                    break;
                }
            }
            let k = enter.ok_or_else(|| QrError::Numerical("unbounded direction".into()))?;
            let leaving = self.basis[j];
            self.in_basis[leaving] = false;
            self.basis[j] = k;
            self.in_basis[k] = true;
        }
    }
}

fn cmp_key(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|a| *a /= n);
    }
    v
}

/// Inverse of the `p×p` matrix whose rows are the design rows in `rows`,
/// row-major. Gauss–Jordan with partial pivoting.
fn invert_rows(x: &[f64], p: usize, rows: &[usize]) -> Option<Vec<f64>> {
    let mut a = vec![0.0; p * p];
    for (r, &i) in rows.iter().enumerate() {
        a[r * p..(r + 1) * p].copy_from_slice(&x[i * p..(i + 1) * p]);
    }
    invert(a, p)
}

pub(crate) fn invert(mut a: Vec<f64>, p: usize) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; p * p];
    for i in 0..p {
        inv[i * p + i] = 1.0;
    }
    for col in 0..p {
        let piv = (col..p).max_by(|&r1, &r2| a[r1 * p + col].abs().total_cmp(&a[r2 * p + col].abs()))?;
        let pv = a[piv * p + col];
        if pv.abs() < 1e-14 {
            return None;
        }
        if piv != col {
            for c in 0..p {
                a.swap(piv * p + c, col * p + c);
                inv.swap(piv * p + c, col * p + c);
            }
        }
        for c in 0..p {
            a[col * p + c] /= pv;
            inv[col * p + c] /= pv;
        }
        for r in 0..p {
            if r == col {
                continue;
            }
            let f = a[r * p + col];
            if f != 0.0 {
                for c in 0..p {
                    a[r * p + c] -= f * a[col * p + c];
                    inv[r * p + c] -= f * inv[col * p + c];
                }
            }
        }
    }
    Some(inv)
}
