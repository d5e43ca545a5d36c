//! Dense-tableau primal simplex for weighted quantile regression.
//!
//! Variables `b+ (p), b- (p), u+ (n), u- (n) >= 0`, constraints
//! `X(b+ - b-) + u+ - u- = y`, objective `Σ w(τ u+ + (1-τ) u-)`.
//! Rows with `y_i < 0` are negated so the slack-like columns give a feasible
//! identity basis. Bland's rule guarantees termination.

pub fn solve_lp(design: &[f64], p: usize, y: &[f64], w: &[f64], tau: f64) -> (Vec<f64>, f64) {
    let n = y.len();
    let m = 2 * p + 2 * n;
    let cols = m + 1;
    let mut t = vec![0.0; n * cols];
    let mut cost = vec![0.0; m];
    for i in 0..n {
        cost[2 * p + i] = w[i] * tau;
        cost[2 * p + n + i] = w[i] * (1.0 - tau);
    }
    let mut basis = vec![0usize; n];
    for i in 0..n {
        let sgn = if y[i] < 0.0 { -1.0 } else { 1.0 };
        let row = &mut t[i * cols..(i + 1) * cols];
        for j in 0..p {
            row[j] = sgn * design[i * p + j];
            row[p + j] = -sgn * design[i * p + j];
        }
        row[2 * p + i] = sgn;
        row[2 * p + n + i] = -sgn;
        row[m] = sgn * y[i];
        basis[i] = if sgn > 0.0 { 2 * p + i } else { 2 * p + n + i };
    }
    let eps = 1e-10;
    loop {
        // reduced costs
        let mut enter = None;
        for j in 0..m {
            if basis.contains(&j) {
                continue;
            }
            let mut rc = cost[j];
            for i in 0..n {
                rc -= cost[basis[i]] * t[i * cols + j];
            }
            if rc < -eps {
                enter = Some(j);
                break;
            }
        }
        let Some(e) = enter else { break };
        let mut leave: Option<(f64, usize)> = None;
        for i in 0..n {
            let a = t[i * cols + e];
            if a > eps {
                let ratio = t[i * cols + m] / a;
                let better = match leave {
                    None => true,
                    Some((r, li)) => ratio < r - 1e-12 || (ratio <= r + 1e-12 && basis[i] < basis[li]),
                };
                if better {
                    leave = Some((ratio, i));
                }
            }
        }
        let (_, r) = leave.expect("quantile LP is bounded");
        let pv = t[r * cols + e];
        for c in 0..cols {
            t[r * cols + c] /= pv;
        }
        for i in 0..n {
            if i == r {
                continue;
            }
            let f = t[i * cols + e];
            if f != 0.0 {
                for c in 0..cols {
                    t[i * cols + c] -= f * t[r * cols + c];
                }
            }
        }
        basis[r] = e;
    }
    let mut x = vec![0.0; m];
    for i in 0..n {
        x[basis[i]] = t[i * cols + m];
    }
    let b: Vec<f64> = (0..p).map(|j| x[j] - x[p + j]).collect();
    let obj = (0..m).map(|j| cost[j] * x[j]).sum();
    (b, obj)
}
