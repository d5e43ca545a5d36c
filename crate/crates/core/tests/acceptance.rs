//! Desk-scale acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

mod support;

use std::io::Write as _;
use std::time::Instant;

use qselect::estimators::bandwidth::{resolve_hx, HxChoice};
use qselect::estimators::locpoly::{quantile_residuals, TieRule};
use qselect::grid::{build_default_grid, GridOptions};
use qselect::meantest::{prepare_meantest, statistic_z1m_naive, MeanTestConfig};
use qselect::montecarlo::tables::{layout, replicate_table, Family, ReplicateOptions, TableId, ALPHAS, SIM_TAUS};
use qselect::montecarlo::{generate_dgp, run_warp_speed, Design, DgpConfig, McResult, OutcomeKind};
use qselect::parallel::with_threads;
use qselect::report::alpha_key;
use qselect::rng::RngStream;
use qselect::test1::{statistic_z1, statistic_z1_naive, Test1Config};
use support::properties::{invariance_suite, qr_instance, runner, sample, solver_matches_oracle};

const SEED: u64 = 1;
const SIZE_REPS: usize = 500;
const POWER_REPS: usize = 200;

type Outcome = (bool, String);

fn line(k: usize, (ok, detail): &Outcome, secs: f64) {
    let verdict = if *ok { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {k:>2}  {verdict}  {detail}  [{secs:.0}s]");
}

fn column(family: Family, case: u8, k: usize, n: usize) -> (DgpConfig, qselect::montecarlo::McTest, qselect::montecarlo::PropensitySource) {
    let col = layout(TableId { family, case }).unwrap().columns.swap_remove(k);
    (DgpConfig { n, ..col.dgp }, col.test, col.propensity)
}

fn rate(res: &McResult, alpha: f64) -> f64 {
    res.rejection_rates[&alpha_key(alpha)]
}

fn run_cell(family: Family, case: u8, k: usize, n: usize, reps: usize, stream: u64) -> McResult {
    let (dgp, test, prop) = column(family, case, k, n);
    run_warp_speed(&dgp, &test, &prop, reps, &ALPHAS, RngStream::new(SEED, stream)).unwrap()
}

fn within(v: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&v)
}

fn solver_oracle() -> Outcome {
    match runner(200).run(&qr_instance(), solver_matches_oracle) {
        Ok(()) => (true, "200 instances match the LP optimum within 1e-6".into()),
        Err(e) => (false, format!("{e}")),
    }
}

fn fast_path() -> Outcome {
    let mut mismatches = Vec::new();
    for i in 0..50u64 {
        let n = 100 + (i as usize * 37) % 101;
        let rho = [-0.5, 0.0, 0.25, 0.5][i as usize % 4];
        let sim = sample(1000 + i, n, rho, OutcomeKind::CubicQuantile);
        let cfg = Test1Config::default();
        let (h, _) = resolve_hx(&sim.data, &HxChoice::RuleOfThumb { c: 4.0 }, cfg.order, cfg.kernel).unwrap();
        let fits = quantile_residuals(&sim.data, &SIM_TAUS, &h, cfg.order, cfg.kernel).unwrap();
        let grid = build_default_grid(&sim.data, &sim.oracle_p, &SIM_TAUS, &GridOptions::default()).unwrap();
        for ties in [TieRule::Randomized, TieRule::Centred, TieRule::Inclusive] {
            let a = statistic_z1(&sim.data, &fits, &sim.oracle_p, &grid, ties).unwrap();
            let b = statistic_z1_naive(&sim.data, &fits, &sim.oracle_p, &grid, ties).unwrap();
            let same = a.statistic.to_bits() == b.statistic.to_bits()
                && a.per_tau.iter().zip(&b.per_tau).all(|(x, y)| x.to_bits() == y.to_bits());
            if !same {
                mismatches.push(format!("z1 instance {i} {ties:?}"));
            }
        }
        let m = sample(2000 + i, n, rho, OutcomeKind::QuadraticMean);
        let prep = prepare_meantest(&m.data, &m.oracle_p, &MeanTestConfig::default()).unwrap();
        if prep.statistic(&m.data).statistic.to_bits() != statistic_z1m_naive(&m.data, &m.oracle_p, &prep).to_bits() {
            mismatches.push(format!("z1m instance {i}"));
        }
    }
    if mismatches.is_empty() {
        (true, "z1 and z1m equal the naive loops bit for bit on 50 instances".into())
    } else {
        (false, mismatches.join(", "))
    }
}

/// Case I, c=4, n=1000 at ρ ∈ {0, .25, .5}.
fn first_test_case_one() -> [McResult; 3] {
    [1usize, 4, 7].map(|k| run_cell(Family::T1, 1, k, 1000, SIZE_REPS, 3 + k as u64))
}

fn first_test_size(r: &McResult) -> Outcome {
    let (a, b) = (rate(r, 0.05), rate(r, 0.10));
    let ok = within(a, 0.02, 0.16) && within(b, 0.07, 0.24);
    (ok, format!("size {a:.3} in [0.02, 0.16] at 5%, {b:.3} in [0.07, 0.24] at 10%"))
}

fn first_test_power(rs: &[McResult; 3]) -> Outcome {
    let v: Vec<f64> = rs.iter().map(|r| rate(r, 0.05)).collect();
    let monotone = v[0] <= v[1] + 0.02 && v[1] <= v[2] + 0.02;
    let ok = v[2] >= 0.80 && monotone;
    (ok, format!("power {:.3} >= 0.80; rho path {:.3} {:.3} {:.3} monotone within 0.02: {monotone}", v[2], v[0], v[1], v[2]))
}

fn misspecification_power() -> Outcome {
    let r = run_cell(Family::T1, 7, 0, 1000, POWER_REPS, 5);
    let a = rate(&r, 0.05);
    (a >= 0.95, format!("case VII gamma1=0.25 rejection {a:.3} >= 0.95 ({POWER_REPS} reps)"))
}

fn second_test_size() -> Outcome {
    let one = rate(&run_cell(Family::T2, 1, 0, 1000, SIZE_REPS, 6), 0.05);
    let four = rate(&run_cell(Family::T2, 4, 0, 1000, SIZE_REPS, 60), 0.05);
    let ok = within(one, 0.01, 0.13) && four <= 0.05;
    (ok, format!("case I* {one:.3} in [0.01, 0.13]; case IV* {four:.3} <= 0.05"))
}

fn second_test_power() -> Outcome {
    let a = rate(&run_cell(Family::T2, 3, 0, 1000, POWER_REPS, 7), 0.05);
    (a >= 0.95, format!("case III* rejection {a:.3} >= 0.95 ({POWER_REPS} reps)"))
}

fn mean_test() -> Outcome {
    let size = rate(&run_cell(Family::S1, 1, 1, 1000, SIZE_REPS, 8), 0.05);
    let power = rate(&run_cell(Family::S1, 1, 7, 1000, SIZE_REPS, 80), 0.05);
    let ok = within(size, 0.02, 0.10) && power >= 0.80;
    (ok, format!("size {size:.3} in [0.02, 0.10]; power {power:.3} >= 0.80"))
}

fn invariance() -> Outcome {
    match invariance_suite(100) {
        Ok(()) => (true, "six properties hold on 100 instances each".into()),
        Err(e) => (false, e),
    }
}

fn quantile_construction() -> Outcome {
    let dgp = DgpConfig {
        design: Design::Normal,
        rho: 0.0,
        gamma1: 0.0,
        n: 100_000,
        ..DgpConfig::default()
    };
    let sim = generate_dgp(&dgp, RngStream::new(SEED, 10)).unwrap();
    let mut sel: Vec<usize> = (0..dgp.n).filter(|&i| sim.data.s[i]).collect();
    sel.sort_by(|&a, &b| sim.oracle_p[a].total_cmp(&sim.oracle_p[b]));
    let mut worst: f64 = 0.0;
    for bin in 0..5 {
        let rows = &sel[bin * sel.len() / 5..(bin + 1) * sel.len() / 5];
        for &tau in &SIM_TAUS {
            let below = rows
                .iter()
                .filter(|&&i| sim.data.y[i] <= dgp.structural_quantile(sim.data.x[i], tau))
                .count();
            worst = worst.max((below as f64 / rows.len() as f64 - tau).abs());
        }
    }
    (worst <= 0.03, format!("largest |coverage - tau| over 5 p-bins is {worst:.4} <= 0.03"))
}

fn determinism() -> Outcome {
    let (dgp, test, prop) = column(Family::T1, 1, 4, 300);
    let sim = |threads| {
        with_threads(threads, || {
            let r = run_warp_speed(&dgp, &test, &prop, 6, &ALPHAS, RngStream::new(SEED, 11)).unwrap();
            serde_json::to_vec(&r).unwrap()
        })
    };
    let opts = ReplicateOptions {
        scale: 0.004,
        ns: Some([200, 300]),
        columns: Some(vec![0, 7]),
    };
    let id = TableId { family: Family::S1, case: 1 };
    let rep = |threads| with_threads(threads, || replicate_table(id, &opts, RngStream::new(SEED, 12)).unwrap().to_csv());
    let ok = sim(1) == sim(1) && sim(1) == sim(3) && rep(1) == rep(1) && rep(1) == rep(3);
    (ok, "simulate and replicate outputs identical across runs and 1 vs 3 threads".into())
}

fn timed(k: usize, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let o = f();
    line(k, &o, t.elapsed().as_secs_f64());
    o.0
}

#[test]
fn acceptance() {
    let mut all = timed(1, solver_oracle);
    all &= timed(2, fast_path);
    let t = Instant::now();
    let case_one = first_test_case_one();
    let secs = t.elapsed().as_secs_f64();
    for (k, o) in [(3, first_test_size(&case_one[0])), (4, first_test_power(&case_one))] {
        line(k, &o, secs);
        all &= o.0;
    }
    all &= timed(5, misspecification_power);
    all &= timed(6, second_test_size);
    all &= timed(7, second_test_power);
    all &= timed(8, mean_test);
    all &= timed(9, invariance);
    all &= timed(10, quantile_construction);
    all &= timed(11, determinism);
    assert!(all, "at least one acceptance criterion failed");
}
