//! Property bodies shared by the proptest suites and the acceptance runner.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestError, TestRng, TestRunner};

use qselect::estimators::bandwidth::HxChoice;
use qselect::estimators::locpoly::MultiIndexBasis;
use qselect::estimators::propensity::{fit_propensity, PropensitySpec};
use qselect::estimators::qreg;
use qselect::grid::GridOptions;
use qselect::kernels::{DiscreteKernelSpec, KernelSpec};
use qselect::meantest::{run_meantest, MeanTestConfig};
use qselect::montecarlo::{generate_dgp, Design, DgpConfig, OutcomeKind, Simulated};
use qselect::rng::RngStream;
use qselect::test1::{boot_indicator, prepare_test1, Test1Config};
use qselect::test2::{prepare_test2, Test2Config};
use qselect::Error;

use super::lp_oracle::solve_lp;

/// Seeded runner so acceptance runs see the same instances every time.
pub fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(Config::with_cases(cases), TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

pub type QrInstance = (usize, usize, Vec<f64>, Vec<f64>, Vec<f64>, f64);

/// `n ≤ 30`, `d_x ≤ 2`, order `≤ 3`.
pub fn qr_instance() -> impl Strategy<Value = QrInstance> {
    (1usize..=2, 0usize..=3)
        .prop_flat_map(|(dx, r)| {
            let p = MultiIndexBasis::new(dx, r).len();
            (Just(dx), Just(r), p.max(3)..=30)
        })
        .prop_flat_map(|(dx, r, n)| {
            (
                Just(dx),
                Just(r),
                prop::collection::vec(-1.0f64..1.0, n * dx),
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(0.05f64..1.0, n),
                0.05f64..0.95,
            )
        })
}

pub fn qr_design(dx: usize, r: usize, x: &[f64]) -> (Vec<f64>, usize) {
    let basis = MultiIndexBasis::new(dx, r);
    let mut out = Vec::new();
    for row in x.chunks(dx) {
        basis.eval_into(row, &mut out);
    }
    (out, basis.len())
}

pub fn solver_matches_oracle((dx, r, x, y, w, tau): QrInstance) -> Result<(), TestCaseError> {
    let (d, p) = qr_design(dx, r, &x);
    let (_, lp_obj) = solve_lp(&d, p, &y, &w, tau);
    let sol = qreg::solve(&d, p, &y, &w, tau).expect("continuous design has full rank");
    let own = qreg::check_loss(&d, p, &y, &w, tau, &sol.coef);
    let scale: f64 = y.iter().zip(&w).map(|(a, b)| a.abs() * b).sum();
    prop_assert!(
        (own - lp_obj).abs() <= 1e-6 * lp_obj.abs() + 1e-10 * scale,
        "simplex {own} vs lp {lp_obj}"
    );
    prop_assert!((sol.objective - own).abs() <= 1e-8 * own.abs().max(1.0));
    // basis rows are interpolated
    for &i in &sol.basis {
        let fit: f64 = d[i * p..(i + 1) * p].iter().zip(&sol.coef).map(|(a, b)| a * b).sum();
        prop_assert!((fit - y[i]).abs() < 1e-8);
    }
    Ok(())
}

pub fn sample(seed: u64, n: usize, rho: f64, outcome: OutcomeKind) -> Simulated {
    let cfg = DgpConfig {
        design: Design::Normal,
        rho,
        n,
        outcome,
        ..DgpConfig::default()
    };
    generate_dgp(&cfg, RngStream::new(seed, 0)).unwrap()
}

pub fn t1_cfg(levels: Vec<f64>) -> Test1Config {
    Test1Config {
        taus: vec![0.3, 0.5, 0.7],
        hx: HxChoice::RuleOfThumb { c: 4.0 },
        grid: GridOptions {
            levels,
            ..GridOptions::default()
        },
        ..Test1Config::default()
    }
}

/// Rejects samples too thin for a local fit; any other error fails the case.
fn fitted<T>(r: qselect::Result<T>) -> Result<T, TestCaseError> {
    match r {
        Ok(v) => Ok(v),
        Err(Error::InsufficientLocalData { .. }) => Err(TestCaseError::reject("too few points for a local fit")),
        Err(e) => Err(TestCaseError::fail(e.to_string())),
    }
}

pub fn test1_affine((seed, n, rho): (u64, usize, f64)) -> Result<(), TestCaseError> {
    let sim = sample(seed, n, rho, OutcomeKind::CubicQuantile);
    let cfg = t1_cfg(vec![0.25, 0.5, 0.75]);
    let a = fitted(prepare_test1(&sim.data, &sim.oracle_p, &cfg))?;
    let b = prepare_test1(&sim.data.affine_outcome(2.0, 3.0), &sim.oracle_p, &cfg).unwrap();
    let (za, zb) = (a.statistic(), b.statistic());
    prop_assert_eq!(za.statistic.to_bits(), zb.statistic.to_bits());
    prop_assert_eq!(za.per_tau, zb.per_tau);
    let s = RngStream::new(seed ^ 1, 5);
    // the CDF kernel sees rescaled residuals, so draws agree to rounding only
    let (da, db) = (a.draw(s), b.draw(s));
    prop_assert!((da - db).abs() <= 1e-9 * da.abs().max(1e-12), "{} vs {}", da, db);
    Ok(())
}

pub fn test2_affine((seed, n): (u64, usize)) -> Result<(), TestCaseError> {
    let sim = sample(seed, n, 0.25, OutcomeKind::CubicQuantile);
    let cfg = Test2Config {
        taus: vec![0.3, 0.5, 0.7],
        delta: Some(0.85),
        h_p: Some(0.15),
        ..Test2Config::default()
    };
    let a = prepare_test2(&sim.data, &sim.oracle_p, &cfg);
    let b = prepare_test2(&sim.data.affine_outcome(2.0, 3.0), &sim.oracle_p, &cfg);
    match (a, b) {
        (Ok((wa, _, _)), Ok((wb, _, _))) => {
            let bits = |v: Vec<f64>| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(wa.z2_profile()), bits(wb.z2_profile()));
        }
        (Err(Error::ThinSet { .. }), Err(Error::ThinSet { .. })) => {}
        (Err(Error::InsufficientLocalData { .. }), Err(Error::InsufficientLocalData { .. })) => {}
        (a, b) => prop_assert!(false, "outcomes differ: {:?} vs {:?}", a.err(), b.err()),
    }
    Ok(())
}

pub fn meantest_affine((seed, n, rho): (u64, usize, f64)) -> Result<(), TestCaseError> {
    let sim = sample(seed, n, rho, OutcomeKind::QuadraticMean);
    let cfg = MeanTestConfig {
        replications: 49,
        ..MeanTestConfig::default()
    };
    let spec = PropensitySpec::Given(sim.oracle_p.clone());
    let s = RngStream::new(seed, 9);
    let a = run_meantest(&sim.data, &spec, &cfg, s).unwrap();
    let b = run_meantest(&sim.data.affine_outcome(2.0, 3.0), &spec, &cfg, s).unwrap();
    prop_assert_eq!(a.p_value, b.p_value);
    prop_assert!((b.statistic - 2.0 * a.statistic).abs() <= 1e-9 * a.statistic.max(1e-12));
    Ok(())
}

pub fn hits_nested_in_tau((seed, t1, t2): (u64, f64, f64)) -> Result<(), TestCaseError> {
    let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
    for u in RngStream::new(seed, 0).uniforms(200) {
        prop_assert!(!boot_indicator(u, lo) || boot_indicator(u, hi));
    }
    Ok(())
}

pub fn finer_grid_sup((seed, n): (u64, usize)) -> Result<(), TestCaseError> {
    let sim = sample(seed, n, 0.5, OutcomeKind::CubicQuantile);
    let coarse = fitted(prepare_test1(&sim.data, &sim.oracle_p, &t1_cfg(vec![0.5])))?;
    let fine = prepare_test1(&sim.data, &sim.oracle_p, &t1_cfg(vec![0.25, 0.5, 0.75])).unwrap();
    prop_assert!(fine.statistic().statistic >= coarse.statistic().statistic);
    Ok(())
}

pub fn probabilities_bounded((seed, n, h): (u64, usize, f64)) -> Result<(), TestCaseError> {
    let sim = sample(seed, n, 0.3, OutcomeKind::CubicQuantile);
    let lambda = DiscreteKernelSpec::new(vec![]).unwrap();
    let fit = fit_propensity(&sim.data, &vec![h; sim.data.dzc], &lambda, KernelSpec::Epanechnikov).unwrap();
    for p in fit.phat.iter().filter(|p| p.is_finite()) {
        prop_assert!((0.0..=1.0).contains(p));
    }
    let prep = fitted(prepare_test1(&sim.data, &sim.oracle_p, &t1_cfg(vec![0.5])))?;
    for table in &prep.cdf {
        prop_assert!(table.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    Ok(())
}

/// Strategies for the invariance properties, in the order above.
pub fn seed_n_rho(lo: usize, hi: usize) -> impl Strategy<Value = (u64, usize, f64)> {
    (any::<u64>(), lo..hi, -0.5f64..0.5)
}

pub fn seed_n(lo: usize, hi: usize) -> impl Strategy<Value = (u64, usize)> {
    (any::<u64>(), lo..hi)
}

pub fn seed_tau_pair() -> impl Strategy<Value = (u64, f64, f64)> {
    (any::<u64>(), 0.01f64..0.99, 0.01f64..0.99)
}

pub fn seed_n_h() -> impl Strategy<Value = (u64, usize, f64)> {
    (any::<u64>(), 60usize..150, 0.05f64..2.0)
}

fn name<T: std::fmt::Debug>(label: &str, r: Result<(), TestError<T>>) -> Result<(), String> {
    r.map_err(|e| format!("{label}: {e}"))
}

/// Every invariance property on `cases` seeded instances.
pub fn invariance_suite(cases: u32) -> Result<(), String> {
    name("test1 affine", runner(cases).run(&seed_n_rho(80, 160), test1_affine))?;
    name("test2 affine", runner(cases).run(&seed_n(150, 300), test2_affine))?;
    name("mean affine", runner(cases).run(&seed_n_rho(80, 200), meantest_affine))?;
    name("nested hits", runner(cases).run(&seed_tau_pair(), hits_nested_in_tau))?;
    name("grid sup", runner(cases).run(&seed_n(80, 160), finer_grid_sup))?;
    name("bounded", runner(cases).run(&seed_n_h(), probabilities_bounded))?;
    Ok(())
}
