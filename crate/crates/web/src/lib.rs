//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Input CSVs use the columns `y,s,x,z` plus an optional oracle score `p`.

use std::fmt::Write as _;

use qselect::estimators::propensity::PropensitySpec;
use qselect::io::{read_csv, report_text, ColumnRoles, Loaded};
use qselect::meantest::{run_meantest, MeanTestConfig};
use qselect::montecarlo::{generate_dgp, DgpConfig, OutcomeKind};
use qselect::rng::RngStream;
use qselect::test1::{run_test1, Test1Config};
use qselect::{Error, Result};
use wasm_bindgen::prelude::*;

/// Propensity CV used when the sample carries no `p` column.
const DEMO_PROPENSITY: PropensitySpec = PropensitySpec::CrossValidated { subset_size: 200, reps: 3 };

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

/// One draw from the normal-instrument design as CSV.
pub fn sample(n: usize, rho: f64, gamma1: f64, mean_outcome: bool, seed: u64) -> Result<String> {
    let cfg = DgpConfig {
        n,
        rho,
        gamma1,
        outcome: if mean_outcome { OutcomeKind::QuadraticMean } else { OutcomeKind::CubicQuantile },
        ..DgpConfig::default()
    };
    let sim = generate_dgp(&cfg, RngStream::new(seed, 0))?;
    let mut out = String::from("y,s,x,z,p\n");
    for i in 0..n {
        let y = if sim.data.s[i] { sim.data.y[i].to_string() } else { String::new() };
        let _ = writeln!(
            out,
            "{y},{},{},{},{}",
            u8::from(sim.data.s[i]),
            sim.data.x[i],
            sim.ztilde[i],
            sim.oracle_p[i]
        );
    }
    Ok(out)
}

fn load(csv: &str) -> Result<(Loaded, PropensitySpec)> {
    let header = csv.lines().next().unwrap_or_default();
    let has_p = header.split(',').any(|c| c.trim() == "p");
    let roles = ColumnRoles {
        outcome: "y".into(),
        selection: "s".into(),
        x: vec!["x".into()],
        zc: vec!["x".into(), "z".into()],
        zd: Vec::new(),
        oracle_p: has_p.then(|| "p".into()),
    };
    let loaded = read_csv(csv.as_bytes(), &roles)?;
    let spec = match &loaded.oracle_p {
        Some(p) => PropensitySpec::Given(p.clone()),
        None => DEMO_PROPENSITY,
    };
    Ok((loaded, spec))
}

/// Comma-separated τ values; blank keeps the default grid.
fn parse_taus(s: &str) -> Result<Option<Vec<f64>>> {
    if s.trim().is_empty() {
        return Ok(None);
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::data(format!("cannot read {t:?} as a quantile level")))
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

pub fn quantile(csv: &str, taus: &str, replications: usize, seed: u64) -> Result<String> {
    let (loaded, spec) = load(csv)?;
    let mut cfg = Test1Config {
        replications,
        ..Test1Config::default()
    };
    if let Some(t) = parse_taus(taus)? {
        cfg.taus = t;
    }
    let report = run_test1(&loaded.data, &spec, &cfg, RngStream::new(seed, 0))?;
    Ok(report_text(&report))
}

pub fn mean(csv: &str, replications: usize, seed: u64) -> Result<String> {
    let (loaded, spec) = load(csv)?;
    let cfg = MeanTestConfig {
        replications,
        ..MeanTestConfig::default()
    };
    let report = run_meantest(&loaded.data, &spec, &cfg, RngStream::new(seed, 0))?;
    Ok(report_text(&report))
}

#[wasm_bindgen(js_name = sampleCsv)]
pub fn sample_csv(n: u32, rho: f64, gamma1: f64, mean_outcome: bool, seed: u32) -> std::result::Result<String, JsError> {
    sample(n as usize, rho, gamma1, mean_outcome, seed.into()).map_err(js)
}

#[wasm_bindgen(js_name = quantileTest)]
pub fn quantile_test(csv: &str, taus: &str, replications: u32, seed: u32) -> std::result::Result<String, JsError> {
    quantile(csv, taus, replications as usize, seed.into()).map_err(js)
}

#[wasm_bindgen(js_name = meanTest)]
pub fn mean_test(csv: &str, replications: u32, seed: u32) -> std::result::Result<String, JsError> {
    mean(csv, replications as usize, seed.into()).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_round_trips_through_both_tests() {
        let csv = sample(400, 0.5, 0.0, false, 3).unwrap();
        assert_eq!(csv.lines().count(), 401);
        let q = quantile(&csv, "0.3,0.5,0.7", 30, 1).unwrap();
        assert!(q.contains("P-Value"));
        let m = mean(&sample(400, 0.0, 0.0, true, 4).unwrap(), 30, 1).unwrap();
        assert!(m.contains("# obs"));
    }

    #[test]
    fn bad_tau_is_reported() {
        let csv = sample(200, 0.0, 0.0, false, 1).unwrap();
        let e = quantile(&csv, "0.3,half", 10, 1).unwrap_err();
        assert!(e.to_string().contains("half"));
    }

    #[test]
    fn missing_p_falls_back_to_estimated_scores() {
        let csv = sample(300, 0.0, 0.0, true, 2).unwrap();
        let no_p: String = csv
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string() + "\n")
            .collect();
        assert!(mean(&no_p, 20, 1).is_ok());
    }
}
