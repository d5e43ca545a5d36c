//! Output of warp-speed simulation runs.

use std::fmt::Write as _;

use qselect::io::OutputFormat;
use qselect::montecarlo::{DgpConfig, McResult, McTest, PropensitySource};
use qselect::Result;

pub fn simulation(
    result: &McResult,
    dgp: &DgpConfig,
    test: &McTest,
    propensity: &PropensitySource,
    seed: u64,
    format: OutputFormat,
) -> Result<String> {
    Ok(match format {
        OutputFormat::Json => {
            let v = serde_json::json!({
                "rejection_rates": result.rejection_rates,
                "reps": result.reps,
                "failures": result.failures,
                "failure_messages": result.failure_messages,
                "statistics": result.statistics,
                "draws": result.draws,
                "p_values": result.p_values,
                "config_echo": { "dgp": dgp, "test": test, "propensity": propensity },
                "seed": seed,
            });
            let mut s = serde_json::to_string_pretty(&v)?;
            s.push('\n');
            s
        }
        OutputFormat::Csv => {
            let mut s = String::from("replication,statistic,draw,p_value\n");
            for (r, ((st, d), p)) in result.statistics.iter().zip(&result.draws).zip(&result.p_values).enumerate() {
                let _ = writeln!(s, "{},{st},{d},{p}", r + 1);
            }
            s
        }
        OutputFormat::Text => {
            let mut s = String::new();
            let _ = writeln!(
                s,
                "design={:?} rho={} gamma1={} n={} reps={} failures={} seed={seed}",
                dgp.design, dgp.rho, dgp.gamma1, dgp.n, result.reps, result.failures
            );
            for (alpha, rate) in &result.rejection_rates {
                let _ = writeln!(s, "alpha={alpha:<6} rejection rate {rate:.3}");
            }
            s
        }
    })
}
