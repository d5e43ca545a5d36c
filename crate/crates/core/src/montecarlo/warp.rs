//! Warp-speed Monte Carlo: one statistic and one bootstrap draw per
//! replication, with critical values taken from the pooled draws.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::propensity::{resolve_propensity, PropensitySpec};
use crate::meantest::{prepare_meantest, MeanTestConfig};
use crate::montecarlo::dgp::{generate_dgp, DgpConfig};
use crate::parallel::map_indexed;
use crate::report::{alpha_key, critical_value_sorted, validate_alphas};
use crate::rng::RngStream;
use crate::test1::{prepare_test1, Test1Config, PROPENSITY_TAG};
use crate::test2::{prepare_test2, Test2Config};

/// Test run inside each replication, with its tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "test", content = "config")]
pub enum McTest {
    Test1(Test1Config),
    Test2(Test2Config),
    Meantest(MeanTestConfig),
}

impl McTest {
    fn kernel(&self) -> crate::kernels::KernelSpec {
        match self {
            McTest::Test1(c) => c.kernel,
            McTest::Test2(c) => c.kernel,
            McTest::Meantest(c) => c.kernel,
        }
    }
}

/// Where each replication's propensity score comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensitySource {
    Oracle,
    CrossValidated { subset_size: usize, reps: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    /// Keyed by α as written.
    pub rejection_rates: BTreeMap<String, f64>,
    pub reps: usize,
    pub failures: usize,
    /// Per successful replication, in replication order.
    pub statistics: Vec<f64>,
    pub draws: Vec<f64>,
    /// `(1 + #{pooled draw ≥ statistic}) / (R + 1)` per replication.
    pub p_values: Vec<f64>,
    /// Error messages of failed replications.
    pub failure_messages: Vec<String>,
}

/// Maximum failed share before the whole run is an error.
pub const MAX_FAILURE_SHARE: f64 = 0.02;

/// Statistic and one bootstrap draw for a single simulated sample.
pub fn one_replication(dgp: &DgpConfig, test: &McTest, propensity: &PropensitySource, stream: RngStream) -> Result<(f64, f64)> {
    let sim = generate_dgp(dgp, stream.child(0))?;
    let phat = match propensity {
        PropensitySource::Oracle => sim.oracle_p,
        PropensitySource::CrossValidated { subset_size, reps } => {
            let spec = PropensitySpec::CrossValidated {
                subset_size: *subset_size,
                reps: *reps,
            };
            resolve_propensity(&sim.data, &spec, test.kernel(), stream.child(PROPENSITY_TAG))?.phat
        }
    };
    let boot = stream.child(1);
    let data = &sim.data;
    Ok(match test {
        McTest::Test1(cfg) => {
            let prep = prepare_test1(data, &phat, cfg)?;
            (prep.statistic().statistic, prep.draw(boot))
        }
        McTest::Test2(cfg) => {
            let (w, _, _) = prepare_test2(data, &phat, cfg)?;
            let stat = w.z2_profile().iter().fold(0.0, |m: f64, v| m.max(v.abs()));
            (stat, w.draw(boot))
        }
        McTest::Meantest(cfg) => {
            let prep = prepare_meantest(data, &phat, cfg)?;
            (prep.statistic(data).statistic, prep.draw(data, cfg.multiplier, boot))
        }
    })
}

/// Replication `r` uses `stream.child(r)`; rejection means
/// `statistic ≥ c*`, with `c*` the `⌈(1−α)R⌉`-th pooled draw.
pub fn run_warp_speed(
    dgp: &DgpConfig,
    test: &McTest,
    propensity: &PropensitySource,
    reps: usize,
    alphas: &[f64],
    stream: RngStream,
) -> Result<McResult> {
    validate_alphas(alphas)?;
    dgp.validate()?;
    if reps < 1 {
        return Err(Error::config(crate::Stage::Simulation, "need at least one replication"));
    }
    let out = map_indexed(reps, |r| one_replication(dgp, test, propensity, stream.child(r as u64)));
    let mut statistics = Vec::with_capacity(reps);
    let mut draws = Vec::with_capacity(reps);
    let mut failure_messages = Vec::new();
    for res in out {
        match res {
            Ok((s, d)) => {
                statistics.push(s);
                draws.push(d);
            }
            Err(e) => failure_messages.push(e.to_string()),
        }
    }
    let failures = failure_messages.len();
    if failures as f64 > MAX_FAILURE_SHARE * reps as f64 || statistics.is_empty() {
        return Err(Error::TooManyFailures { failed: failures, reps });
    }
    let mut sorted = draws.clone();
    sorted.sort_by(f64::total_cmp);
    let m = statistics.len() as f64;
    let rejection_rates = alphas
        .iter()
        .map(|&a| {
            let cv = critical_value_sorted(&sorted, a);
            let rejected = statistics.iter().filter(|&&s| s >= cv).count();
            (alpha_key(a), rejected as f64 / m)
        })
        .collect();
    let p_values = statistics
        .iter()
        .map(|&s| {
            let exceed = sorted.len() - sorted.partition_point(|&d| d < s);
            (1 + exceed) as f64 / (sorted.len() + 1) as f64
        })
        .collect();
    Ok(McResult {
        rejection_rates,
        reps,
        failures,
        statistics,
        draws,
        p_values,
        failure_messages,
    })
}
