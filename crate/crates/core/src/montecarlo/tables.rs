//! Replication of the published rejection-rate tables.
//!
//! Every table block has rows `(α, n)` for `α ∈ {0.05, 0.10}` and two sample
//! sizes, and one column per tuning configuration. Published values are kept
//! alongside so each run prints both.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::estimators::bandwidth::{CvOptions, HxChoice};
use crate::grid::GridOptions;
use crate::meantest::MeanTestConfig;
use crate::montecarlo::dgp::{Design, DgpConfig, OutcomeKind};
use crate::montecarlo::warp::{run_warp_speed, McResult, McTest, PropensitySource};
use crate::rng::RngStream;
use crate::test1::Test1Config;
use crate::test2::Test2Config;

/// Quantile levels used throughout the simulations.
pub const SIM_TAUS: [f64; 3] = [0.3, 0.5, 0.7];
/// Tail share trimmed from each end of the selected covariate.
pub const SIM_TRIM: f64 = 0.025;
/// Replications at full scale.
pub const FULL_REPS: usize = 999;
pub const ALPHAS: [f64; 2] = [0.05, 0.10];

/// Estimated-propensity cases: cross-validation subset size and count.
pub const SIM_PROPENSITY: PropensitySource = PropensitySource::CrossValidated {
    subset_size: 250,
    reps: 3,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// First quantile test.
    T1,
    /// Second quantile test.
    T2,
    /// Mean test.
    S1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TableId {
    pub family: Family,
    /// 1-based case number.
    pub case: u8,
}

const ROMAN: [&str; 8] = ["I", "II", "III", "IV", "V", "VI", "VII", "VIII"];

impl TableId {
    pub fn all() -> Vec<TableId> {
        let mut v = Vec::new();
        for (family, cases) in [(Family::T1, 8), (Family::T2, 6), (Family::S1, 6)] {
            for case in 1..=cases {
                v.push(TableId { family, case });
            }
        }
        v
    }
}

impl std::fmt::Display for TableId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let roman = ROMAN[self.case as usize - 1];
        match self.family {
            Family::T1 => write!(f, "T1-case{roman}"),
            Family::T2 => write!(f, "T2-case{roman}*"),
            Family::S1 => write!(f, "S1-case{roman}"),
        }
    }
}

impl FromStr for TableId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TableId::all()
            .into_iter()
            .find(|id| id.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                let known: Vec<String> = TableId::all().iter().map(ToString::to_string).collect();
                Error::config(Stage::Simulation, format!("unknown table id {s:?}; known: {}", known.join(", ")))
            })
    }
}

/// One column of a table block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub label: String,
    pub dgp: DgpConfig,
    pub test: McTest,
    pub propensity: PropensitySource,
    /// Published rates: `[α=.05 n₁, α=.05 n₂, α=.10 n₁, α=.10 n₂]`.
    pub published: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableLayout {
    pub id: String,
    pub title: String,
    pub ns: [usize; 2],
    pub columns: Vec<ColumnSpec>,
}

fn grid() -> GridOptions {
    GridOptions {
        trim: SIM_TRIM,
        ..GridOptions::default()
    }
}

/// First-test tuning used in the simulations.
pub fn sim_test1(hx: HxChoice) -> McTest {
    McTest::Test1(Test1Config {
        taus: SIM_TAUS.to_vec(),
        hx,
        grid: grid(),
        replications: 1,
        alphas: ALPHAS.to_vec(),
        ..Test1Config::default()
    })
}

/// Second-test tuning; `window` is `(δ, h_p)`, automatic when `None`.
pub fn sim_test2(hx: HxChoice, window: Option<(f64, f64)>) -> McTest {
    McTest::Test2(Test2Config {
        taus: SIM_TAUS.to_vec(),
        hx,
        delta: window.map(|w| w.0),
        h_p: window.map(|w| w.1),
        replications: 1,
        alphas: ALPHAS.to_vec(),
        ..Test2Config::default()
    })
}

/// Mean-test tuning with rule-of-thumb constant `c`.
pub fn sim_meantest(c: f64) -> McTest {
    McTest::Meantest(MeanTestConfig {
        hx: HxChoice::RuleOfThumb { c },
        grid: grid(),
        replications: 1,
        alphas: ALPHAS.to_vec(),
        ..MeanTestConfig::default()
    })
}

/// Cross-validated `h_x` with default options.
pub fn cv() -> HxChoice {
    HxChoice::CrossValidated(CvOptions::default())
}

/// Column-major view of four published rows.
fn cols<const C: usize>(rows: [[f64; C]; 4]) -> Vec<[f64; 4]> {
    (0..C).map(|c| [rows[0][c], rows[1][c], rows[2][c], rows[3][c]]).collect()
}

const RHOS: [f64; 3] = [0.0, 0.25, 0.5];
const C_QUANTILE: [f64; 3] = [3.5, 4.0, 4.5];
const C_MEAN: [f64; 3] = [0.125, 0.25, 0.5];
const WINDOWS: [(f64, f64); 4] = [(0.95, 0.075), (0.95, 0.05), (0.975, 0.03), (0.98, 0.02)];

const T1_RULE: [[[f64; 9]; 4]; 4] = [
    [
        [0.071, 0.090, 0.080, 0.381, 0.393, 0.379, 0.888, 0.902, 0.892],
        [0.065, 0.060, 0.054, 0.631, 0.614, 0.517, 0.986, 0.986, 0.987],
        [0.143, 0.157, 0.147, 0.497, 0.517, 0.476, 0.940, 0.950, 0.937],
        [0.114, 0.108, 0.126, 0.762, 0.715, 0.679, 0.999, 0.995, 0.994],
    ],
    [
        [0.076, 0.068, 0.066, 0.240, 0.243, 0.245, 0.652, 0.668, 0.654],
        [0.041, 0.049, 0.058, 0.388, 0.362, 0.341, 0.905, 0.898, 0.920],
        [0.130, 0.120, 0.112, 0.352, 0.377, 0.330, 0.784, 0.787, 0.771],
        [0.090, 0.101, 0.111, 0.505, 0.489, 0.443, 0.950, 0.951, 0.955],
    ],
    [
        [0.119, 0.099, 0.094, 0.338, 0.375, 0.338, 0.858, 0.902, 0.870],
        [0.086, 0.072, 0.065, 0.624, 0.550, 0.558, 0.994, 0.988, 0.992],
        [0.174, 0.162, 0.133, 0.492, 0.494, 0.478, 0.933, 0.942, 0.931],
        [0.141, 0.133, 0.149, 0.743, 0.696, 0.692, 0.997, 0.995, 0.997],
    ],
    [
        [0.083, 0.083, 0.077, 0.466, 0.421, 0.437, 0.937, 0.944, 0.931],
        [0.096, 0.092, 0.088, 0.683, 0.698, 0.663, 0.998, 0.996, 0.996],
        [0.152, 0.156, 0.135, 0.589, 0.528, 0.543, 0.968, 0.974, 0.968],
        [0.150, 0.154, 0.181, 0.794, 0.798, 0.778, 1.000, 0.999, 0.999],
    ],
];

const T1_CV: [[[f64; 3]; 4]; 2] = [
    [
        [0.072, 0.331, 0.876],
        [0.045, 0.546, 0.989],
        [0.123, 0.482, 0.930],
        [0.111, 0.686, 0.996],
    ],
    [
        [0.060, 0.325, 0.842],
        [0.040, 0.565, 0.991],
        [0.130, 0.426, 0.908],
        [0.104, 0.673, 0.997],
    ],
];

const T1_MISSPEC: [[[f64; 2]; 4]; 2] = [
    [[1.000, 1.000], [1.000, 1.000], [1.000, 1.000], [1.000, 1.000]],
    [[0.997, 1.000], [1.000, 1.000], [0.999, 1.000], [1.000, 1.000]],
];

/// Normal-instrument second-test blocks; the last column is the
/// data-driven configuration.
const T2_NORMAL: [[[f64; 13]; 4]; 3] = [
    [
        [0.067, 0.076, 0.067, 0.066, 0.060, 0.067, 0.079, 0.070, 0.080, 0.075, 0.083, 0.089, 0.076],
        [0.088, 0.129, 0.131, 0.121, 0.096, 0.105, 0.102, 0.080, 0.072, 0.068, 0.080, 0.078, 0.0831],
        [0.113, 0.112, 0.124, 0.112, 0.111, 0.118, 0.125, 0.120, 0.122, 0.141, 0.140, 0.143, 0.115],
        [0.215, 0.210, 0.227, 0.174, 0.167, 0.169, 0.124, 0.127, 0.129, 0.138, 0.144, 0.141, 0.140],
    ],
    [
        [0.998, 0.998, 0.997, 0.991, 0.987, 0.986, 0.875, 0.858, 0.876, 0.761, 0.777, 0.805, 0.821],
        [1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 0.999, 0.999, 0.998, 0.984, 0.988, 0.986, 0.857],
        [0.998, 0.999, 0.998, 0.994, 0.993, 0.994, 0.924, 0.922, 0.922, 0.884, 0.882, 0.879, 0.888],
        [1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 0.996, 0.996, 0.995, 0.927],
    ],
    [
        [1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 0.998, 0.998, 0.997, 0.967, 0.973, 0.980, 0.993],
        [1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 0.981],
        [1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 0.995, 0.995, 0.995, 1.000],
        [1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 1.000, 0.994],
    ],
];

/// Binary-instrument second-test blocks; the third row of the last two
/// blocks is printed under α = 0.05 in the source and read as α = 0.10.
const T2_BINARY: [[[f64; 7]; 4]; 3] = [
    [
        [0.005, 0.003, 0.004, 0.007, 0.005, 0.005, 0.001],
        [0.002, 0.002, 0.003, 0.001, 0.003, 0.003, 0.003],
        [0.013, 0.009, 0.012, 0.010, 0.007, 0.012, 0.008],
        [0.011, 0.014, 0.015, 0.011, 0.009, 0.006, 0.011],
    ],
    [
        [0.177, 0.156, 0.184, 0.084, 0.088, 0.078, 0.209],
        [0.536, 0.554, 0.518, 0.271, 0.250, 0.253, 0.472],
        [0.256, 0.278, 0.291, 0.129, 0.130, 0.150, 0.350],
        [0.721, 0.716, 0.720, 0.425, 0.421, 0.424, 0.641],
    ],
    [
        [0.779, 0.739, 0.760, 0.457, 0.472, 0.438, 0.612],
        [1.000, 0.997, 0.998, 0.899, 0.915, 0.910, 0.996],
        [0.868, 0.864, 0.870, 0.571, 0.573, 0.588, 0.679],
        [1.000, 1.000, 0.999, 0.960, 0.962, 0.962, 1.000],
    ],
];

const S1: [[[f64; 9]; 4]; 6] = [
    [
        [0.073, 0.061, 0.056, 0.204, 0.179, 0.238, 0.455, 0.535, 0.568],
        [0.054, 0.046, 0.053, 0.355, 0.350, 0.414, 0.917, 0.931, 0.905],
        [0.142, 0.126, 0.117, 0.302, 0.298, 0.355, 0.648, 0.662, 0.709],
        [0.118, 0.094, 0.098, 0.459, 0.480, 0.537, 0.957, 0.966, 0.960],
    ],
    [
        [0.067, 0.072, 0.084, 0.115, 0.143, 0.164, 0.369, 0.435, 0.384],
        [0.047, 0.040, 0.052, 0.224, 0.215, 0.299, 0.770, 0.702, 0.730],
        [0.129, 0.126, 0.163, 0.211, 0.224, 0.244, 0.487, 0.530, 0.499],
        [0.102, 0.112, 0.108, 0.337, 0.346, 0.390, 0.826, 0.792, 0.815],
    ],
    [
        [0.051, 0.043, 0.055, 0.153, 0.168, 0.211, 0.545, 0.585, 0.560],
        [0.044, 0.032, 0.038, 0.393, 0.377, 0.358, 0.908, 0.903, 0.911],
        [0.103, 0.090, 0.129, 0.265, 0.279, 0.305, 0.647, 0.675, 0.699],
        [0.110, 0.081, 0.092, 0.501, 0.518, 0.484, 0.954, 0.946, 0.953],
    ],
    [
        [0.077, 0.059, 0.056, 0.218, 0.218, 0.239, 0.606, 0.587, 0.586],
        [0.061, 0.074, 0.062, 0.396, 0.465, 0.422, 0.964, 0.967, 0.948],
        [0.134, 0.118, 0.117, 0.316, 0.339, 0.349, 0.714, 0.674, 0.709],
        [0.111, 0.122, 0.146, 0.531, 0.577, 0.583, 0.984, 0.989, 0.980],
    ],
    [
        [0.073, 0.068, 0.071, 0.172, 0.177, 0.178, 0.536, 0.526, 0.640],
        [0.056, 0.039, 0.040, 0.349, 0.343, 0.405, 0.916, 0.911, 0.918],
        [0.128, 0.132, 0.152, 0.280, 0.295, 0.287, 0.660, 0.686, 0.730],
        [0.120, 0.102, 0.093, 0.462, 0.438, 0.512, 0.954, 0.955, 0.969],
    ],
    [
        [0.066, 0.053, 0.064, 0.160, 0.134, 0.142, 0.375, 0.350, 0.375],
        [0.049, 0.063, 0.046, 0.212, 0.211, 0.229, 0.718, 0.695, 0.712],
        [0.111, 0.124, 0.132, 0.220, 0.197, 0.225, 0.474, 0.453, 0.488],
        [0.082, 0.100, 0.096, 0.329, 0.303, 0.338, 0.811, 0.808, 0.808],
    ],
];

const DESIGNS: [Design; 4] = [Design::Normal, Design::Binomial, Design::Poisson, Design::DiscreteUniform];

fn design_name(d: Design) -> &'static str {
    match d {
        Design::Normal => "normal instrument",
        Design::Binomial => "binary instrument",
        Design::Poisson => "Poisson instrument",
        Design::DiscreteUniform => "discrete uniform instrument",
    }
}

/// Column configurations and published values of a table block.
pub fn layout(id: TableId) -> Result<TableLayout> {
    let case = id.case as usize;
    let base = DgpConfig::default();
    let mut columns = Vec::new();
    let (title, ns) = match (id.family, case) {
        (Family::T1, 1..=4) => {
            let design = DESIGNS[case - 1];
            let published = cols(T1_RULE[case - 1]);
            let mut k = 0;
            for &rho in &RHOS {
                for &c in &C_QUANTILE {
                    columns.push(ColumnSpec {
                        label: format!("rho={rho} c={c}"),
                        dgp: DgpConfig { design, rho, ..base.clone() },
                        test: sim_test1(HxChoice::RuleOfThumb { c }),
                        propensity: PropensitySource::Oracle,
                        published: published[k],
                    });
                    k += 1;
                }
            }
            (format!("first test, {}, oracle propensity, rule-of-thumb h_x", design_name(design)), [1000, 2000])
        }
        (Family::T1, 5 | 6) => {
            let published = cols(T1_CV[case - 5]);
            let propensity = if case == 5 { PropensitySource::Oracle } else { SIM_PROPENSITY };
            for (k, &rho) in RHOS.iter().enumerate() {
                columns.push(ColumnSpec {
                    label: format!("rho={rho} cv-h_x"),
                    dgp: DgpConfig { rho, ..base.clone() },
                    test: sim_test1(cv()),
                    propensity: propensity.clone(),
                    published: published[k],
                });
            }
            let p = if case == 5 { "oracle" } else { "estimated" };
            (format!("first test, normal instrument, {p} propensity, cross-validated h_x"), [1000, 2000])
        }
        (Family::T1, 7 | 8) => {
            let design = DESIGNS[case - 7];
            let published = cols(T1_MISSPEC[case - 7]);
            for (k, &gamma1) in [0.25, 0.5].iter().enumerate() {
                columns.push(ColumnSpec {
                    label: format!("gamma1={gamma1} cv-h_x"),
                    dgp: DgpConfig { design, gamma1, ..base.clone() },
                    test: sim_test1(cv()),
                    propensity: PropensitySource::Oracle,
                    published: published[k],
                });
            }
            (format!("first test under misspecification, {}, no selection", design_name(design)), [1000, 2000])
        }
        (Family::T2, 1..=3) => {
            let gamma1 = [0.0, 0.25, 0.5][case - 1];
            let dgp = DgpConfig {
                rho: 0.25,
                gamma1,
                instrument_variance: 0.5,
                ..base.clone()
            };
            let published = cols(T2_NORMAL[case - 1]);
            let mut k = 0;
            for &w in &WINDOWS {
                for &c in &C_QUANTILE {
                    columns.push(ColumnSpec {
                        label: format!("delta={} h_p={} c={c}", w.0, w.1),
                        dgp: dgp.clone(),
                        test: sim_test2(HxChoice::RuleOfThumb { c }, Some(w)),
                        propensity: PropensitySource::Oracle,
                        published: published[k],
                    });
                    k += 1;
                }
            }
            columns.push(ColumnSpec {
                label: "cv-h_x auto-h_p".into(),
                dgp,
                test: sim_test2(cv(), None),
                propensity: PropensitySource::Oracle,
                published: published[k],
            });
            (format!("second test, normal instrument (variance 0.5), rho=0.25, gamma1={gamma1}"), [1000, 2000])
        }
        (Family::T2, 4..=6) => {
            let gamma1 = [0.0, 0.25, 0.5][case - 4];
            let dgp = DgpConfig {
                design: Design::Binomial,
                rho: 0.25,
                gamma1,
                sigma: 0.5,
                ..base.clone()
            };
            let published = cols(T2_BINARY[case - 4]);
            let mut k = 0;
            for &w in &WINDOWS[..2] {
                for &c in &C_QUANTILE {
                    columns.push(ColumnSpec {
                        label: format!("delta={} h_p={} c={c}", w.0, w.1),
                        dgp: dgp.clone(),
                        test: sim_test2(HxChoice::RuleOfThumb { c }, Some(w)),
                        propensity: PropensitySource::Oracle,
                        published: published[k],
                    });
                    k += 1;
                }
            }
            columns.push(ColumnSpec {
                label: "cv-h_x auto-h_p".into(),
                dgp,
                test: sim_test2(cv(), None),
                propensity: PropensitySource::Oracle,
                published: published[k],
            });
            (format!("second test, binary instrument, sigma=0.5, rho=0.25, gamma1={gamma1}"), [1000, 2000])
        }
        (Family::S1, 1..=6) => {
            let (design, propensity) = match case {
                1..=4 => (DESIGNS[case - 1], PropensitySource::Oracle),
                5 => (Design::Normal, SIM_PROPENSITY),
                _ => (Design::Binomial, SIM_PROPENSITY),
            };
            let published = cols(S1[case - 1]);
            let mut k = 0;
            for &rho in &RHOS {
                for &c in &C_MEAN {
                    columns.push(ColumnSpec {
                        label: format!("rho={rho} c={c}"),
                        dgp: DgpConfig {
                            design,
                            rho,
                            outcome: OutcomeKind::QuadraticMean,
                            ..base.clone()
                        },
                        test: sim_meantest(c),
                        propensity: propensity.clone(),
                        published: published[k],
                    });
                    k += 1;
                }
            }
            let p = if case <= 4 { "oracle" } else { "estimated" };
            (format!("mean test, {}, {p} propensity", design_name(design)), [400, 1000])
        }
        _ => return Err(Error::config(Stage::Simulation, format!("unknown table id {id}"))),
    };
    Ok(TableLayout {
        id: id.to_string(),
        title,
        ns,
        columns,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOptions {
    /// Share of the full replication count, in `(0, 1]`.
    pub scale: f64,
    /// Replace the published sample sizes.
    pub ns: Option<[usize; 2]>,
    /// Restrict to these column indices.
    pub columns: Option<Vec<usize>>,
}

impl Default for ReplicateOptions {
    fn default() -> Self {
        Self {
            scale: 1.0,
            ns: None,
            columns: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub column: String,
    pub n: usize,
    pub alpha: f64,
    pub rate: f64,
    pub published: Option<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableResult {
    pub id: String,
    pub title: String,
    pub reps: usize,
    pub seed: u64,
    pub cells: Vec<TableCell>,
}

pub fn reps_for(scale: f64) -> usize {
    ((FULL_REPS as f64 * scale).round() as usize).max(1)
}

/// Run every `(column, n)` cell; cell `k` in column-major order uses
/// `stream.child(k)`.
pub fn replicate_table(id: TableId, opts: &ReplicateOptions, stream: RngStream) -> Result<TableResult> {
    if !(opts.scale > 0.0 && opts.scale <= 1.0) {
        return Err(Error::config(Stage::Simulation, "scale must lie in (0, 1]"));
    }
    let lay = layout(id)?;
    let ns = opts.ns.unwrap_or(lay.ns);
    let same_ns = ns == lay.ns;
    let reps = reps_for(opts.scale);
    let mut cells = Vec::new();
    for (c, col) in lay.columns.iter().enumerate() {
        if opts.columns.as_ref().is_some_and(|keep| !keep.contains(&c)) {
            continue;
        }
        for (j, &n) in ns.iter().enumerate() {
            let dgp = DgpConfig { n, ..col.dgp.clone() };
            let k = (c * 2 + j) as u64;
            let res: McResult = run_warp_speed(&dgp, &col.test, &col.propensity, reps, &ALPHAS, stream.child(k))?;
            for (a, &alpha) in ALPHAS.iter().enumerate() {
                cells.push(TableCell {
                    column: col.label.clone(),
                    n,
                    alpha,
                    rate: res.rejection_rates[&crate::report::alpha_key(alpha)],
                    published: same_ns.then_some(col.published[a * 2 + j]),
                    failures: res.failures,
                });
            }
        }
    }
    Ok(TableResult {
        id: lay.id,
        title: lay.title,
        reps,
        seed: stream.seed,
        cells,
    })
}

impl TableResult {
    /// Tabular block: one row per `(α, n)`, one column per
    /// configuration, each entry `ours (published)`.
    pub fn to_text(&self) -> String {
        let mut columns: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !columns.contains(&c.column.as_str()) {
                columns.push(&c.column);
            }
        }
        let mut ns: Vec<usize> = self.cells.iter().map(|c| c.n).collect();
        ns.sort_unstable();
        ns.dedup();
        let width = columns.iter().map(|c| c.len()).max().unwrap_or(0).max(15);
        let mut out = String::new();
        let _ = writeln!(out, "{}: {}", self.id, self.title);
        let _ = writeln!(out, "warp-speed replications: {}, seed: {}", self.reps, self.seed);
        let _ = write!(out, "{:<18}", "");
        for c in &columns {
            let _ = write!(out, " | {c:>width$}");
        }
        out.push('\n');
        for &alpha in &ALPHAS {
            for &n in &ns {
                let _ = write!(out, "{:<18}", format!("alpha={alpha:.2} n={n}"));
                for c in &columns {
                    let cell = self.cells.iter().find(|x| x.column == *c && x.n == n && x.alpha == alpha);
                    let s = match cell {
                        Some(x) => match x.published {
                            Some(p) => format!("{:.3} ({p:.3})", x.rate),
                            None => format!("{:.3}", x.rate),
                        },
                        None => String::new(),
                    };
                    let _ = write!(out, " | {s:>width$}");
                }
                out.push('\n');
            }
        }
        let failed: usize = self.cells.iter().filter(|c| c.alpha == ALPHAS[0]).map(|c| c.failures).sum();
        if failed > 0 {
            let _ = writeln!(out, "failed replications (excluded): {failed}");
        }
        out
    }

    /// One line per cell: `id,column,n,alpha,rate,published,failures`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("table,column,n,alpha,rate,published,failures\n");
        for c in &self.cells {
            let published = c.published.map(|p| p.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{},{},{}", self.id, c.column, c.n, c.alpha, c.rate, published, c.failures);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for id in TableId::all() {
            assert_eq!(id.to_string().parse::<TableId>().unwrap(), id);
        }
        assert!("T3-caseI".parse::<TableId>().is_err());
        assert_eq!("t2-caseiv*".parse::<TableId>().unwrap().case, 4);
    }

    #[test]
    fn layouts_are_complete() {
        for id in TableId::all() {
            let l = layout(id).unwrap();
            let expect = match (id.family, id.case) {
                (Family::T1, 1..=4) | (Family::S1, _) => 9,
                (Family::T1, 5 | 6) => 3,
                (Family::T1, _) => 2,
                (Family::T2, 1..=3) => 13,
                (Family::T2, _) => 7,
            };
            assert_eq!(l.columns.len(), expect, "{id}");
        }
    }

    #[test]
    fn binary_second_test_uses_half_sigma() {
        let l = layout("T2-caseIV*".parse().unwrap()).unwrap();
        assert!(l.columns.iter().all(|c| c.dgp.sigma == 0.5 && c.dgp.design == Design::Binomial));
    }

    #[test]
    fn case_five_cross_validates() {
        let l = layout("T1-caseV".parse().unwrap()).unwrap();
        assert!(matches!(&l.columns[0].test, McTest::Test1(c) if matches!(c.hx, HxChoice::CrossValidated(_))));
    }
}
