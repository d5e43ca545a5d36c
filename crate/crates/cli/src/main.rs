use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use qselect::estimators::bandwidth::{CvOptions, HxChoice};
use qselect::estimators::locpoly::TieRule;
use qselect::estimators::propensity::PropensitySpec;
use qselect::grid::GridOptions;
use qselect::io::{emit_report, load_csv, write_output, ColumnRoles, Loaded, OutputFormat};
use qselect::kernels::KernelSpec;
use qselect::meantest::{run_meantest, BandwidthScale, MeanTestConfig, Multiplier};
use qselect::montecarlo::tables::{replicate_table, sim_meantest, sim_test1, sim_test2, ReplicateOptions, TableId, SIM_PROPENSITY};
use qselect::montecarlo::{run_warp_speed, Design, DgpConfig, McResult, McTest, OutcomeKind, PropensitySource};
use qselect::parallel::with_threads;
use qselect::rng::RngStream;
use qselect::test1::{run_test1, Test1Config};
use qselect::test2::{run_test2, EtaOptions, Test2Config};
use qselect::{Error, Result, Stage};

mod render;

/// Nonparametric tests for sample selection in conditional quantile and
/// mean functions.
#[derive(Parser, Debug)]
#[command(name = "qselect", version, about)]
struct Cli {
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, env = "QSELECT_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Omnibus test over quantile levels, covariate boxes and propensity intervals.
    Test1(Test1Args),
    /// Studentized test on observations with propensity near one.
    Test2(Test2Args),
    /// Omnibus test for the conditional mean.
    Meantest(MeanArgs),
    /// Warp-speed Monte Carlo for one design and one test.
    Simulate(SimulateArgs),
    /// Re-run a published rejection-rate table block.
    Replicate(ReplicateArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Outcome column.
    #[arg(long, default_value = "y")]
    outcome: String,
    /// Binary selection column (0/1).
    #[arg(long, default_value = "s")]
    selection: String,
    /// Outcome covariates, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    x: Vec<String>,
    /// Continuous selection covariates; x columns may reappear here.
    #[arg(long, value_delimiter = ',')]
    zc: Vec<String>,
    /// Discrete selection covariates, read as categories.
    #[arg(long, value_delimiter = ',')]
    zd: Vec<String>,
    /// Column holding a known propensity score.
    #[arg(long)]
    oracle_p: Option<String>,
    /// Fixed propensity bandwidths for the continuous instruments.
    #[arg(long, value_delimiter = ',')]
    h_z: Vec<f64>,
    /// Li-Racine smoothing weights for the discrete instruments (with --h-z).
    #[arg(long, value_delimiter = ',')]
    lambda: Vec<f64>,
    /// Rows per propensity cross-validation subset.
    #[arg(long, default_value_t = 500)]
    cv_subset: usize,
    /// Number of propensity cross-validation subsets.
    #[arg(long, default_value_t = 5)]
    cv_reps: usize,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Bootstrap replications.
    #[arg(long = "R", default_value_t = 400)]
    replications: usize,
    /// Significance levels, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.05])]
    alpha: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Continuous kernel: epanechnikov, biweight or triangular.
    #[arg(long, default_value = "epanechnikov", value_parser = kebab::<KernelSpec>)]
    kernel: KernelSpec,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value = "json", value_parser = parse_format)]
    format: OutputFormat,
}

#[derive(Args, Debug)]
struct QuantileArgs {
    /// Quantile levels as start:stop:step or a comma list.
    #[arg(long, default_value = "0.1:0.9:0.1", value_parser = parse_taus)]
    tau: TauGrid,
    /// Local polynomial order.
    #[arg(long, default_value_t = 3)]
    order: usize,
    /// Rule-of-thumb constant c in h_x = c sd(x) n^(-1/3).
    #[arg(long)]
    hx_c: Option<f64>,
    /// Fixed h_x, one per x column.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["hx_c", "hx_cv"])]
    hx: Vec<f64>,
    /// Cross-validate h_x at a lower polynomial order.
    #[arg(long, conflicts_with = "hx_c")]
    hx_cv: bool,
    /// Handling of exactly zero residuals: randomized, centred or inclusive.
    #[arg(long, default_value = "randomized", value_parser = kebab::<TieRule>)]
    ties: TieRule,
}

#[derive(Args, Debug)]
struct Test1Args {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    quantile: QuantileArgs,
    /// Tail share of each covariate left out of the box grid.
    #[arg(long, default_value_t = 0.0)]
    trim: f64,
}

#[derive(Args, Debug)]
struct Test2Args {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    quantile: QuantileArgs,
    /// Window centre; selected automatically unless given with --h-p.
    #[arg(long, requires = "h_p")]
    delta: Option<f64>,
    /// Window half-width.
    #[arg(long, requires = "delta")]
    h_p: Option<f64>,
    /// Slack exponent in the automatic window rule.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// Density threshold in the automatic window rule.
    #[arg(long, default_value_t = 0.1)]
    eta_threshold: f64,
}

#[derive(Args, Debug)]
struct MeanArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    common: CommonArgs,
    /// Rule-of-thumb constant c in h_x = c sd(x) n^(-1/3).
    #[arg(long, default_value_t = 0.25)]
    hx_c: f64,
    /// Fixed h_x, one per x column.
    #[arg(long, value_delimiter = ',')]
    hx: Vec<f64>,
    /// Whether h_x is the kernel's standard deviation or its support half-width.
    #[arg(long, default_value = "std-dev", value_parser = kebab::<BandwidthScale>)]
    hx_scale: BandwidthScale,
    /// Bootstrap multiplier law: rademacher or mammen.
    #[arg(long, default_value = "rademacher", value_parser = kebab::<Multiplier>)]
    multiplier: Multiplier,
    /// Tail share of each covariate left out of the box grid.
    #[arg(long, default_value_t = 0.0)]
    trim: f64,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// test1, test2 or meantest.
    #[arg(long, default_value = "test1")]
    test: String,
    /// Instrument design: normal, binomial, poisson or discrete-uniform.
    #[arg(long, default_value = "normal", value_parser = kebab::<Design>)]
    design: Design,
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    #[arg(long, default_value_t = 0.0)]
    gamma1: f64,
    /// Scale of the selection error.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Variance of the normal instrument.
    #[arg(long, default_value_t = 1.0)]
    instrument_variance: f64,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Warp-speed replications.
    #[arg(long, default_value_t = 200)]
    reps: usize,
    /// Rule-of-thumb constant for h_x (4 for quantile tests, 0.25 for the mean test).
    #[arg(long)]
    c: Option<f64>,
    /// Cross-validate h_x (quantile tests only).
    #[arg(long)]
    hx_cv: bool,
    /// Second-test window centre.
    #[arg(long, requires = "h_p")]
    delta: Option<f64>,
    /// Second-test window half-width.
    #[arg(long, requires = "delta")]
    h_p: Option<f64>,
    /// Estimate the propensity score instead of using the true one.
    #[arg(long)]
    estimated_propensity: bool,
    #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1])]
    alpha: Vec<f64>,
    #[arg(long, required = true)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value = "json", value_parser = parse_format)]
    format: OutputFormat,
}

#[derive(Args, Debug)]
struct ReplicateArgs {
    /// Table block such as T1-caseI, T2-caseIV* or S1-caseII.
    #[arg(long, value_parser = parse_table)]
    table: TableId,
    /// Share of the full 999 replications.
    #[arg(long, default_value_t = 0.1)]
    scale: f64,
    /// Replace both sample sizes, e.g. 500,1000.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// Restrict to these column indices.
    #[arg(long, value_delimiter = ',')]
    columns: Vec<usize>,
    #[arg(long, required = true)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value = "text", value_parser = parse_format)]
    format: OutputFormat,
}

fn kebab<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase())).map_err(|_| format!("unrecognised value {s:?}"))
}

fn parse_format(s: &str) -> std::result::Result<OutputFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_table(s: &str) -> std::result::Result<TableId, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Clone)]
struct TauGrid(Vec<f64>);

fn parse_taus(s: &str) -> std::result::Result<TauGrid, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("bad number {t:?} in tau grid"));
    let taus = if let [a, b, c] = s.split(':').collect::<Vec<_>>()[..] {
        let (start, stop, step) = (num(a)?, num(b)?, num(c)?);
        if step.is_nan() || step <= 0.0 || stop < start {
            return Err("tau range needs start <= stop and a positive step".into());
        }
        let k = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=k).map(|i| ((start + i as f64 * step) * 1e10).round() / 1e10).collect()
    } else {
        s.split(',').map(num).collect::<std::result::Result<Vec<_>, _>>()?
    };
    if taus.is_empty() || taus.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err("quantile levels must lie in (0, 1)".into());
    }
    Ok(TauGrid(taus))
}

impl DataArgs {
    fn load(&self) -> Result<(Loaded, PropensitySpec)> {
        let roles = ColumnRoles {
            outcome: self.outcome.clone(),
            selection: self.selection.clone(),
            x: self.x.clone(),
            zc: self.zc.clone(),
            zd: self.zd.clone(),
            oracle_p: self.oracle_p.clone(),
        };
        let loaded = load_csv(&self.input, &roles)?;
        let spec = if let Some(p) = &loaded.oracle_p {
            PropensitySpec::Given(p.clone())
        } else if !self.h_z.is_empty() || !self.lambda.is_empty() {
            let lambda = if self.lambda.is_empty() {
                vec![0.0; loaded.data.dzd]
            } else {
                self.lambda.clone()
            };
            PropensitySpec::Fixed {
                h_z: self.h_z.clone(),
                lambda,
            }
        } else {
            PropensitySpec::CrossValidated {
                subset_size: self.cv_subset,
                reps: self.cv_reps,
            }
        };
        Ok((loaded, spec))
    }
}

impl QuantileArgs {
    fn hx(&self) -> HxChoice {
        if self.hx_cv {
            HxChoice::CrossValidated(CvOptions::default())
        } else if !self.hx.is_empty() {
            HxChoice::Fixed(self.hx.clone())
        } else {
            HxChoice::RuleOfThumb { c: self.hx_c.unwrap_or(4.0) }
        }
    }
}

fn run_test1_cmd(a: &Test1Args) -> Result<()> {
    let (loaded, spec) = a.data.load()?;
    let cfg = Test1Config {
        taus: a.quantile.tau.0.clone(),
        order: a.quantile.order,
        kernel: a.common.kernel,
        hx: a.quantile.hx(),
        ties: a.quantile.ties,
        grid: GridOptions {
            trim: a.trim,
            ..GridOptions::default()
        },
        replications: a.common.replications,
        alphas: a.common.alpha.clone(),
        ..Test1Config::default()
    };
    let report = run_test1(&loaded.data, &spec, &cfg, RngStream::new(a.common.seed, 0))?;
    emit_report(&report, a.common.format, a.common.output.as_deref())
}

fn run_test2_cmd(a: &Test2Args) -> Result<()> {
    let (loaded, spec) = a.data.load()?;
    let cfg = Test2Config {
        taus: a.quantile.tau.0.clone(),
        order: a.quantile.order,
        kernel: a.common.kernel,
        hx: a.quantile.hx(),
        delta: a.delta,
        h_p: a.h_p,
        eta: EtaOptions {
            epsilon: a.epsilon,
            threshold: a.eta_threshold,
            ..EtaOptions::default()
        },
        ties: a.quantile.ties,
        replications: a.common.replications,
        alphas: a.common.alpha.clone(),
    };
    let report = run_test2(&loaded.data, &spec, &cfg, RngStream::new(a.common.seed, 0))?;
    emit_report(&report, a.common.format, a.common.output.as_deref())
}

fn run_meantest_cmd(a: &MeanArgs) -> Result<()> {
    let (loaded, spec) = a.data.load()?;
    let cfg = MeanTestConfig {
        kernel: a.common.kernel,
        hx: if a.hx.is_empty() {
            HxChoice::RuleOfThumb { c: a.hx_c }
        } else {
            HxChoice::Fixed(a.hx.clone())
        },
        hx_scale: a.hx_scale,
        grid: GridOptions {
            trim: a.trim,
            ..GridOptions::default()
        },
        replications: a.common.replications,
        alphas: a.common.alpha.clone(),
        multiplier: a.multiplier,
    };
    let report = run_meantest(&loaded.data, &spec, &cfg, RngStream::new(a.common.seed, 0))?;
    emit_report(&report, a.common.format, a.common.output.as_deref())
}

fn simulate_cmd(a: &SimulateArgs) -> Result<()> {
    let quantile_hx = |default: f64| {
        if a.hx_cv {
            qselect::montecarlo::tables::cv()
        } else {
            HxChoice::RuleOfThumb { c: a.c.unwrap_or(default) }
        }
    };
    let window = a.delta.zip(a.h_p);
    let (test, outcome) = match a.test.as_str() {
        "test1" => (sim_test1(quantile_hx(4.0)), OutcomeKind::CubicQuantile),
        "test2" => (sim_test2(quantile_hx(3.5), window), OutcomeKind::CubicQuantile),
        "meantest" => {
            if a.hx_cv {
                return Err(Error::config(Stage::Config, "the mean test takes a rule-of-thumb h_x"));
            }
            (sim_meantest(a.c.unwrap_or(0.25)), OutcomeKind::QuadraticMean)
        }
        other => {
            return Err(Error::config(
                Stage::Config,
                format!("unknown test {other:?}; expected test1, test2 or meantest"),
            ))
        }
    };
    let test = match test {
        McTest::Test1(mut c) => {
            c.alphas = a.alpha.clone();
            McTest::Test1(c)
        }
        McTest::Test2(mut c) => {
            c.alphas = a.alpha.clone();
            McTest::Test2(c)
        }
        McTest::Meantest(mut c) => {
            c.alphas = a.alpha.clone();
            McTest::Meantest(c)
        }
    };
    let dgp = DgpConfig {
        design: a.design,
        rho: a.rho,
        gamma1: a.gamma1,
        sigma: a.sigma,
        n: a.n,
        outcome,
        instrument_variance: a.instrument_variance,
    };
    let propensity = if a.estimated_propensity {
        SIM_PROPENSITY
    } else {
        PropensitySource::Oracle
    };
    let result: McResult = run_warp_speed(&dgp, &test, &propensity, a.reps, &a.alpha, RngStream::new(a.seed, 0))?;
    let body = render::simulation(&result, &dgp, &test, &propensity, a.seed, a.format)?;
    write_output(&body, a.output.as_deref())
}

fn replicate_cmd(a: &ReplicateArgs) -> Result<()> {
    if !(a.n.is_empty() || a.n.len() == 2) {
        return Err(Error::config(Stage::Config, "--n takes exactly two sample sizes"));
    }
    let opts = ReplicateOptions {
        scale: a.scale,
        ns: (a.n.len() == 2).then(|| [a.n[0], a.n[1]]),
        columns: (!a.columns.is_empty()).then(|| a.columns.clone()),
    };
    let table = replicate_table(a.table, &opts, RngStream::new(a.seed, 0))?;
    let body = match a.format {
        OutputFormat::Text => table.to_text(),
        OutputFormat::Csv => table.to_csv(),
        OutputFormat::Json => {
            let mut s = serde_json::to_string_pretty(&table)?;
            s.push('\n');
            s
        }
    };
    write_output(&body, a.output.as_deref())
}

fn run(cli: &Cli) -> Result<()> {
    with_threads(cli.threads, || match &cli.command {
        Command::Test1(a) => run_test1_cmd(a),
        Command::Test2(a) => run_test2_cmd(a),
        Command::Meantest(a) => run_meantest_cmd(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Replicate(a) => replicate_cmd(a),
    })
}

/// 0 success, 1 data or configuration error, 2 statistically infeasible.
fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qselect: {e}");
            ExitCode::from(if e.is_infeasible() { 2 } else { 1 })
        }
    }
}
