use thiserror::Error;

/// Pipeline stage an error originated in. Carried by every error so the CLI
/// can print stage-tagged messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Input,
    Propensity,
    Bandwidth,
    Quantile,
    ConditionalCdf,
    Grid,
    Statistic,
    Bootstrap,
    Simulation,
    Output,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Input => "input",
            Stage::Propensity => "propensity",
            Stage::Bandwidth => "bandwidth",
            Stage::Quantile => "quantile",
            Stage::ConditionalCdf => "conditional-cdf",
            Stage::Grid => "grid",
            Stage::Statistic => "statistic",
            Stage::Bootstrap => "bootstrap",
            Stage::Simulation => "simulation",
            Stage::Output => "output",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("[{stage}] configuration error: {msg}")]
    Config { stage: Stage, msg: String },

    #[error("[input] {msg}")]
    Data { msg: String },

    #[error("[{stage}] empty selected sample")]
    EmptySample { stage: Stage },

    #[error("[{stage}] thin set: only {count} observation(s) carry positive weight ({hint})")]
    ThinSet {
        stage: Stage,
        count: usize,
        hint: String,
    },

    #[error("[quantile] insufficient local data at evaluation point {point:?}: {available} weighted observation(s), {needed} needed")]
    InsufficientLocalData {
        point: Vec<f64>,
        available: usize,
        needed: usize,
    },

    #[error("[bandwidth] cross-validation minimum stuck at the lower grid edge ({h}) after widening")]
    CvBoundary { h: f64 },

    #[error("[{stage}] {msg}")]
    Numerical { stage: Stage, msg: String },

    #[error("[simulation] {failed} of {reps} replications failed (limit 2%)")]
    TooManyFailures { failed: usize, reps: usize },

    #[error("[output] {0}")]
    Io(#[from] std::io::Error),

    #[error("[output] {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(stage: Stage, msg: impl Into<String>) -> Self {
        Error::Config {
            stage,
            msg: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data { msg: msg.into() }
    }

    /// True for failures that reflect the data being statistically unusable
    /// (as opposed to malformed input or bad configuration).
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            Error::EmptySample { .. }
                | Error::ThinSet { .. }
                | Error::InsufficientLocalData { .. }
                | Error::CvBoundary { .. }
                | Error::TooManyFailures { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
