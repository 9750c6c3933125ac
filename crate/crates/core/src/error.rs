use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid holdings matrix: {0}")]
    InvalidHoldings(String),

    #[error("invalid strength sequences: {0}")]
    InvalidStrength(String),

    #[error("invalid degree sequences: {0}")]
    InvalidDegrees(String),

    #[error("invalid balance sheet: {0}")]
    InvalidSheet(String),

    #[error("invalid market parameters: {0}")]
    InvalidMarket(String),

    #[error("banks with zero total holdings: {banks:?}")]
    ZeroRow { banks: Vec<String> },

    #[error("balance sheet size {sheet_size} of bank {bank} does not match holdings row sum {row_sum}")]
    InconsistentSheet { bank: String, sheet_size: f64, row_sum: f64 },

    #[error(
        "support mask is infeasible for the requested marginals (residual {residual:e} after {iterations} iterations)"
    )]
    InfeasibleSupport { iterations: usize, residual: f64 },

    #[error("maximum number of iterations ({iterations}) exceeded, last residual {residual:e}")]
    MaxIterExceeded { iterations: usize, residual: f64 },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { solver: &'static str, iterations: usize, residual: f64, trace: Vec<f64> },

    #[error("infeasible degree sequences: {0}")]
    InfeasibleDegrees(String),

    #[error("closed-form expectations require a uniform shock across assets")]
    NonUniformShock,

    #[error("closed-form expectations require a single common illiquidity for non-cash assets")]
    NonUniformLiquidity,

    #[error("entry ({bank}, {asset}) is out of range for a {n_banks}x{n_assets} ensemble")]
    Index { bank: usize, asset: usize, n_banks: usize, n_assets: usize },

    #[error("quantile band needs at least {needed} samples, batch has {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("missing quarter: {0}")]
    MissingQuarter(String),

    #[error("quartile report needs at least 4 banks, got {got}")]
    TooFewBanks { got: usize },

    #[error("infeasible sparsity: {0}")]
    InfeasibleSparsity(String),

    #[error("unknown {family} '{name}', available: {available}")]
    UnknownStrategy { family: &'static str, name: String, available: String },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: u64, column: usize, message: String },

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable code, emitted by the CLI on failure.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidHoldings(_) => "invalid_holdings",
            Error::InvalidStrength(_) => "invalid_strength",
            Error::InvalidDegrees(_) => "invalid_degrees",
            Error::InvalidSheet(_) => "invalid_sheet",
            Error::InvalidMarket(_) => "invalid_market",
            Error::ZeroRow { .. } => "zero_row",
            Error::InconsistentSheet { .. } => "inconsistent_sheet",
            Error::InfeasibleSupport { .. } => "infeasible_support",
            Error::MaxIterExceeded { .. } => "max_iter_exceeded",
            Error::Convergence { .. } => "convergence",
            Error::InfeasibleDegrees(_) => "infeasible_degrees",
            Error::NonUniformShock => "non_uniform_shock",
            Error::NonUniformLiquidity => "non_uniform_liquidity",
            Error::Index { .. } => "index",
            Error::InsufficientSamples { .. } => "insufficient_samples",
            Error::MissingQuarter(_) => "missing_quarter",
            Error::TooFewBanks { .. } => "too_few_banks",
            Error::InfeasibleSparsity(_) => "infeasible_sparsity",
            Error::UnknownStrategy { .. } => "unknown_strategy",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
