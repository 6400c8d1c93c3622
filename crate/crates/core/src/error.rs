use thiserror::Error;

/// Which side of a distribution a tail statistic was requested for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TailSide {
    Upper,
    Lower,
}

impl std::fmt::Display for TailSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TailSide::Upper => f.write_str("upper"),
            TailSide::Lower => f.write_str("lower"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("jump log-size {z} wipes out a position of weight {weight} (1 + x(e^z - 1) <= 0)")]
    Ruin { z: f64, weight: f64 },

    #[error("transformed jump moment 1 + x*h = {value} is not positive (x = {weight}, h = {h})")]
    NonPositiveMoment { weight: f64, h: f64, value: f64 },

    #[error("sample is empty")]
    EmptySample,

    #[error("sample contains NaN at index {0}")]
    NanInSample(usize),

    #[error("probability level {0} is outside (0, 1)")]
    InvalidProbability(f64),

    #[error("{side} tail beyond VaR at level {p} is empty")]
    EmptyTail { side: TailSide, p: f64 },

    #[error("all conditioning weights are zero")]
    ZeroWeights,

    #[error("nothing is invested over the remaining horizon")]
    NothingInvested,

    #[error("risk level p = {0} must be below 0.5")]
    RiskLevelTooHigh(f64),

    #[error(
        "risk floor K = {floor} is unattainable on the optimal ray (discriminant {discriminant} < 0)"
    )]
    RiskFloorInfeasible { floor: f64, discriminant: f64 },

    #[error("no admissible scale: candidate q = {q} lies outside the feasible interval [{lower}, {upper}]")]
    NoFeasibleScale { q: f64, lower: f64, upper: f64 },

    #[error("no feasible point on the search grid")]
    NoFeasibleGridPoint,

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("price data: {0}")]
    PriceData(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    /// Stable machine-readable identifier for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::NotPositiveDefinite => "not_positive_definite",
            Error::Ruin { .. } => "ruin",
            Error::NonPositiveMoment { .. } => "non_positive_moment",
            Error::EmptySample => "empty_sample",
            Error::NanInSample(_) => "nan_in_sample",
            Error::InvalidProbability(_) => "invalid_probability",
            Error::EmptyTail { .. } => "empty_tail",
            Error::ZeroWeights => "zero_weights",
            Error::NothingInvested => "nothing_invested",
            Error::RiskLevelTooHigh(_) => "risk_level_too_high",
            Error::RiskFloorInfeasible { .. } => "risk_floor_infeasible",
            Error::NoFeasibleScale { .. } => "no_feasible_scale",
            Error::NoFeasibleGridPoint => "no_feasible_grid_point",
            Error::Calibration(_) => "calibration",
            Error::PriceData(_) => "price_data",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
