use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("metric is not positive definite at {at}")]
    NotSpd { at: String },
    #[error("geodesic integration failed: {0}")]
    IntegrationFailure(String),
    #[error("trajectory left the coordinate domain at {at}")]
    DomainEscape { at: String },
    #[error("tangent vector of length {len} exceeds chart radius {limit}")]
    OutsideChartBall { len: f64, limit: f64 },
    #[error("point lies outside the injectivity ball (distance estimate {estimate}, radius {radius})")]
    OutsideInjectivity { estimate: f64, radius: f64 },
    #[error("shooting did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("no graph path between the points")]
    Disconnected,
    #[error("ambient lattice spacing {spacing} is coarser than epsilon/4 = {limit}")]
    RegionTooFine { spacing: f64, limit: f64 },
    #[error("point {0} is not in the discretization")]
    NotInDiscretization(String),
    #[error("trailing ordering needs {needed} points but only {found} lie inside the injectivity radius")]
    TrailingTooShort { needed: usize, found: usize },
    #[error("grid lattices do not match")]
    LatticeMismatch,
    #[error("exponent p = {p} is outside the admissible range")]
    UnsupportedExponent { p: f64 },
    #[error("no transition pair converged")]
    NoConvergedPairs,
    #[error("profile does not match the atlas: {0}")]
    IncompatibleProfile(String),
    #[error("local profiles are incompatible on overlaps (residual {residual:e} >= {tolerance:e})")]
    IncompatibleProfiles { residual: f64, tolerance: f64 },
    #[error("partition of unity has zero total weight at {at}")]
    CoveringGap { at: String },
    #[error("limit metric is not Cauchy along the schedule (increment {increment:e})")]
    NotCauchy { increment: f64 },
    #[error("{0}")]
    ConstraintViolation(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub(crate) fn fmt_point(x: &[f64]) -> String {
    let parts: Vec<String> = x.iter().map(|v| format!("{v:.6}")).collect();
    format!("({})", parts.join(", "))
}
