use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("state of charge {0} is outside [0, 1]")]
    SocDomain(f64),

    #[error("time step must be positive, got {0} s")]
    NonPositiveStep(f64),

    #[error("invalid cell parameters: {0}")]
    InvalidParams(String),

    #[error("invalid OCV curve: {0}")]
    InvalidCurve(String),

    #[error("OCV fit failed: {0}")]
    Fit(String),

    #[error("energy frame corrupted: e + e0 = {0} J is not positive")]
    EnergyCorruption(f64),

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("cannot bypass cell {0}: it is the last cell in service")]
    LastCellInService(usize),

    #[error("reconfiguration infeasible: {0}")]
    Reconfiguration(String),

    #[error("optimizer: {0}")]
    Optimizer(String),

    #[error("horizon solve did not reach optimality ({status}): {detail}")]
    NotOptimal { status: String, detail: String },

    #[error("hardwired baseline cannot deliver {p_out} W (discriminant {discriminant})")]
    BaselineUnreachable { p_out: f64, discriminant: f64 },

    #[error("simulation aborted at step {step}: {source}")]
    SimAborted {
        step: usize,
        #[source]
        source: Box<Error>,
        /// Text dump of the horizon problem that failed, if any.
        problem: Option<Box<String>>,
    },

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("profile: {0}")]
    Profile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
