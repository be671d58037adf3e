use crate::geometry::ApId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("all samples in the window are identical; cannot fit {kappa} clusters")]
    DegenerateWindow { kappa: usize },

    #[error("no mixture component has a positive mean")]
    NoPositivePath,

    #[error("access point geometry is singular")]
    SingularGeometry,

    #[error("solver did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("unknown access point {0}")]
    UnknownAp(ApId),

    #[error("no single-path windows left in the series")]
    EmptySeries,

    #[error("series has no power after DC removal")]
    ZeroPower,

    #[error("no rotation estimate available: {0}")]
    NoEstimate(String),

    #[error("link establishment failed: all {probes} probes were below the noise floor")]
    EstablishFailed { probes: usize },

    #[error("link maintenance failed: all {probes} probes were below the noise floor")]
    MaintainFailed { probes: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
