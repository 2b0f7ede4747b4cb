use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point lives in {found} but the map acts on {expected}")]
    DomainMismatch { expected: String, found: String },

    #[error("point {coords:?} lies outside the box domain")]
    OutsideDomain { coords: Vec<f64> },

    #[error("map `{0}` has no inverse rule")]
    NoInverse(String),

    #[error("finite-difference step underflows at scale {0:e}")]
    StepUnderflow(f64),

    #[error("cocycle overflow after {steps} steps (log scale {log_scale})")]
    CocycleOverflow { steps: usize, log_scale: f64 },

    #[error("degenerate QR step at iterate {0}: near-singular Jacobian")]
    DegenerateQr(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("measures live on different phase spaces")]
    SpaceMismatch,

    #[error("all depths undersampled; deepest trustworthy depth is {max_trusted_depth}")]
    Undersampled { max_trusted_depth: usize },

    #[error("signature precondition violated: {0}")]
    Signature(String),

    #[error("partition diameter {diameter} is not below epsilon {epsilon:e}")]
    PartitionTooCoarse { diameter: f64, epsilon: f64 },

    #[error("curve scale {epsilon} exceeds admissible epsilon {epsilon_omega:e}")]
    EpsilonTooLarge { epsilon: f64, epsilon_omega: f64 },

    #[error("inconsistent exponent classes: chi_plus {chi_plus} < chi {chi}")]
    InconsistentChi { chi_plus: i64, chi: i64 },

    #[error("root isolation did not converge on {0}")]
    RootIsolation(String),

    #[error("curve is not strongly {0}-bounded")]
    NotStronglyBounded(f64),

    #[error("too many base pieces ({0}); lower the exponent gap or raise r")]
    TooManyPieces(u128),

    #[error("estimator failure: {0}")]
    Estimator(String),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
