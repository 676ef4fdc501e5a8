use thiserror::Error;

/// Errors shared by every module of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("truncation level must be positive, got {0}")]
    InvalidLevel(f64),

    #[error("scale parameter must be positive, got {0}")]
    InvalidScale(f64),

    #[error("mollifier rate must exceed 2, got {0}")]
    InvalidRate(f64),

    #[error("degenerate time window: smoothing radius {r} must satisfy r < tau/2 = {half_tau}")]
    DegenerateWindow { r: f64, half_tau: f64 },

    #[error(
        "conjugate maximizer hit the source grid boundary at eta = {eta:?}; \
         widen the xi grid by a factor of at least {suggested_factor}"
    )]
    BoundaryMaximizer { eta: Vec<f64>, suggested_factor: f64 },

    #[error("Luxemburg norm bracket failed: modular not finite (or above 1) for any scale up to {tried}")]
    UnboundedNorm { tried: f64 },

    #[error("modular evaluated to a non-finite value at t={t}, |x|={x:?}, xi={xi:?}")]
    NonFiniteModular { t: f64, x: Vec<f64>, xi: Vec<f64> },

    #[error("cell does not intersect the space-time domain")]
    EmptyCellIntersection,

    #[error("convex envelope vanishes at |xi| = {radius}; evaluate above the family threshold {threshold}")]
    EnvelopeZero { radius: f64, threshold: f64 },

    #[error("family {0} is not covered by any closed-form admissibility criterion")]
    UnsupportedFamily(String),

    #[error("fields live on different meshes: {0}")]
    MeshMismatch(String),

    #[error("field asserts a zero Dirichlet trace but boundary values are nonzero (max |v| = {0})")]
    NonZeroTrace(f64),

    #[error("data pair is not ordered: {0}")]
    OrderingViolated(String),

    #[error("nonlinear step {step} did not converge after {iterations} iterations; last residual {residual}")]
    StepFailure { step: usize, iterations: usize, residual: f64 },

    #[error("flux violates a structural assumption: {0}")]
    AssumptionViolation(String),

    #[error("test function is invalid: {0}")]
    InvalidTestFunction(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown suite {0}")]
    UnknownSuite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
