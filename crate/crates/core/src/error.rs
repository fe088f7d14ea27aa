use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An orbit left the domain box of the germ at the given index.
    #[error("orbit left the domain of the germ at index {at}")]
    DomainExit { at: i64 },

    /// An iterated subspace escaped its cone at the given index.
    #[error("iterated subspace left the cone at index {at} (angle {angle:.3e} vs opening {opening:.3e})")]
    ConeEscape { at: i64, angle: f64, opening: f64 },

    /// A cone family is not carried into itself by the derivative at a step.
    #[error("cone invariance fails at step {step}")]
    ConeInvarianceFail { step: i64 },

    /// The nonlinearity bound of the rate calculus fails: parameters are not
    /// small enough for the derived rates to make sense at this index.
    #[error("rate overflow at index {at}: eps_f = {eps_f:.3e} vs limit {limit:.3e}")]
    RateOverflow { at: i64, eps_f: f64, limit: f64 },

    /// Parameter seeds violate a required seed inequality or a derived check.
    #[error("seed too large: {0}")]
    SeedTooLarge(String),

    /// The damped Newton solve for an implicit graph node stalled.
    #[error("newton solve stalled at node {node} (residual {residual:.3e})")]
    NewtonFail { node: usize, residual: f64 },

    /// A transformed manifold violated its target class (strict mode only).
    #[error("transformed manifold escaped its class at index {at}: {detail}")]
    ClassEscape { at: i64, detail: String },

    /// The backward fixed-point iteration failed to certify convergence.
    #[error("no convergence within window cap {k_max} (last gap {gap:.3e})")]
    NoConvergence { k_max: usize, gap: f64 },

    /// The fixed-manifold iteration of the closing procedure did not contract
    /// at the predicted rate.
    #[error("fixed-manifold iteration failed to contract: {0}")]
    ContractionFail(String),

    /// Newton on the pair of fixed graphs diverged.
    #[error("intersection of stable/unstable graphs diverged")]
    IntersectionFail,

    /// Supplied orbit points are not an orbit of the supplied map.
    #[error("orbit mismatch at step {step}: |f(x_n) - x_(n+1)| = {gap:.3e}")]
    OrbitMismatch { step: usize, gap: f64 },

    #[error("unknown builtin system `{0}`")]
    UnknownBuiltin(String),

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("point outside manifold domain: |v| = {norm:.3e} > r = {r:.3e}")]
    OutOfDomain { norm: f64, r: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
