use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate basis: no singular value above {threshold:e} relative to the largest")]
    DegenerateBasis { threshold: f64 },

    #[error("ill-conditioned basis: smallest retained singular value {sigma:e}")]
    Conditioning { sigma: f64 },

    #[error("Gram matrix is not positive definite (min eigenvalue {min_eig:e})")]
    NonSpdGram { min_eig: f64 },

    #[error("initial fit residual {residual:e} exceeds cap {cap:e}")]
    RepresentationFailure { residual: f64, cap: f64 },

    #[error("cannot normalize a state with discrete mass {mass:e}")]
    ZeroState { mass: f64 },

    #[error("non-finite value in right-hand side at t = {t}")]
    Instability { t: f64 },

    #[error("step size {dt:e} underflowed at t = {t}")]
    Stiffness { t: f64, dt: f64 },

    #[error("inner iteration did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("a-priori bound violated at t = {t}: |c| = {norm} > {bound}")]
    BoundViolation { t: f64, norm: f64, bound: f64 },

    #[error("Picard iteration diverged at iteration {iteration} (residual {residual:e}); try damping")]
    PicardDivergence { iteration: usize, residual: f64 },

    #[error("field leaks through the truncated boundary: |psi| = {edge:e} at the edge, enlarge the domain")]
    TruncationLeak { edge: f64 },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    /// Tag an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Process exit code: 2 config, 3 numerical failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::InvalidArgument(_) | Error::Config(_) => 2,
            Error::Io(_) | Error::Serialization(_) => 4,
            _ => 3,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
