use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid boundary tagging: {0}")]
    Tagging(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("saddle-point system is singular ({0}); check the inf-sup stability of the mesh")]
    SingularSaddlePoint(String),

    #[error("sparse factorization failed: {0}")]
    Factorization(String),

    #[error("eigen-iteration did not converge: {0}")]
    EigenNonConvergence(String),

    #[error("requested {requested} modes but the constrained space only has dimension {available}")]
    TooManyModes { requested: usize, available: usize },

    #[error("linearized solve broke down at time step {step}: {reason}")]
    LinearBreakdown { step: usize, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("the pencil matrix is only defined for lambda != 0")]
    ZeroLambda,

    #[error("contour passes too close to a root (min |f| = {min_modulus:.3e} at {location})")]
    ContourNearRoot { min_modulus: f64, location: String },

    #[error("argument-principle integral {value} is not close to an integer")]
    NonIntegerWinding { value: f64 },

    #[error("complex Newton did not converge from {guess} after {iterations} iterations")]
    RootDivergence { guess: String, iterations: usize },

    #[error("singular-expansion fit is rank deficient ({samples} samples for {unknowns} unknowns)")]
    RankDeficientFit { samples: usize, unknowns: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
