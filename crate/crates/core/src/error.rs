use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("ill-conditioned charge system (condition estimate {condition:.3e}); closest pair is particles {pair:?}")]
    IllConditioned { condition: f64, pair: Option<(usize, usize)> },

    #[error("singularity: {0}")]
    Singular(String),

    #[error("iterative solve diverged after {iterations} iterations (relative residual {residual:.3e}, spectral radius estimate {spectral_radius:.3})")]
    Divergence { iterations: usize, residual: f64, spectral_radius: f64 },

    #[error("quadrature degree {available} too low, need at least {required}")]
    InsufficientQuadrature { required: usize, available: usize },

    #[error("continuation did not converge: {0}; increase ell_max or decrease |theta|")]
    Continuation(String),

    #[error("packing infeasible: placed {placed} of {requested} particles (hard-core distance {min_distance:.3e}, max feasible about {max_feasible})")]
    Packing { placed: usize, requested: usize, min_distance: f64, max_feasible: usize },

    #[error("small-particle regime violated: {0}")]
    Regime(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
