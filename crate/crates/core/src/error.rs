use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric parameter is outside its admissible domain.
    #[error("invalid parameter `{name}` = {value}: must satisfy {constraint}")]
    Domain {
        name: &'static str,
        value: f64,
        constraint: String,
    },

    /// Grid, horizon, ensemble or scenario settings that cannot be honoured.
    #[error("configuration error: {0}")]
    Config(String),

    /// Volatility matrix with (numerically) dependent columns.
    #[error(
        "degenerate coefficients{}: smallest singular value {min_sv:e} is below 1e-10 x largest {max_sv:e}",
        .step.map(|s| format!(" at time index {s}")).unwrap_or_default()
    )]
    CoefficientDegeneracy {
        step: Option<usize>,
        min_sv: f64,
        max_sv: f64,
    },

    #[error("non-finite {term} coefficient at node {node} (z = {z})")]
    NonFiniteCoefficient {
        term: &'static str,
        node: usize,
        z: f64,
    },

    #[error("explicit step of size {dt:e} violates the stability bound; required dt <= {required:e}")]
    Stability { dt: f64, required: f64 },

    #[error("right tail of R is not integrable: boundary log-slope {slope} must be < -1")]
    Integrability { slope: f64 },

    #[error("vanishing concavity at node {node} (x = {x}): d2U/dx2 = {value:e}")]
    Singularity { node: usize, x: f64, value: f64 },

    #[error("normalization requires a positive mean, got {0}")]
    Normalization(f64),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn ensure_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            name,
            value,
            constraint: "value > 0".into(),
        })
    }
}

pub(crate) fn ensure_finite(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            name,
            value,
            constraint: "finite value".into(),
        })
    }
}

/// Risk exponent of the power utility: gamma in (-inf, 0) U (0, 1).
pub(crate) fn ensure_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma != 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            name: "gamma",
            value: gamma,
            constraint: "gamma in (-inf,0)U(0,1)".into(),
        })
    }
}

pub(crate) fn ensure_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            name: "epsilon",
            value: epsilon,
            constraint: "epsilon in (0,1)".into(),
        })
    }
}
