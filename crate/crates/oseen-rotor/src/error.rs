use thiserror::Error;

/// Errors shared by every module of the crate.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of the operation
    /// (nonpositive time, negative Kummer argument, zero vector where a
    /// direction is required, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Evaluation requested exactly at a singular point of the kernel,
    /// e.g. `𝔷(y,z)` with `y = z`.
    #[error("singular point: {0}")]
    Singular(String),

    /// A derivative order outside the combinations the library implements
    /// (orders beyond one in `y` or one in `z`).
    #[error("unsupported derivative order: {0}")]
    UnsupportedOrder(String),

    /// Adaptive quadrature stopped before reaching the requested tolerance.
    /// The best available estimate and its error bound are carried along so
    /// callers can still use (and report) the partial result.
    #[error("accuracy target not met: {context} (worst error {worst_error:.3e})")]
    Accuracy {
        context: String,
        /// Best estimate at the moment the subdivision budget ran out.
        estimate: Vec<f64>,
        /// Componentwise error bounds for `estimate`.
        error: Vec<f64>,
        /// Largest componentwise error bound.
        worst_error: f64,
    },

    /// The weighted convolution diverges for the requested exponents.
    #[error("divergent integral: {0}")]
    DivergentIntegral(String),

    /// Malformed or inconsistent input data (mesh/data size mismatch,
    /// nonpositive fit values, unreadable files, violated certificates).
    #[error("invalid data: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
