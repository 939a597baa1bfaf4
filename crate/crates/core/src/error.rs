use thiserror::Error;

/// Errors raised by the accounting, oracle and simulation layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("enumeration of {centers}^{order} = {tuples:.3e} tuples exceeds the limit of {limit:.0e}")]
    CostLimit {
        centers: usize,
        order: u32,
        tuples: f64,
        limit: f64,
    },

    #[error("divergence undefined at order {order}: {reason}")]
    DivergenceUndefined { order: u32, reason: String },

    #[error("dimension {dim} exceeds the quadrature grid limit {limit}; use the Monte-Carlo estimator instead")]
    DimensionTooLarge { dim: usize, limit: usize },

    #[error(
        "target epsilon {target} unachievable in sigma bracket [{sigma_lo}, {sigma_hi}] \
         (epsilon at endpoints: {eps_at_lo}, {eps_at_hi})"
    )]
    Unachievable {
        target: f64,
        sigma_lo: f64,
        sigma_hi: f64,
        eps_at_lo: f64,
        eps_at_hi: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported combination: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
