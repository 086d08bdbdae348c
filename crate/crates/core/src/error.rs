use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unsupported family/link combination: {family} with {link} link")]
    UnsupportedFamilyLink { family: String, link: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("mismatched observation metadata: {0}")]
    MetadataMismatch(String),

    #[error("covariance of units {units:?} is numerically singular")]
    SingularCovariance { units: Vec<usize> },

    #[error("rank-1 {op} failed: pivot {pivot:e} is numerically zero")]
    SingularUpdate { op: &'static str, pivot: f64 },

    #[error("c is not estimable under the full design space: {0}")]
    NotEstimable(String),

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("design is degenerate: {0}")]
    Degenerate(String),

    #[error("combinatorial budget exceeded: {count} designs to enumerate (limit {limit}); shrink the instance")]
    BudgetExceeded { count: u128, limit: u128 },

    #[error("oracle limit exceeded: {0}")]
    OracleLimit(String),
}

impl Error {
    /// True for errors caused by numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NotPsd { .. } | Error::SingularCovariance { .. } | Error::SingularUpdate { .. })
    }
}
