//! Error type of the command line and its mapping to exit codes.

use std::fmt;

use copt_core::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug)]
pub enum CliError {
    /// Bad config, weights or design input.
    Config(String),
    /// Error raised by the library.
    Core(Error),
    /// Output could not be written.
    Io(String),
    /// A verification check did not hold.
    Check(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// 0 success, 1 output or check failure, 2 config error, 3 infeasible
    /// problem, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if e.is_numerical() => 4,
            CliError::Core(
                Error::Infeasible(_)
                | Error::NotEstimable(_)
                | Error::Degenerate(_)
                | Error::BudgetExceeded { .. }
                | Error::OracleLimit(_),
            ) => 3,
            CliError::Core(_) => 2,
            CliError::Io(_) | CliError::Check(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Core(e) if e.is_numerical() => write!(f, "numerical failure: {e}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(msg) => write!(f, "output error: {msg}"),
            CliError::Check(msg) => write!(f, "verification failed: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes() {
        assert_eq!(CliError::config("x").exit_code(), 2);
        assert_eq!(CliError::from(Error::Infeasible("m".into())).exit_code(), 3);
        assert_eq!(CliError::from(Error::NotEstimable("c".into())).exit_code(), 3);
        assert_eq!(CliError::from(Error::SingularCovariance { units: vec![1] }).exit_code(), 4);
        assert_eq!(CliError::from(Error::InvalidParameter("p".into())).exit_code(), 2);
    }
}
