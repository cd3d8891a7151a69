//! Command implementations behind the `warpseg` binary. Every run resolves
//! its arguments into a serializable command spec, executes it, and writes a
//! manifest (inputs, outputs, checksums, config snapshot) next to the
//! primary output, so any run can be replayed byte-for-byte.

pub mod commands;
pub mod manifest;

use std::fmt;

/// Process exit codes: 0 ok, 1 usage, 2 data error, 3 internal.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<warpseg_core::data::DataError> for CliError {
    fn from(e: warpseg_core::data::DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<warpseg_core::model::ModelError> for CliError {
    fn from(e: warpseg_core::model::ModelError) -> Self {
        use warpseg_core::model::ModelError as ME;
        match &e {
            ME::Ckpt(_) | ME::MissingParam(_) | ME::ConfigMismatch(_) | ME::BadDims { .. } => {
                CliError::Data(e.to_string())
            }
            ME::InvalidFlags(_) => CliError::Usage(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<warpseg_core::train::TrainError> for CliError {
    fn from(e: warpseg_core::train::TrainError) -> Self {
        use warpseg_core::train::TrainError as TE;
        match e {
            TE::InvalidConfig(m) => CliError::Usage(m),
            other @ (TE::NoLabeledFrames | TE::NoPairs) => CliError::Data(other.to_string()),
            TE::Model(m) => CliError::from(m),
            TE::Tensor(t) => CliError::Internal(t.to_string()),
        }
    }
}

impl From<warpseg_core::eval::EvalError> for CliError {
    fn from(e: warpseg_core::eval::EvalError) -> Self {
        use warpseg_core::eval::EvalError as EE;
        match e {
            EE::BadSweep(m) => CliError::Usage(m),
            other @ (EE::EmptyEvaluation(_) | EE::ShapeMismatch(_)) => {
                CliError::Data(other.to_string())
            }
            EE::Model(m) => CliError::from(m),
            EE::Invalid(m) => CliError::Internal(m),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("io error: {e}"))
    }
}
