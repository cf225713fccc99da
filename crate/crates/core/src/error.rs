use thiserror::Error;

use crate::balance::StatError;
use crate::data::DataError;
use crate::mechanism::MechanismError;
use crate::propensity::PropensityError;
use crate::randtest::TestError;
use crate::synth::SynthError;

/// Top-level error for pipeline-level operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Statistic(#[from] StatError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Propensity(#[from] PropensityError),
    #[error(transparent)]
    Test(#[from] TestError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization failure: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Broad failure classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Numerical,
    CapExceeded,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Input => 2,
            ErrorClass::Numerical => 3,
            ErrorClass::CapExceeded => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::Input => "input",
            ErrorClass::Numerical => "numerical",
            ErrorClass::CapExceeded => "cap_exceeded",
        }
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Data(_) | Error::Config(_) | Error::Io(_) | Error::Json(_) => ErrorClass::Input,
            Error::Mechanism(MechanismError::EnumerationCap { .. }) => ErrorClass::CapExceeded,
            Error::Test(TestError::Mechanism(MechanismError::EnumerationCap { .. })) => ErrorClass::CapExceeded,
            Error::Mechanism(MechanismError::TooManyRedraws { .. })
            | Error::Test(TestError::Mechanism(MechanismError::TooManyRedraws { .. })) => ErrorClass::Numerical,
            Error::Mechanism(_) | Error::Test(TestError::Mechanism(_) | TestError::Config(_)) => ErrorClass::Input,
            Error::Synth(SynthError::Degenerate { .. }) => ErrorClass::Numerical,
            Error::Synth(_) => ErrorClass::Input,
            Error::Propensity(_) | Error::Statistic(_) | Error::Test(_) => ErrorClass::Numerical,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
