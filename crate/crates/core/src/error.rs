use thiserror::Error;

use crate::modules::KoszulReport;

/// Errors raised by the library. The CLI maps these onto exit codes:
/// input/parse/shape/index errors are 1, window/normalization/memory are 2,
/// theorem violations are 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("window error: {0}")]
    Window(String),

    /// A Koszul computation whose tail did not vanish. The partial report
    /// holds lower bounds only.
    #[error("window error: Koszul tail not certified ({reason})")]
    Uncertified { reason: String, partial: Box<KoszulReport> },

    #[error("normalization failure: {0}")]
    Normalization(String),

    #[error("memory guard: {0}")]
    MemoryGuard(String),

    #[error("theorem violated: {0}")]
    TheoremViolated(String),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Parse { .. } | Error::Shape(_) | Error::Index(_) => 1,
            Error::Window(_) | Error::Uncertified { .. } | Error::Normalization(_) | Error::MemoryGuard(_) => 2,
            Error::TheoremViolated(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
