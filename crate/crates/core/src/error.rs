use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input data that violates a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("size limit exceeded: {required} rows required, cap is {cap}")]
    Size { required: u128, cap: u128 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    /// A metric or statistic is not defined for the given data.
    #[error("undefined: {0}")]
    Undefined(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("coverage error, missing cells: {}", .0.join(", "))]
    Coverage(Vec<String>),

    #[error("duplicate run ids (use force to replace): {}", .0.join(", "))]
    Duplicate(Vec<String>),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input or configuration rather than a
    /// failure while doing the work.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::Shape(_)
                | Error::Size { .. }
                | Error::Config(_)
                | Error::Json(_)
                | Error::Format(_)
                | Error::Duplicate(_)
                | Error::Coverage(_)
        )
    }
}
