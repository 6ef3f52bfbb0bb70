use std::fmt;

use untangle_core::Error as CoreError;

/// Machine-readable error class. Printed as `CODE: message` on one line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Code {
    /// Bad command-line arguments.
    Usage,
    /// Config file missing or unreadable.
    ConfigRead,
    /// Config parses but violates the schema.
    Schema,
    /// Missing or malformed input files.
    Input,
    /// Run ids already present in the store.
    Duplicate,
    /// Inputs violate a precondition of the requested computation.
    Validation,
    /// Failure while doing the work.
    Runtime,
    /// Could not write outputs.
    Io,
}

impl Code {
    pub fn as_str(self) -> &'static str {
        match self {
            Code::Usage => "E_USAGE",
            Code::ConfigRead => "E_CONFIG_READ",
            Code::Schema => "E_SCHEMA",
            Code::Input => "E_INPUT",
            Code::Duplicate => "E_DUPLICATE",
            Code::Validation => "E_VALIDATION",
            Code::Runtime => "E_RUNTIME",
            Code::Io => "E_IO",
        }
    }

    pub fn exit_status(self) -> u8 {
        match self {
            Code::Runtime | Code::Io => 2,
            _ => 1,
        }
    }
}

/// Attaches a [`Code`] to an error travelling through `anyhow`.
#[derive(Debug)]
pub struct Coded {
    pub code: Code,
    pub message: String,
}

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Coded {}

pub fn coded(code: Code, message: impl Into<String>) -> anyhow::Error {
    Coded { code, message: message.into() }.into()
}

fn classify_core(e: &CoreError) -> Code {
    match e {
        CoreError::Config(_) | CoreError::Json(_) => Code::Schema,
        CoreError::Format(_) => Code::Input,
        CoreError::Duplicate(_) => Code::Duplicate,
        CoreError::Validation(_) | CoreError::Shape(_) | CoreError::Size { .. } | CoreError::Coverage(_) => {
            Code::Validation
        }
        CoreError::Io(_) => Code::Io,
        CoreError::Numeric(_) | CoreError::Undefined(_) | CoreError::Diverged { .. } => Code::Runtime,
    }
}

/// Finds the most specific code in the error chain.
pub fn classify(err: &anyhow::Error) -> Code {
    for cause in err.chain() {
        if let Some(c) = cause.downcast_ref::<Coded>() {
            return c.code;
        }
        if let Some(c) = cause.downcast_ref::<CoreError>() {
            return classify_core(c);
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return Code::Schema;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return Code::Io;
        }
    }
    Code::Runtime
}

/// The full chain on one line.
pub fn one_line(err: &anyhow::Error) -> String {
    format!("{err:#}").split_whitespace().collect::<Vec<_>>().join(" ")
}
