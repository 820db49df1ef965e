use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shape or axis disagreement inside a kernel.
    #[error("dimension error in {op}: {msg}")]
    Dimension { op: &'static str, msg: String },

    /// A caller broke an operation's precondition.
    #[error("contract violation in {op}: {msg}")]
    Contract { op: &'static str, msg: String },

    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error at {}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(op: &'static str, msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension {
        op,
        msg: msg.into(),
    })
}

pub(crate) fn contract_err<T>(op: &'static str, msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract {
        op,
        msg: msg.into(),
    })
}
