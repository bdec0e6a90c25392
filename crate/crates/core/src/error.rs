use thiserror::Error;

/// Invalid configuration: bad composer names, out-of-range probabilities, and so on.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown composer {name:?}; valid composers: {valid}")]
    UnknownComposer { name: String, valid: String },
    #[error("{0}")]
    Invalid(String),
}

/// Failure reading or decoding one of the JSONL/binary dataset files.
#[derive(Debug, Error)]
pub enum InputError {
    #[error("{path}:{line}: {message}")]
    Schema {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}
