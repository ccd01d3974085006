use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),
    /// A model whose statistic has zero variance or an otherwise unusable shape.
    #[error("degenerate model: {0}")]
    Degenerate(String),
    /// The requested operation is not available for this model.
    #[error("capability error: {0}")]
    Capability(String),
    /// A moment certificate could not be produced (e.g. divergent MGF).
    #[error("certificate failure: {0}")]
    Certificate(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
