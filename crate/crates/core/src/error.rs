use thiserror::Error;

/// Errors raised by model construction, solving, verification and loading.
#[derive(Debug, Error)]
pub enum Error {
    #[error("label error: {0}")]
    Label(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("registry error: unknown builtin `{0}`")]
    Registry(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("budget exceeded: {what} needs {needed}, budget is {budget}")]
    Budget {
        what: &'static str,
        needed: f64,
        budget: usize,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("probability error: {0}")]
    Probability(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn unknown_label(label: &str, set: &str) -> Self {
        Error::Label(format!("`{label}` is not a member of {set}"))
    }
}
