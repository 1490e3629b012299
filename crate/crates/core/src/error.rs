use thiserror::Error;

/// Errors raised anywhere in the engine.
///
/// Every variant maps onto a short machine-readable category (see
/// [`MgmError::category`]) which the command-line driver prints on failure.
#[derive(Debug, Error)]
pub enum MgmError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("ingestion error: {0}")]
    Ingestion(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("prediction error: {0}")]
    Prediction(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("pipeline error: {0}")]
    Pipeline(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl MgmError {
    pub fn category(&self) -> &'static str {
        match self {
            MgmError::Shape(_) => "shape",
            MgmError::Precondition(_) => "precondition",
            MgmError::Domain(_) => "domain",
            MgmError::Ingestion(_) => "ingestion",
            MgmError::Config(_) => "config",
            MgmError::Training(_) => "training",
            MgmError::Prediction(_) => "prediction",
            MgmError::Generation(_) => "generation",
            MgmError::Fit(_) => "fit",
            MgmError::Pipeline(_) => "pipeline",
            MgmError::Io { .. } => "io",
            MgmError::Json(_) => "json",
        }
    }

    /// Prefixes the message with `ctx`, keeping the category.
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        use MgmError::*;
        match self {
            Shape(m) => Shape(format!("{ctx}: {m}")),
            Precondition(m) => Precondition(format!("{ctx}: {m}")),
            Domain(m) => Domain(format!("{ctx}: {m}")),
            Ingestion(m) => Ingestion(format!("{ctx}: {m}")),
            Config(m) => Config(format!("{ctx}: {m}")),
            Training(m) => Training(format!("{ctx}: {m}")),
            Prediction(m) => Prediction(format!("{ctx}: {m}")),
            Generation(m) => Generation(format!("{ctx}: {m}")),
            Fit(m) => Fit(format!("{ctx}: {m}")),
            Pipeline(m) => Pipeline(format!("{ctx}: {m}")),
            Io { path, source } => Io {
                path: format!("{path} ({ctx})"),
                source,
            },
            Json(e) => Json(e),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        MgmError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, MgmError>;
