use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("numeric input error: {0}")]
    NonFinite(String),
    #[error("normalization error: {0}")]
    Normalization(String),
    #[error("profile error: {0}")]
    Profile(String),
    #[error("count error: {0}")]
    Count(String),
    #[error("shift error: {0}")]
    Shift(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("estimator kind error: {0}")]
    EstimatorKind(String),
    #[error("adjustment spec error: {0}")]
    Spec(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),
    #[error("parse error{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, msg: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("replay mismatch: {0}")]
    Mismatch(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line: Some(line),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 usage/config, 3 data/parse, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_)
            | Error::Config(_)
            | Error::Spec(_)
            | Error::EstimatorKind(_)
            | Error::Profile(_)
            | Error::Shift(_)
            | Error::UnsupportedModel(_) => 2,
            Error::Parse { .. }
            | Error::Schema(_)
            | Error::Io { .. }
            | Error::Json(_)
            | Error::Count(_)
            | Error::Dimension(_) => 3,
            Error::NonFinite(_)
            | Error::Normalization(_)
            | Error::Domain(_)
            | Error::Mismatch(_)
            | Error::Divergence(_) => 4,
        }
    }
}
