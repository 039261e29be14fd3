use std::path::PathBuf;

use serde::Serialize;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] fragility_core::Error),
    #[error("line {line}, column `{column}`: {message}")]
    Parse {
        line: usize,
        column: String,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("fetch failed for {key}: {message}")]
    Fetch { key: String, message: String },
    #[error("digest mismatch for {key}: recorded {expected}, found {actual}")]
    Integrity {
        key: String,
        expected: String,
        actual: String,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("missing {artifact}; run `fragility {producer}` first")]
    Dependency { artifact: String, producer: String },
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error("{0}")]
    Output(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Core(e) => core_kind(e),
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Fetch { .. } => "fetch",
            Error::Integrity { .. } => "integrity",
            Error::Config(_) => "config",
            Error::Dependency { .. } => "dependency",
            Error::Stage { source, .. } => source.kind(),
            Error::Output(_) => "output",
        }
    }

    /// One-line JSON record for stderr.
    pub fn record(&self) -> ErrorRecord {
        let (stage, inner) = match self {
            Error::Stage { stage, source } => (Some(stage.clone()), source.as_ref()),
            e => (None, e),
        };
        ErrorRecord {
            error: self.kind(),
            message: inner.to_string(),
            stage,
            producer: match inner {
                Error::Dependency { producer, .. } => Some(producer.clone()),
                _ => None,
            },
        }
    }
}

fn core_kind(e: &fragility_core::Error) -> &'static str {
    use fragility_core::Error as E;
    match e {
        E::Validation(_) => "validation",
        E::Merge(_) => "merge",
        E::Binning { .. } => "binning",
        E::Restriction(_) => "restriction",
        E::Divergence { .. } => "divergence",
        E::Numerical(_) => "numerical",
        E::Scoring(_) => "scoring",
        E::Trimming { .. } => "trimming",
        E::Estimation(_) => "estimation",
        E::Domain(_) => "domain",
        E::Support { .. } => "support",
        E::Size { .. } => "size",
        E::Bootstrap { .. } => "bootstrap",
        E::Witness(_) => "witness",
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub producer: Option<String>,
}

pub trait StageExt<T> {
    fn stage(self, name: &str) -> Result<T>;
}

impl<T, E: Into<Error>> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, name: &str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage: name.to_string(),
            source: Box::new(e.into()),
        })
    }
}
