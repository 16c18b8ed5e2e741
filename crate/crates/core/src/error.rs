use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("training diverged in epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("aggregation weights invalid: {0}")]
    Weights(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("capability error: {0}")]
    Capability(String),

    #[error("selection config error: {0}")]
    Config(String),

    #[error("dataset spec error: {0}")]
    Spec(String),

    #[error("schema error in {file}: {detail}")]
    Schema { file: String, detail: String },

    #[error("alignment error for client {client}: {detail}")]
    Alignment { client: usize, detail: String },

    #[error("parse error in {file} at row {row}, column {column}: {detail}")]
    Parse {
        file: String,
        row: usize,
        column: usize,
        detail: String,
    },

    #[error("stalled in round {round}: nothing was uploaded and the budget is not reached")]
    Stall { round: usize },

    #[error("client {client} failed in round {round}: {source}")]
    Client {
        client: usize,
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid config at `{path}`: {message}")]
    InvalidConfig { path: String, message: String },

    #[error("configs are not comparable: {0}")]
    Comparability(String),

    #[error("unknown method `{0}`")]
    UnknownMethod(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid_config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            path: path.into(),
            message: message.into(),
        }
    }
}
