use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input violated the documented domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Not enough (or degenerate) data to estimate the requested quantity.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// The regression design is rank deficient beyond the conditioning threshold.
    #[error("singular design: columns {columns:?} are (nearly) collinear with earlier columns")]
    SingularDesign { columns: Vec<String> },

    #[error("normalization error: execution proxy {0:e} is too close to zero")]
    Normalization(f64),

    /// Wraps an error raised while processing one market zone (and lag, when relevant).
    #[error("zone {zone}{}: {source}", lag.map(|l| format!(", lag {l}")).unwrap_or_default())]
    InZone {
        zone: String,
        lag: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_zone(self, zone: &str, lag: Option<usize>) -> Error {
        Error::InZone {
            zone: zone.to_string(),
            lag,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad inputs or files rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Domain(_) | Error::Dataset(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => true,
            Error::InZone { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
