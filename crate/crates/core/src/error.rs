use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate trial key (model={model_id}, dataset={dataset_id}, T={temperature}, question={question_id})")]
    DuplicateTrial {
        model_id: String,
        dataset_id: String,
        temperature: f64,
        question_id: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("probability {0} outside the open interval (0, 1)")]
    ProbabilityOutOfRange(f64),

    #[error("degenerate binning: {0}")]
    DegenerateBins(String),

    #[error("counts are already corrected")]
    AlreadyCorrected,

    #[error("counts must be corrected before this operation")]
    NotCorrected,

    #[error("unstable estimate: {0}")]
    Unstable(String),

    #[error("bootstrap excluded {excluded} of {total} resamples")]
    TooManyExcluded { excluded: usize, total: usize },

    #[error("serialisation error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            return Error::Io(e.into());
        }
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
