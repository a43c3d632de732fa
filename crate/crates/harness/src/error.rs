use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("configuration parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    ConfigParse { line: Option<usize>, message: String },
    #[error("missing config key `{0}`")]
    MissingKey(String),
    #[error("invalid sweep axis: {0}")]
    SweepAxis(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Process exit status for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::ConfigParse { .. } | Self::MissingKey(_) => 3,
            Self::Checkpoint(_) => 4,
            Self::SweepAxis(_) => 5,
            Self::Numerical(_) => 6,
            Self::Io(_) | Self::Csv(_) | Self::Json(_) => 7,
        }
    }
}

impl From<mmpos_core::Error> for HarnessError {
    fn from(e: mmpos_core::Error) -> Self {
        match e {
            mmpos_core::Error::Config(m) => Self::Config(m),
            other => Self::Numerical(other.to_string()),
        }
    }
}

impl From<mmpos_learn::Error> for HarnessError {
    fn from(e: mmpos_learn::Error) -> Self {
        use mmpos_learn::Error as L;
        match e {
            L::Checkpoint(m) => Self::Checkpoint(m),
            L::Io(io) => Self::Io(io),
            L::Core(c) => c.into(),
            other => Self::Numerical(other.to_string()),
        }
    }
}
