use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("unknown material `{0}`")]
    UnknownMaterial(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("energy bin {bin} [{lo}, {hi}) keV contains no spectrum samples")]
    EmptyBin { bin: usize, lo: f64, hi: f64 },

    #[error("photon starvation at calibration point {point} (p = {pathlength:?}), bin {bin}")]
    PhotonStarvation {
        point: usize,
        pathlength: Vec<f64>,
        bin: usize,
    },

    #[error("rank-deficient calibration design: {0}")]
    RankDeficient(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("non-finite state at {context}")]
    NonFinite { context: String },

    #[error("energy {energy} keV outside table range [{lo}, {hi}]")]
    EnergyOutOfRange { energy: f64, lo: f64, hi: f64 },

    #[error("empty region of interest `{0}`")]
    EmptyRoi(String),

    #[error("zero standard deviation in background `{0}`")]
    DegenerateBackground(String),

    #[error("insufficient angular coverage: {0}")]
    AngularCoverage(String),

    #[error("row {row}: {source}")]
    Row {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("bad container {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line driver: 2 for configuration
    /// problems, 3 for numeric failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::UnknownMaterial(_) => 2,
            Error::EmptyBin { .. }
            | Error::PhotonStarvation { .. }
            | Error::RankDeficient(_)
            | Error::Singular(_)
            | Error::NonFinite { .. }
            | Error::DegenerateBackground(_) => 3,
            Error::Row { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
