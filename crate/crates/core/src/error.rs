use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("channel under test at {center_thz} THz ({bandwidth_ghz} GHz) does not fit inside the band")]
    CutOutOfBand { center_thz: f64, bandwidth_ghz: f64 },

    #[error("channels {first} and {second} have overlapping supports")]
    OverlappingChannels { first: usize, second: usize },

    #[error("quadrature did not converge: estimate {estimate:e}, error {error:e} after {subdivisions} subdivisions")]
    QuadratureNotConverged {
        estimate: f64,
        error: f64,
        subdivisions: usize,
    },

    #[error("feature `{0}` has zero variance in the training data")]
    DegenerateFeature(String),

    #[error("design matrix is singular: {0}")]
    SingularDesign(String),

    #[error("calibration points are degenerate: all model predictions are equal")]
    DegeneratePoints,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{}: {source}", path.display())]
    File {
        path: std::path::PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

/// Reads a whole text file, naming the path on failure.
pub fn read_to_string(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

impl Error {
    /// Stable short name used in command-line error messages.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid-config",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::CutOutOfBand { .. } => "cut-out-of-band",
            Error::OverlappingChannels { .. } => "overlapping-channels",
            Error::QuadratureNotConverged { .. } => "quadrature",
            Error::DegenerateFeature(_) => "degenerate-feature",
            Error::SingularDesign(_) => "singular-design",
            Error::DegeneratePoints => "degenerate-points",
            Error::InsufficientData(_) => "insufficient-data",
            Error::Parse { .. } => "parse",
            Error::File { .. } | Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Toml(_) => "toml",
        }
    }
}
