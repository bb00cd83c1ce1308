use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("Golay length {0} is not a power of two in [2, 1024]")]
    NonPowerOfTwo(usize),

    #[error("unknown scene model `{0}`")]
    UnknownModel(String),

    #[error(
        "scatterer {scatterer} in frame {frame} has sampled delay {delay}, \
         outside the usable preamble window (limit {limit})"
    )]
    DelayOutOfFrame {
        scatterer: usize,
        frame: usize,
        delay: i64,
        limit: i64,
    },

    #[error("observation window of {samples} samples cannot cover a {segment}-sample correlation")]
    WindowTooShort { samples: usize, segment: usize },

    #[error("correlation peak {peak:.3e} does not exceed the detection threshold {threshold:.3e}")]
    NoTarget { peak: f64, threshold: f64 },

    #[error("least-squares Gram matrix is singular (reciprocal condition number {rcond:.3e})")]
    SingularGram { rcond: f64 },

    #[error("reference backscatter estimate for scatterer {index} is zero")]
    ZeroReference { index: usize },

    #[error("velocity radicand {value:.3e} is not positive; Doppler must decrease over the CPI")]
    NegativeRadicand { value: f64 },

    #[error("vehicle velocity estimate must be positive, got {0}")]
    ZeroVelocity(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{}: {message}", location(.source_name, *.line))]
    ConfigParse {
        source_name: PathBuf,
        line: Option<usize>,
        message: String,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

fn location(path: &std::path::Path, line: Option<usize>) -> String {
    match line {
        Some(line) => format!("{}:{}", path.display(), line),
        None => path.display().to_string(),
    }
}

impl Error {
    pub(crate) fn config(
        source_name: impl Into<PathBuf>,
        line: Option<usize>,
        message: impl Into<String>,
    ) -> Self {
        Error::ConfigParse {
            source_name: source_name.into(),
            line,
            message: message.into(),
        }
    }

    /// Machine-readable error class name, printed by the CLI on failure.
    pub fn name(&self) -> &'static str {
        match self {
            Error::NonPowerOfTwo(_) => "NonPowerOfTwo",
            Error::UnknownModel(_) => "UnknownModel",
            Error::DelayOutOfFrame { .. } => "DelayOutOfFrame",
            Error::WindowTooShort { .. } => "WindowTooShort",
            Error::NoTarget { .. } => "NoTarget",
            Error::SingularGram { .. } => "SingularGram",
            Error::ZeroReference { .. } => "ZeroReference",
            Error::NegativeRadicand { .. } => "NegativeRadicand",
            Error::ZeroVelocity(_) => "ZeroVelocity",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::ConfigParse { .. } => "ConfigParse",
            Error::Io(_) => "Io",
        }
    }

    /// Process exit status for this error class. Zero is reserved for success
    /// and 1 for command-line usage errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigParse { .. } => 2,
            Error::Io(_) => 3,
            Error::UnknownModel(_) => 4,
            Error::NonPowerOfTwo(_) => 5,
            Error::DelayOutOfFrame { .. } => 6,
            Error::WindowTooShort { .. } => 7,
            Error::NoTarget { .. } => 8,
            Error::SingularGram { .. } => 9,
            Error::ZeroReference { .. } => 10,
            Error::NegativeRadicand { .. } => 11,
            Error::ZeroVelocity(_) => 12,
            Error::DimensionMismatch { .. } => 13,
        }
    }
}
