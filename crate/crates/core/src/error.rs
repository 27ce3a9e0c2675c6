use thiserror::Error;

/// Every failure the lab can report. Stage errors inside a pipeline are
/// folded into report entries; only process-level failures surface as `Err`.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("spectrum hit at ({re}, {im}): distance {distance:e} below floor {floor:e}")]
    SpectrumHit {
        re: f64,
        im: f64,
        distance: f64,
        floor: f64,
    },

    #[error("range violation: {0}")]
    RangeViolation(String),

    #[error("tail inconclusive: {0}")]
    TailInconclusive(String),

    #[error("resolution too coarse: {points_per_decade} points per decade (need at least 8)")]
    ResolutionTooCoarse { points_per_decade: usize },

    #[error("window too narrow: spans {decades:.3} decades (need at least 1)")]
    WindowTooNarrow { decades: f64 },

    #[error("split infeasible: beta + gamma = {sum} is below the target {target}")]
    SplitInfeasible { sum: f64, target: f64 },

    #[error("transfer matrix singular at ({re}, {im}): smallest singular value {sigma_min:e}")]
    SingularD { re: f64, im: f64, sigma_min: f64 },

    #[error("quadrature unstable: mesh halving changed the value by {relative_change:.3e}")]
    QuadratureUnstable { relative_change: f64 },

    #[error("bracket invalid: {0}")]
    BracketInvalid(String),

    #[error("singular: {0}")]
    Singular(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("io error: {0}")]
    Io(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl LabError {
    /// Stable short name used in reports and by the C interface.
    pub fn kind(&self) -> &'static str {
        match self {
            LabError::DimensionMismatch { .. } => "DimensionMismatch",
            LabError::SpectrumHit { .. } => "SpectrumHit",
            LabError::RangeViolation(_) => "RangeViolation",
            LabError::TailInconclusive(_) => "TailInconclusive",
            LabError::ResolutionTooCoarse { .. } => "ResolutionTooCoarse",
            LabError::WindowTooNarrow { .. } => "WindowTooNarrow",
            LabError::SplitInfeasible { .. } => "SplitInfeasible",
            LabError::SingularD { .. } => "SingularD",
            LabError::QuadratureUnstable { .. } => "QuadratureUnstable",
            LabError::BracketInvalid(_) => "BracketInvalid",
            LabError::Singular(_) => "Singular",
            LabError::Parse { .. } => "ParseError",
            LabError::Validation(_) => "ValidationError",
            LabError::Io(_) => "IoError",
            LabError::Unsupported(_) => "Unsupported",
        }
    }
}

impl From<std::io::Error> for LabError {
    fn from(err: std::io::Error) -> Self {
        LabError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
