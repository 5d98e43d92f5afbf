use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report. [`Error::kind`] gives the
/// module-qualified name used by the experiment driver.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("field length {got} does not match grid size {expected}")]
    FieldLength { expected: usize, got: usize },
    #[error("field contains non-finite values")]
    NonFinite,
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("exponent {s} is out of range (need s > {min})")]
    ExponentOutOfRange { s: f64, min: f64 },
    #[error("negative exponent {s} applied to a field with mean {mean:e}")]
    NegativeExponentNonMeanZero { s: f64, mean: f64 },
    #[error("field is not mean-zero (mean {mean:e})")]
    NonMeanZero { mean: f64 },
    #[error("Riesz exponent alpha={alpha} outside (0, {n})")]
    AlphaOutOfRange { alpha: f64, n: usize },
    #[error("bump with radius {radius} at {center:?} does not fit in the box")]
    BumpOutsideBox { center: Vec<f64>, radius: f64 },

    #[error("invalid exponent order: {0}")]
    InvalidExponentOrder(String),
    #[error("eps={eps} too large (limit {limit})")]
    EpsTooLarge { eps: f64, limit: f64 },
    #[error("field is identically zero")]
    ZeroField,
    #[error("field is not supported in the admissible set (outside mass {outside:e})")]
    SupportViolation { outside: f64 },

    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("operator is near-singular: eigenvalue {eigenvalue:e} within {tol:e} of zero")]
    NearSingular { eigenvalue: f64, tol: f64 },
    #[error("iterative solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("eigensolver failed: {0}")]
    EigSolveFailure(String),
    #[error("Runge approximation too coarse: residual {residual:e} > {limit:e}")]
    ApproximationTooCoarse { residual: f64, limit: f64 },
    #[error("system too large for dense path: {unknowns} unknowns (cap {cap})")]
    TooLarge { unknowns: usize, cap: usize },

    #[error("tensor order mismatch: {0}")]
    OrderMismatch(String),
    #[error("unsupported configuration: {0}")]
    UnsupportedConfig(String),
    #[error("gauge operators not available for floor(s)={0}")]
    UnsupportedFloor(i64),
    #[error("problems are not comparable: {0}")]
    ConfigMismatch(String),

    #[error("invalid plane geometry: {0}")]
    InvalidGeometry(String),
    #[error("field has mass outside the reconstruction ball")]
    SupportOutsideBall,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("phantom set is degenerate: {0}")]
    DegeneratePhantoms(String),
    #[error("neighbourhood margin {margin} below required {required}")]
    MarginTooSmall { margin: f64, required: f64 },

    #[error("i/o error: {0}")]
    Io(String),
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    /// Module-qualified variant name, e.g. `schrodinger::NearSingular`.
    pub fn kind(&self) -> &'static str {
        use Error::*;
        match self {
            InvalidGrid(_) => "spectral_core::InvalidGrid",
            FieldLength { .. } => "spectral_core::FieldLength",
            NonFinite => "spectral_core::NonFinite",
            GridMismatch => "spectral_core::GridMismatch",
            ExponentOutOfRange { .. } => "spectral_core::ExponentOutOfRange",
            NegativeExponentNonMeanZero { .. } => "spectral_core::NegativeExponentNonMeanZero",
            NonMeanZero { .. } => "spectral_core::NonMeanZero",
            AlphaOutOfRange { .. } => "spectral_core::AlphaOutOfRange",
            BumpOutsideBox { .. } => "spectral_core::BumpOutsideBox",
            InvalidExponentOrder(_) => "poincare_lab::InvalidExponentOrder",
            EpsTooLarge { .. } => "poincare_lab::EpsTooLarge",
            ZeroField => "poincare_lab::ZeroField",
            SupportViolation { .. } => "poincare_lab::SupportViolation",
            InvalidMask(_) => "schrodinger::InvalidMask",
            NearSingular { .. } => "schrodinger::NearSingular",
            NoConvergence { .. } => "schrodinger::NoConvergence",
            EigSolveFailure(_) => "schrodinger::EigSolveFailure",
            ApproximationTooCoarse { .. } => "schrodinger::ApproximationTooCoarse",
            TooLarge { .. } => "schrodinger::TooLarge",
            OrderMismatch(_) => "magnetic::OrderMismatch",
            UnsupportedConfig(_) => "magnetic::UnsupportedConfig",
            UnsupportedFloor(_) => "magnetic::UnsupportedFloor",
            ConfigMismatch(_) => "magnetic::ConfigMismatch",
            InvalidGeometry(_) => "dplane::InvalidGeometry",
            SupportOutsideBall => "dplane::SupportOutsideBall",
            ShapeMismatch(_) => "dplane::ShapeMismatch",
            DegeneratePhantoms(_) => "dplane::DegeneratePhantoms",
            MarginTooSmall { .. } => "dplane::MarginTooSmall",
            Io(_) => "io::Io",
            Format(_) => "io::Format",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
