use thiserror::Error;

/// Errors raised by mesh construction, assembly and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh resolution: {0}")]
    Resolution(String),

    #[error("fine region is not aligned to the coarse grid: {0}")]
    NotAligned(String),

    #[error("invalid mesh sizes: {0}")]
    MeshSizes(String),

    #[error("invalid coefficient field: {0}")]
    Coefficient(String),

    #[error("layout does not match the partition: {0}")]
    LayoutMismatch(String),

    #[error("coarse element {0} does not touch the interface")]
    NotInterfaceElement(usize),

    #[error("edge {0} is not a fine interface edge")]
    NotInterfaceEdge(usize),

    #[error("well at ({x}, {y}) is not inside the fine region")]
    WellOutsideFineRegion { x: f64, y: f64 },

    #[error("invalid well: {0}")]
    Well(String),

    #[error("factorization failed for {context}")]
    Factorization { context: String },

    #[error("corrector problem on patch of element {element} (level {level}) is singular: {reason}")]
    SingularPatch { element: usize, level: usize, reason: String },

    #[error("solver residual {residual:e} exceeds tolerance {tolerance:e} in {context}")]
    Residual {
        context: String,
        residual: f64,
        tolerance: f64,
    },

    #[error("problem too large for global correctors: {unknowns} unknowns (limit {limit})")]
    SizeLimit { unknowns: usize, limit: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
