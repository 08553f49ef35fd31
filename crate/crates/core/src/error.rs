use thiserror::Error;

/// Errors shared across the grid, matrix, transcription, solver, and
/// verification layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid order must be at least 1, got {0}")]
    OrderTooSmall(usize),

    #[error("grid order {0} exceeds the supported maximum {1}")]
    OrderTooLarge(usize, usize),

    #[error("Newton iteration for the {kind} node {index} did not converge")]
    RootFailure { kind: String, index: usize },

    #[error("nodes and weights must have equal length, got {nodes} nodes and {weights} weights")]
    LengthMismatch { nodes: usize, weights: usize },

    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: String,
        expected: String,
        got: String,
    },

    #[error("time interval is degenerate: t^a = {ta} must be strictly below t^b = {tb}")]
    DegenerateInterval { ta: f64, tb: f64 },

    #[error("evaluator `{name}` returned a non-finite value at the initial guess")]
    NonFiniteEvaluator { name: String },

    #[error("bound vectors for `{what}` are inconsistent: lower {lower} exceeds upper {upper} at row {row}")]
    InvalidBounds {
        what: String,
        lower: f64,
        upper: f64,
        row: usize,
    },

    #[error("integration step size underflowed at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("integration exceeded {max_steps} steps at t = {t}")]
    TooManySteps { t: f64, max_steps: usize },

    #[error("control signal needs at least two strictly increasing breakpoints")]
    BadBreakpoints,

    #[error("unknown problem `{0}`, valid names: {1}")]
    UnknownProblem(String, String),

    #[error("solution file: {0}")]
    SolutionFormat(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
