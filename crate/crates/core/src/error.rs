use thiserror::Error;

/// Errors raised by the curve-space, model and experiment layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("curves live on different grids")]
    GridMismatch,

    #[error("shift by {requested} exceeds remaining pad {remaining}")]
    PadExhausted { requested: f64, remaining: f64 },

    #[error("functional node {node} lies outside [0, {x_max}]")]
    NodeOffGrid { node: f64, x_max: f64 },

    #[error("curve left the model domain: {0}")]
    Domain(String),

    #[error("riccati solution blew up at x = {x}")]
    SingularSolution { x: f64 },

    #[error("ill-conditioned basis: {0}")]
    Conditioning(String),

    #[error("degenerate probe basis: {0}")]
    ProbeBasis(String),

    #[error("singular tenor system: {0}")]
    TenorChoice(String),

    #[error("volatility specification: {0}")]
    Spec(String),

    #[error("expression parse error at {position}: {message}")]
    Expr { position: usize, message: String },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
