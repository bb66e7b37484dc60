use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("missing parameter `{param}` for system `{system}`")]
    MissingParameter { system: String, param: String },

    #[error("point {point:?} lies outside the box domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("non-finite state at step {step} (t = {time})")]
    NonFinite { step: usize, time: f64 },

    #[error("RK4 is deterministic only; the system has nonzero diffusion")]
    Rk4WithNoise,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate derivative flow: |det| = {det:e}")]
    DegenerateJacobian { det: f64 },

    #[error("zero direction vector")]
    ZeroDirection,

    #[error("moment overflow for p = {p}; try a smaller |p|")]
    MomentOverflow { p: f64 },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("negative argument {0} for divergence generator")]
    NegativeArgument(f64),

    #[error("grids differ: {0}")]
    GridMismatch(String),

    #[error("only {0} common finite boxes; at least 8 are required")]
    TooFewBoxes(usize),

    #[error("system is not an analytic oracle: {0}")]
    NotAnOracle(String),

    #[error("field file parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
