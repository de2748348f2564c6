use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("measurement {y} is not attained by the nonlinearity")]
    EmptyPreimage { y: f64 },

    #[error("all posterior weights underflowed for y = {y}")]
    NumericalUnderflow { y: f64 },

    #[error("bisection did not converge on segment {segment} for level {y}")]
    BisectionFailed { segment: usize, y: f64 },

    #[error("element {index}: {source}")]
    Element {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("Lorenz comparison needs equal means, got {left} and {right}")]
    MeanMismatch { left: f64, right: f64 },

    #[error("no perfect recovery up to delta = {delta_hi}")]
    NoRecovery { delta_hi: f64 },

    #[error("degenerate divergence: 1 - <eta'> = {gap:e}")]
    DegenerateDivergence { gap: f64 },

    #[error("non-positive variance {name} = {value:e}")]
    NonPositiveVariance { name: &'static str, value: f64 },

    #[error("informative initialization needs the true z (synthetic instance)")]
    InformativeWithoutTruth,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown {kind} '{name}'")]
    UnknownName { kind: &'static str, name: String },
}

impl Error {
    pub(crate) fn at(self, index: usize) -> Error {
        Error::Element { index, source: Box::new(self) }
    }
}
