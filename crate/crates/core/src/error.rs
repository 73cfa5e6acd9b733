use thiserror::Error;

use crate::graph::VertexId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph has no vertices")]
    EmptyGraph,

    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("edge {0}-{1} has non-positive or non-finite weight {2}")]
    InvalidWeight(VertexId, VertexId, f64),

    #[error("self-loop at vertex {0}")]
    SelfLoop(VertexId),

    #[error("duplicate edge {0}-{1}")]
    DuplicateEdge(VertexId, VertexId),

    #[error("duplicate vertex id {0}")]
    DuplicateVertex(VertexId),

    #[error("invalid killing rate {1} at vertex {0}")]
    InvalidKilling(VertexId, f64),

    #[error("unknown vertex {0}")]
    UnknownVertex(String),

    #[error("vertex index {0} out of range")]
    IndexOutOfRange(usize),

    #[error("graph is not transient: no vertex has positive killing")]
    NotTransient,

    #[error("killing rate is infinite at {0}; induce finite killing first")]
    InfiniteKilling(VertexId),

    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("restricted Green matrix is ill-conditioned (reciprocal condition estimate {rcond:e})")]
    IllConditioned { rcond: f64 },

    #[error("conjugate gradient did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("quadrature did not converge: estimated error {error:e} after {intervals} panels")]
    Quadrature { error: f64, intervals: usize },

    #[error("operation requires a direct factorization, but the operator uses an iterative solver")]
    NeedsDirectFactorization,

    #[error("{0} is not a subset of {1}")]
    NotSubset(&'static str, &'static str),

    #[error("graph mismatch: {0}")]
    GraphMismatch(String),

    #[error("excursion exceeded {0} steps")]
    TrajectoryOverflow(usize),

    #[error("too few samples: {got} (need at least {need})")]
    TooFewSamples { got: usize, need: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed graph spec: {0}")]
    Spec(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
