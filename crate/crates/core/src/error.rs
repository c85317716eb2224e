use thiserror::Error;

/// Errors shared across the graph, estimation and eigensolver layers.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("node {0} is not covered by any clique")]
    UncoveredNode(usize),

    #[error("clique {0} is empty")]
    EmptyClique(usize),

    #[error("clique {clique} contains index {index} outside [0, {p})")]
    IndexOutOfRange { clique: usize, index: usize, p: usize },

    #[error("running intersection property fails at clique {k}")]
    NotPerfectOrder { k: usize },

    #[error("clique {inner} is contained in clique {outer}")]
    RedundantClique { inner: usize, outer: usize },

    #[error("no decomposable graph with p={p}, cliques={cliques}, max_sep={max_sep}")]
    InfeasibleShape {
        p: usize,
        cliques: usize,
        max_sep: usize,
    },

    #[error("local sample covariance on clique {clique} is singular (rcond ~ {rcond:.3e})")]
    SingularLocalCovariance { clique: usize, rcond: f64 },

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("bracket [{lower}, {upper}] does not straddle the minimal eigenvalue")]
    BadBracket { lower: f64, upper: f64 },

    #[error("no block is numerically singular at lambda={lambda}; not an eigenvalue at the working tolerance")]
    NoNullVector { lambda: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("node {node} accessed index {index} outside its clique")]
    LocalityViolation { node: usize, index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
