//! Decomposed principal component analysis on decomposable Gaussian graphical
//! models.
//!
//! The concentration matrix of a decomposable model is block-sparse over a
//! clique sequence. This crate estimates it from clique-local sample moments
//! with zero fill-in, finds its extreme eigenpairs through per-clique
//! eigensolves coupled only by separator-sized messages, and builds on those
//! primitives for sliding-window eigenvalue tracking and residual-subspace
//! anomaly scoring. A simulated runtime runs the identical arithmetic behind
//! per-clique node boundaries with full message accounting.

pub mod anomaly;
pub mod eigensolver;
pub mod error;
pub mod estimation;
pub mod graph;
pub mod linalg;
pub mod message;
pub mod runtime;
pub mod synth;

pub use eigensolver::{
    bisect_min_eig, deflated_upper_bound, eig_residual, eigvec, feasibility_sweep, local_min_eig,
    spectrum, upper_bound, Bisection, Bracket, DeflationSet, EigenPair, FeasibilityVerdict,
    IterationRecord,
};
pub use error::{Error, Result};
pub use estimation::{
    assemble_concentration, compute_local_estimates, fit_concentration, marginal_consistency,
    BlockSparseConcentration, ConsistencyReport, LocalEstimate, SampleSet,
};
pub use graph::{build_graph, derive_sets, random_decomposable, CliqueSequence, DecomposableGraph};
pub use message::{message_stats, MessageLog, MessageRecord, MessageStats, Phase};
