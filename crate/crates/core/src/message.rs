//! Message accounting shared by the centralized solvers and the simulated
//! distributed runtime.
//!
//! Every inter-clique exchange is recorded here, whichever driver produced
//! it, so the communication claims (separator-sized payloads, deflation
//! enlargement by at most `j-1`) are directly testable.

use serde::Serialize;

/// Protocol phase a message belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    /// ML assembly, elimination-order pass (clique k -> parent).
    AssembleDown,
    /// ML assembly, reverse pass (parent -> clique k).
    AssembleUp,
    /// Feasibility sweep validating a bracket endpoint before bisection.
    BracketCheck,
    /// Feasibility sweep inside one bisection iteration.
    Feasibility { iteration: usize },
    /// Eigenvector recovery, elimination-order pass.
    EigvecDown,
    /// Eigenvector recovery, back-substitution pass.
    EigvecUp,
}

/// One recorded exchange: `dim` is the side length of the (square) payload,
/// or the vector length for back-substitution messages.
#[derive(Debug, Clone, Serialize)]
pub struct MessageRecord {
    pub source: usize,
    pub dest: usize,
    pub rows: usize,
    pub cols: usize,
    pub phase: Phase,
}

/// Append-ordered log of every message in a protocol run.
#[derive(Debug, Clone, Default)]
pub struct MessageLog {
    pub records: Vec<MessageRecord>,
}

impl MessageLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, source: usize, dest: usize, rows: usize, cols: usize, phase: Phase) {
        self.records.push(MessageRecord {
            source,
            dest,
            rows,
            cols,
            phase,
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Total payload size in bytes (f64 entries).
    pub fn total_bytes(&self) -> usize {
        self.records.iter().map(|r| r.rows * r.cols * 8).sum()
    }
}

/// Summary of a message log, with the centralized cost for comparison.
#[derive(Debug, Clone, Serialize)]
pub struct MessageStats {
    pub count: usize,
    /// Largest payload dimension, max(rows, cols) over all records.
    pub max_dim: usize,
    /// Sum of payload entries over all records.
    pub total_entries: usize,
    pub total_bytes: usize,
    /// Cost of shipping everything to a central node: the variable count p.
    pub centralized_dim: usize,
}

/// Summarize a log; `p` is the global variable count.
pub fn message_stats(log: &MessageLog, p: usize) -> MessageStats {
    MessageStats {
        count: log.len(),
        max_dim: log
            .records
            .iter()
            .map(|r| r.rows.max(r.cols))
            .max()
            .unwrap_or(0),
        total_entries: log.records.iter().map(|r| r.rows * r.cols).sum(),
        total_bytes: log.total_bytes(),
        centralized_dim: p,
    }
}
