//! Simulated distributed execution: one in-process node per clique, each
//! holding only its own column block, exchanging separator-sized payloads
//! along the elimination order.
//!
//! The protocol drivers call the exact same functions as the centralized API,
//! so outputs are bit-identical by construction; what this module adds is the
//! per-node data partitioning, the message accounting, and a locality monitor
//! that audits every recorded exchange against the clique topology.

use nalgebra::{DMatrix, DVector};

use crate::eigensolver::{self, Bisection, Bracket, EigenPair};
use crate::error::{Error, Result};
use crate::estimation::{
    assemble_concentration, local_estimate_from_block, BlockSparseConcentration, LocalEstimate,
    SampleSet,
};
use crate::graph::{derive_sets, CliqueSequence, DecomposableGraph};
use crate::message::{MessageLog, Phase};

/// One simulated clique node. Holds the samples restricted to its clique and
/// everything derived from them; it has no way to address other columns.
pub struct CliqueNode {
    k: usize,
    clique: Vec<usize>,
    /// `n x |C_k|` sample block, clique-local column order.
    columns: DMatrix<f64>,
}

impl CliqueNode {
    pub fn clique(&self) -> &[usize] {
        &self.clique
    }

    pub fn index(&self) -> usize {
        self.k
    }

    /// Sample entry by global variable index; refuses indices outside the
    /// clique.
    pub fn sample(&self, row: usize, global_index: usize) -> Result<f64> {
        match self.clique.iter().position(|&g| g == global_index) {
            Some(local) => Ok(self.columns[(row, local)]),
            None => Err(Error::LocalityViolation {
                node: self.k,
                index: global_index,
            }),
        }
    }

    /// The node's local moment/concentration estimate, computed purely from
    /// its own columns.
    pub fn estimate(&self, sep_pos: &[usize]) -> Result<LocalEstimate> {
        local_estimate_from_block(&self.columns, self.k, sep_pos)
    }
}

/// A spawned network of clique nodes over one data set.
pub struct Network {
    graph: DecomposableGraph,
    seq: CliqueSequence,
    nodes: Vec<CliqueNode>,
}

impl Network {
    pub fn graph(&self) -> &DecomposableGraph {
        &self.graph
    }

    pub fn nodes(&self) -> &[CliqueNode] {
        &self.nodes
    }
}

/// Partition the samples into per-clique column blocks; the global data
/// vector is never materialized inside a node.
pub fn spawn_cliques(graph: &DecomposableGraph, data: &SampleSet) -> Result<Network> {
    if data.p() != graph.p() {
        return Err(Error::DimensionMismatch {
            expected: graph.p(),
            got: data.p(),
        });
    }
    let nodes = (0..graph.num_cliques())
        .map(|k| CliqueNode {
            k,
            clique: graph.clique(k).to_vec(),
            columns: data.restrict(graph.clique(k)),
        })
        .collect();
    Ok(Network {
        graph: graph.clone(),
        seq: derive_sets(graph),
        nodes,
    })
}

/// Protocol selector.
#[derive(Debug, Clone, Copy)]
pub enum Request {
    /// ML assembly of the global concentration.
    Assemble,
    /// Minimal eigenvalue by bisection over the cold bracket.
    MinEig { eps: f64 },
    /// Eigenvector recovery at a given eigenvalue.
    Eigvec { lambda: f64 },
    /// The `j` smallest eigenpairs.
    Spectrum { j: usize, eps: f64 },
}

/// Protocol result paired with its complete message log.
pub enum Response {
    Concentration(BlockSparseConcentration),
    MinEig {
        concentration: BlockSparseConcentration,
        bisection: Bisection,
    },
    Eigvec(DVector<f64>),
    Spectrum(Vec<EigenPair>),
}

/// Execute a protocol over the network. The arithmetic is the centralized
/// code path verbatim; afterwards the message log is audited against the
/// topology and the size bound for the request's deflation rank.
pub fn run_protocol(network: &Network, request: Request) -> Result<(Response, MessageLog)> {
    let mut log = MessageLog::new();
    let locals: Vec<LocalEstimate> = network
        .nodes
        .iter()
        .map(|node| node.estimate(&network.seq.sep_pos[node.k]))
        .collect::<Result<_>>()?;
    let k_mat = assemble_concentration(&locals, &network.graph, &mut log)?;

    let response = match request {
        Request::Assemble => Response::Concentration(k_mat),
        Request::MinEig { eps } => {
            let bracket = Bracket::new(0.0, eigensolver::upper_bound(&k_mat), eps)?;
            let bisection = eigensolver::bisect_min_eig(&k_mat, bracket, None, &mut log)?;
            Response::MinEig {
                concentration: k_mat,
                bisection,
            }
        }
        Request::Eigvec { lambda } => {
            let u = eigensolver::eigvec(&k_mat, lambda, None, &mut log)?;
            Response::Eigvec(u)
        }
        Request::Spectrum { j, eps } => {
            let pairs = eigensolver::spectrum(&k_mat, j, eps, &mut log)?;
            Response::Spectrum(pairs)
        }
    };

    let rank_bound = match request {
        Request::Spectrum { j, .. } => j.saturating_sub(1),
        _ => 0,
    };
    audit_log(network, &log, rank_bound)?;
    Ok((response, log))
}

/// Verify every recorded message: endpoints must be a clique and its parent
/// (either direction), and payload dims must respect `|S_k| + rank` with the
/// given maximum deflation rank.
pub fn audit_log(network: &Network, log: &MessageLog, rank_bound: usize) -> Result<()> {
    let kk = network.graph.num_cliques();
    for rec in &log.records {
        if rec.source >= kk || rec.dest >= kk {
            return Err(Error::LocalityViolation {
                node: rec.source.max(rec.dest),
                index: 0,
            });
        }
        let (child, expected_parent) = match rec.phase {
            Phase::AssembleUp | Phase::EigvecUp => (rec.dest, rec.source),
            _ => (rec.source, rec.dest),
        };
        if child == 0 || network.seq.parent[child] != expected_parent {
            return Err(Error::LocalityViolation {
                node: rec.source,
                index: rec.dest,
            });
        }
        let sep = network.seq.separator[child].len();
        let dim_bound = sep + rank_bound;
        if rec.rows > dim_bound || rec.cols > dim_bound {
            return Err(Error::InvalidArgument(format!(
                "message {}x{} from {} to {} exceeds separator bound {}",
                rec.rows, rec.cols, rec.source, rec.dest, dim_bound
            )));
        }
    }
    Ok(())
}
