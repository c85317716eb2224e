//! Clique-local moments and maximum-likelihood assembly of the global
//! concentration matrix.
//!
//! Each clique owns the sample covariance of its own variables; the global ML
//! concentration is the zero fill-in combination of the local inverses,
//!
//! ```text
//! K = sum_k [Ktilde^{C_k,C_k}]^0  -  sum_{k>=2} [Ktilde^{S_k,S_k}]^0
//! ```
//!
//! realized here by separator-sized corrections passed along the elimination
//! order (one pass down, one pass back up), so the same arithmetic serves the
//! centralized API and the simulated distributed runtime.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::{derive_sets, CliqueSequence, DecomposableGraph};
use crate::linalg;
use crate::message::{MessageLog, Phase};

/// Zero-mean samples: `n` rows of dimension `p`.
#[derive(Debug, Clone)]
pub struct SampleSet {
    data: DMatrix<f64>,
}

impl SampleSet {
    /// Build from an `n x p` matrix with one sample per row.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "sample set needs n >= 1 and p >= 1".into(),
            ));
        }
        Ok(SampleSet { data })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn p(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.data.row(i).iter().copied().collect()
    }

    /// Columns restricted to `indices`, preserving row order.
    pub fn restrict(&self, indices: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), indices.len(), |i, j| self.data[(i, indices[j])])
    }

    /// Contiguous row window `[start, start+len)`.
    pub fn window(&self, start: usize, len: usize) -> Result<SampleSet> {
        if start + len > self.n() {
            return Err(Error::DimensionMismatch {
                expected: start + len,
                got: self.n(),
            });
        }
        Ok(SampleSet {
            data: self.data.rows(start, len).into_owned(),
        })
    }

    /// Subtract the per-column mean (optional preprocessing; the model itself
    /// is zero-mean).
    pub fn centered(&self) -> SampleSet {
        let n = self.n() as f64;
        let mut data = self.data.clone();
        for j in 0..data.ncols() {
            let mean = data.column(j).sum() / n;
            for i in 0..data.nrows() {
                data[(i, j)] -= mean;
            }
        }
        SampleSet { data }
    }
}

/// `(1/n) * sum_i x_i x_i^T` over the columns of a restricted sample block
/// (`n x d`, one sample per row).
pub fn local_moments(restricted: &DMatrix<f64>) -> DMatrix<f64> {
    let n = restricted.nrows() as f64;
    let mut s = restricted.transpose() * restricted;
    s /= n;
    linalg::symmetrize(&mut s);
    s
}

/// Inverse of a local sample covariance. Cholesky failure is the signal that
/// the local ML estimate does not exist.
pub fn local_concentration(s_local: &DMatrix<f64>, clique: usize) -> Result<DMatrix<f64>> {
    linalg::spd_inverse(s_local, clique)
}

/// Per-clique moments and concentrations, plus the separator-sized pair for
/// `k >= 2`.
#[derive(Debug, Clone)]
pub struct LocalEstimate {
    pub clique: usize,
    pub s_local: DMatrix<f64>,
    pub k_local: DMatrix<f64>,
    pub s_sep: Option<DMatrix<f64>>,
    pub k_sep: Option<DMatrix<f64>>,
}

/// Compute every clique's `LocalEstimate` from raw samples. Each clique's
/// figures depend only on its own columns.
pub fn compute_local_estimates(
    data: &SampleSet,
    graph: &DecomposableGraph,
    seq: &CliqueSequence,
) -> Result<Vec<LocalEstimate>> {
    if data.p() != graph.p() {
        return Err(Error::DimensionMismatch {
            expected: graph.p(),
            got: data.p(),
        });
    }
    (0..graph.num_cliques())
        .map(|k| {
            let restricted = data.restrict(graph.clique(k));
            local_estimate_from_block(&restricted, k, &seq.sep_pos[k])
        })
        .collect()
}

/// Same as [`compute_local_estimates`] for a single clique, given only that
/// clique's column block. This is the entry point the runtime nodes use, so
/// centralized and distributed estimation share one code path.
pub fn local_estimate_from_block(
    restricted: &DMatrix<f64>,
    clique: usize,
    sep_pos: &[usize],
) -> Result<LocalEstimate> {
    let s_local = local_moments(restricted);
    let k_local = local_concentration(&s_local, clique)?;
    let (s_sep, k_sep) = if sep_pos.is_empty() {
        (None, None)
    } else {
        let sep_block = linalg::submatrix(&s_local, sep_pos, sep_pos);
        let k_sep = local_concentration(&sep_block, clique)?;
        (Some(sep_block), Some(k_sep))
    };
    Ok(LocalEstimate {
        clique,
        s_local,
        k_local,
        s_sep,
        k_sep,
    })
}

/// The global concentration matrix stored as per-clique dense blocks.
///
/// Every block holds the true global sub-matrix `K_{C_k,C_k}`; entries shared
/// between cliques are bit-identical replicas, and entries outside the clique
/// pattern are identically zero by construction of the dense view.
#[derive(Debug, Clone)]
pub struct BlockSparseConcentration {
    graph: DecomposableGraph,
    seq: CliqueSequence,
    blocks: Vec<DMatrix<f64>>,
}

impl BlockSparseConcentration {
    pub fn graph(&self) -> &DecomposableGraph {
        &self.graph
    }

    pub fn seq(&self) -> &CliqueSequence {
        &self.seq
    }

    pub fn p(&self) -> usize {
        self.graph.p()
    }

    /// Global sub-matrix `K_{C_k,C_k}`.
    pub fn clique_block(&self, k: usize) -> &DMatrix<f64> {
        &self.blocks[k]
    }

    /// Dense rendering (derived view for oracles and reports).
    pub fn dense(&self) -> DMatrix<f64> {
        let p = self.graph.p();
        let mut out = DMatrix::zeros(p, p);
        for (k, block) in self.blocks.iter().enumerate() {
            let clique = self.graph.clique(k);
            for (bi, &gi) in clique.iter().enumerate() {
                for (bj, &gj) in clique.iter().enumerate() {
                    out[(gi, gj)] = block[(bi, bj)];
                }
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.amax())
            .fold(0.0f64, f64::max)
    }

    /// Build from a dense symmetric matrix by extracting clique blocks.
    /// Entries outside the clique pattern are ignored; the caller is
    /// responsible for the matrix actually respecting the graph sparsity.
    pub fn from_dense(graph: &DecomposableGraph, dense: &DMatrix<f64>) -> Result<Self> {
        if dense.nrows() != graph.p() || dense.ncols() != graph.p() {
            return Err(Error::DimensionMismatch {
                expected: graph.p(),
                got: dense.nrows(),
            });
        }
        if !linalg::is_symmetric(dense) {
            return Err(Error::NotSymmetric);
        }
        let blocks = graph
            .cliques()
            .iter()
            .map(|c| linalg::submatrix(dense, c, c))
            .collect();
        Ok(BlockSparseConcentration {
            graph: graph.clone(),
            seq: derive_sets(graph),
            blocks,
        })
    }
}

/// Assemble the global ML concentration from local estimates via
/// separator-sized corrections.
///
/// Elimination-order pass: clique `k` sends its parent the correction
/// `[B_k]_{S_k,S_k} - Ktilde^{S_k,S_k}` (own perturbation plus anything
/// forwarded from its children). Reverse pass: each clique receives the
/// finalized separator sub-block back from its parent, so every stored block
/// equals the true global `K_{C_k,C_k}`.
pub fn assemble_concentration(
    locals: &[LocalEstimate],
    graph: &DecomposableGraph,
    log: &mut MessageLog,
) -> Result<BlockSparseConcentration> {
    let seq = derive_sets(graph);
    let kk = graph.num_cliques();
    if locals.len() != kk {
        return Err(Error::DimensionMismatch {
            expected: kk,
            got: locals.len(),
        });
    }
    let mut blocks: Vec<DMatrix<f64>> = locals.iter().map(|l| l.k_local.clone()).collect();

    // Down: k = K..2 in elimination order.
    for k in (1..kk).rev() {
        let spos = &seq.sep_pos[k];
        let k_sep = locals[k]
            .k_sep
            .as_ref()
            .expect("separator estimate exists for k >= 2");
        let mut correction = linalg::submatrix(&blocks[k], spos, spos);
        correction -= k_sep;
        let parent = seq.parent[k];
        let ppos = &seq.sep_pos_in_parent[k];
        log.push(k, parent, spos.len(), spos.len(), Phase::AssembleDown);
        for (a, &pa) in ppos.iter().enumerate() {
            for (b, &pb) in ppos.iter().enumerate() {
                blocks[parent][(pa, pb)] += correction[(a, b)];
            }
        }
    }

    // Up: k = 2..K; parent sends back the finalized separator sub-block.
    for k in 1..kk {
        let parent = seq.parent[k];
        let ppos = &seq.sep_pos_in_parent[k];
        let finalized = linalg::submatrix(&blocks[parent], ppos, ppos);
        let spos = &seq.sep_pos[k];
        log.push(parent, k, spos.len(), spos.len(), Phase::AssembleUp);
        for (a, &sa) in spos.iter().enumerate() {
            for (b, &sb) in spos.iter().enumerate() {
                blocks[k][(sa, sb)] = finalized[(a, b)];
            }
        }
    }

    Ok(BlockSparseConcentration {
        graph: graph.clone(),
        seq,
        blocks,
    })
}

/// One-call centralized pipeline: moments, inverses, assembly.
pub fn fit_concentration(
    data: &SampleSet,
    graph: &DecomposableGraph,
) -> Result<BlockSparseConcentration> {
    let seq = derive_sets(graph);
    let locals = compute_local_estimates(data, graph, &seq)?;
    let mut log = MessageLog::new();
    assemble_concentration(&locals, graph, &mut log)
}

/// Per-clique difference between `[K^-1]_{C_k,C_k}` and the local sample
/// covariance (report only; the assembled ML estimate satisfies this by
/// construction).
#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    /// Max-abs difference per clique.
    pub per_clique: Vec<f64>,
    pub max_abs_diff: f64,
}

impl ConsistencyReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_abs_diff <= tol
    }
}

pub fn marginal_consistency(
    k_mat: &BlockSparseConcentration,
    locals: &[LocalEstimate],
) -> ConsistencyReport {
    let dense = k_mat.dense();
    let sigma = dense
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .unwrap_or_else(|| dense.clone().try_inverse().expect("K invertible"));
    let mut per_clique = Vec::with_capacity(locals.len());
    for (k, local) in locals.iter().enumerate() {
        let clique = k_mat.graph().clique(k);
        let sub = linalg::submatrix(&sigma, clique, clique);
        per_clique.push((sub - &local.s_local).amax());
    }
    let max = per_clique.iter().copied().fold(0.0f64, f64::max);
    ConsistencyReport {
        per_clique,
        max_abs_diff: max,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    #[test]
    fn single_sample_outer_product() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let s = local_moments(&x);
        assert_eq!(s, dmatrix![1.0, 2.0; 2.0, 4.0]);
    }

    #[test]
    fn repeated_basis_vector() {
        let x = DMatrix::from_fn(5, 3, |_, j| if j == 0 { 1.0 } else { 0.0 });
        let s = local_moments(&x);
        let mut expect = DMatrix::zeros(3, 3);
        expect[(0, 0)] = 1.0;
        assert_eq!(s, expect);
    }

    #[test]
    fn moments_match_direct_summation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 40;
        let d = 6;
        let x = DMatrix::from_fn(n, d, |_, _| rng.random::<f64>() - 0.5);
        let s = local_moments(&x);
        // Oracle: explicit sum of outer products.
        let mut expect = DMatrix::zeros(d, d);
        for i in 0..n {
            let xi = x.row(i).transpose();
            expect += &xi * xi.transpose();
        }
        expect /= n as f64;
        assert_abs_diff_eq!(s, expect, epsilon = 1e-12);
    }

    #[test]
    fn concentration_of_identity() {
        let s = DMatrix::identity(3, 3);
        let k = local_concentration(&s, 0).unwrap();
        assert_abs_diff_eq!(k, DMatrix::identity(3, 3), epsilon = 1e-14);
    }

    #[test]
    fn concentration_two_by_two() {
        let s = dmatrix![2.0, 1.0; 1.0, 2.0];
        let k = local_concentration(&s, 0).unwrap();
        let expect = dmatrix![2.0/3.0, -1.0/3.0; -1.0/3.0, 2.0/3.0];
        assert_abs_diff_eq!(k, expect, epsilon = 1e-14);
        // verify by multiplying back
        assert_abs_diff_eq!(&s * &k, DMatrix::identity(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn rank_deficient_covariance_rejected() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let s = local_moments(&x);
        let err = local_concentration(&s, 4).unwrap_err();
        assert!(matches!(
            err,
            Error::SingularLocalCovariance { clique: 4, .. }
        ));
    }

    #[test]
    fn identity_locals_assemble_to_identity() {
        // two cliques {a,c},{c,b}: I + I - I on the separator.
        let graph = build_graph(3, &[vec![0, 1], vec![1, 2]]).unwrap();
        let locals = vec![
            LocalEstimate {
                clique: 0,
                s_local: DMatrix::identity(2, 2),
                k_local: DMatrix::identity(2, 2),
                s_sep: None,
                k_sep: None,
            },
            LocalEstimate {
                clique: 1,
                s_local: DMatrix::identity(2, 2),
                k_local: DMatrix::identity(2, 2),
                s_sep: Some(DMatrix::identity(1, 1)),
                k_sep: Some(DMatrix::identity(1, 1)),
            },
        ];
        let mut log = MessageLog::new();
        let k = assemble_concentration(&locals, &graph, &mut log).unwrap();
        assert_abs_diff_eq!(k.dense(), DMatrix::identity(3, 3), epsilon = 1e-15);
        // one message down, one up, both 1x1
        assert_eq!(log.len(), 2);
        assert!(log.records.iter().all(|r| r.rows == 1 && r.cols == 1));
    }

    #[test]
    fn two_clique_assembly_matches_hand_formula() {
        // Stilde^{C1} = Stilde^{C2} = [[2,1],[1,2]], Stilde^S = [2].
        let graph = build_graph(3, &[vec![0, 1], vec![1, 2]]).unwrap();
        let s = dmatrix![2.0, 1.0; 1.0, 2.0];
        let kt = s.clone().try_inverse().unwrap();
        let locals = vec![
            LocalEstimate {
                clique: 0,
                s_local: s.clone(),
                k_local: kt.clone(),
                s_sep: None,
                k_sep: None,
            },
            LocalEstimate {
                clique: 1,
                s_local: s.clone(),
                k_local: kt.clone(),
                s_sep: Some(DMatrix::from_element(1, 1, 2.0)),
                k_sep: Some(DMatrix::from_element(1, 1, 0.5)),
            },
        ];
        let mut log = MessageLog::new();
        let k = assemble_concentration(&locals, &graph, &mut log).unwrap();
        // hand-assembled dense: embed K1 + embed K2 - embed Ksep
        let mut expect = DMatrix::zeros(3, 3);
        for (bi, gi) in [0usize, 1].iter().enumerate() {
            for (bj, gj) in [0usize, 1].iter().enumerate() {
                expect[(*gi, *gj)] += kt[(bi, bj)];
            }
        }
        for (bi, gi) in [1usize, 2].iter().enumerate() {
            for (bj, gj) in [1usize, 2].iter().enumerate() {
                expect[(*gi, *gj)] += kt[(bi, bj)];
            }
        }
        expect[(1, 1)] -= 0.5;
        assert_abs_diff_eq!(k.dense(), expect, epsilon = 1e-14);

        // clique blocks obey the perturbation identities:
        // [K]_{C1,C1} = Ktilde^{C1} + diag-embed(M_b), M_b = [Ktilde^{C2}]_{S,S} - Ktilde^{S,S}
        let m_b = kt[(0, 0)] - 0.5;
        let mut block1 = kt.clone();
        block1[(1, 1)] += m_b;
        assert_abs_diff_eq!(k.clique_block(0), &block1, epsilon = 1e-14);
        let m_a = kt[(1, 1)] - 0.5;
        let mut block2 = kt.clone();
        block2[(0, 0)] += m_a;
        assert_abs_diff_eq!(k.clique_block(1), &block2, epsilon = 1e-14);
    }

    #[test]
    fn marginal_consistency_identity_case() {
        let graph = build_graph(3, &[vec![0, 1], vec![1, 2]]).unwrap();
        let locals = vec![
            LocalEstimate {
                clique: 0,
                s_local: DMatrix::identity(2, 2),
                k_local: DMatrix::identity(2, 2),
                s_sep: None,
                k_sep: None,
            },
            LocalEstimate {
                clique: 1,
                s_local: DMatrix::identity(2, 2),
                k_local: DMatrix::identity(2, 2),
                s_sep: Some(DMatrix::identity(1, 1)),
                k_sep: Some(DMatrix::identity(1, 1)),
            },
        ];
        let mut log = MessageLog::new();
        let k = assemble_concentration(&locals, &graph, &mut log).unwrap();
        let report = marginal_consistency(&k, &locals);
        assert!(report.max_abs_diff < 1e-14);
    }

    #[test]
    fn marginal_consistency_random_instance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let graph = build_graph(6, &[vec![0, 1, 2], vec![2, 3, 4], vec![4, 5]]).unwrap();
        let n = 50;
        let data = SampleSet::new(DMatrix::from_fn(n, 6, |_, _| {
            // Box-Muller-free normal-ish mixture is fine here; only
            // nonsingularity matters.
            rng.random::<f64>() + rng.random::<f64>() - 1.0
        }))
        .unwrap();
        let seq = derive_sets(&graph);
        let locals = compute_local_estimates(&data, &graph, &seq).unwrap();
        let mut log = MessageLog::new();
        let k = assemble_concentration(&locals, &graph, &mut log).unwrap();
        let report = marginal_consistency(&k, &locals);
        assert!(
            report.max_abs_diff < 1e-10,
            "max diff {}",
            report.max_abs_diff
        );
    }

    #[test]
    fn corrupted_matrix_flagged() {
        let graph = build_graph(3, &[vec![0, 1], vec![1, 2]]).unwrap();
        let locals = vec![
            LocalEstimate {
                clique: 0,
                s_local: DMatrix::identity(2, 2),
                k_local: DMatrix::identity(2, 2),
                s_sep: None,
                k_sep: None,
            },
            LocalEstimate {
                clique: 1,
                s_local: DMatrix::identity(2, 2),
                k_local: DMatrix::identity(2, 2),
                s_sep: Some(DMatrix::identity(1, 1)),
                k_sep: Some(DMatrix::identity(1, 1)),
            },
        ];
        let mut log = MessageLog::new();
        let k = assemble_concentration(&locals, &graph, &mut log).unwrap();
        let mut dense = k.dense();
        dense[(0, 0)] += 0.5;
        dense[(0, 1)] += 0.01;
        dense[(1, 0)] += 0.01;
        let corrupted = BlockSparseConcentration::from_dense(&graph, &dense).unwrap();
        let report = marginal_consistency(&corrupted, &locals);
        assert!(report.max_abs_diff > 1e-3);
    }

    #[test]
    fn sparsity_exact_zeros() {
        let graph = build_graph(4, &[vec![0, 1], vec![1, 2], vec![2, 3]]).unwrap();
        let seq = derive_sets(&graph);
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let data = SampleSet::new(DMatrix::from_fn(30, 4, |_, _| rng.random::<f64>() - 0.5))
            .unwrap();
        let locals = compute_local_estimates(&data, &graph, &seq).unwrap();
        let mut log = MessageLog::new();
        let k = assemble_concentration(&locals, &graph, &mut log).unwrap();
        let dense = k.dense();
        for i in 0..4 {
            for j in 0..4 {
                if !graph.in_pattern(i, j) {
                    assert_eq!(dense[(i, j)], 0.0, "entry ({i},{j}) must be exactly zero");
                }
            }
        }
        // symmetry is exact: shared entries are stored once and replicated
        assert_eq!((dense.clone() - dense.transpose()).amax(), 0.0);
    }
}
