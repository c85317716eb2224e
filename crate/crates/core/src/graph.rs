//! Decomposable graphs as ordered clique sequences.
//!
//! A graph is given by its clique sequence `C_1..C_K` in a perfect elimination
//! order. From it we derive, per clique, the history `H_k = C_1 ∪ … ∪ C_k`,
//! the separator `S_k = H_{k-1} ∩ C_k` and the residual `R_k = H_k \ H_{k-1}`.
//! These index sets drive every block operation in the other modules.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Index of a variable, in `[0, p)`.
pub type NodeId = usize;

/// A validated decomposable graph: `p` variables covered by an ordered clique
/// sequence satisfying the running intersection property.
///
/// Index sets are stored sorted ascending; all block extraction uses this
/// canonical order so distributed and centralized arithmetic agree
/// bit-for-bit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphSpec", into = "GraphSpec")]
pub struct DecomposableGraph {
    p: usize,
    cliques: Vec<Vec<NodeId>>,
}

/// On-disk schema: `{"p": int, "cliques": [[int,...],...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphSpec {
    pub p: usize,
    pub cliques: Vec<Vec<usize>>,
}

impl TryFrom<GraphSpec> for DecomposableGraph {
    type Error = Error;
    fn try_from(spec: GraphSpec) -> Result<Self> {
        build_graph(spec.p, &spec.cliques)
    }
}

impl From<DecomposableGraph> for GraphSpec {
    fn from(g: DecomposableGraph) -> Self {
        GraphSpec {
            p: g.p,
            cliques: g.cliques,
        }
    }
}

impl DecomposableGraph {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn num_cliques(&self) -> usize {
        self.cliques.len()
    }

    /// Clique `k` (0-based), sorted ascending.
    pub fn clique(&self, k: usize) -> &[NodeId] {
        &self.cliques[k]
    }

    pub fn cliques(&self) -> &[Vec<NodeId>] {
        &self.cliques
    }

    pub fn max_clique_size(&self) -> usize {
        self.cliques.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// True if `i` and `j` share at least one clique (the sparsity pattern of
    /// the concentration matrix).
    pub fn in_pattern(&self, i: NodeId, j: NodeId) -> bool {
        self.cliques
            .iter()
            .any(|c| c.binary_search(&i).is_ok() && c.binary_search(&j).is_ok())
    }
}

/// Validate and build a decomposable graph from a clique sequence.
///
/// Rejects uncovered nodes, containment between cliques, and orderings that
/// violate the running intersection property. Disconnected sequences (an
/// empty separator for some `k >= 2`) are rejected as well: the message
/// recursion assumes nonempty separators, so components must be run
/// separately.
pub fn build_graph(p: usize, cliques: &[Vec<NodeId>]) -> Result<DecomposableGraph> {
    if cliques.is_empty() {
        return Err(Error::InvalidArgument("no cliques given".into()));
    }
    let mut sorted: Vec<Vec<NodeId>> = Vec::with_capacity(cliques.len());
    for (k, c) in cliques.iter().enumerate() {
        if c.is_empty() {
            return Err(Error::EmptyClique(k));
        }
        let set: BTreeSet<NodeId> = c.iter().copied().collect();
        if let Some(&i) = set.iter().find(|&&i| i >= p) {
            return Err(Error::IndexOutOfRange {
                clique: k,
                index: i,
                p,
            });
        }
        sorted.push(set.into_iter().collect());
    }

    // Containment check (either direction).
    for a in 0..sorted.len() {
        for b in 0..sorted.len() {
            if a != b && is_subset(&sorted[a], &sorted[b]) {
                return Err(Error::RedundantClique { inner: a, outer: b });
            }
        }
    }

    // Coverage.
    let mut covered = vec![false; p];
    for c in &sorted {
        for &i in c {
            covered[i] = true;
        }
    }
    if let Some(i) = covered.iter().position(|&c| !c) {
        return Err(Error::UncoveredNode(i));
    }

    // Running intersection: S_k = H_{k-1} ∩ C_k must be nonempty and
    // contained in a single earlier clique.
    let mut history: BTreeSet<NodeId> = sorted[0].iter().copied().collect();
    for k in 1..sorted.len() {
        let sep: Vec<NodeId> = sorted[k]
            .iter()
            .copied()
            .filter(|i| history.contains(i))
            .collect();
        if sep.is_empty() {
            return Err(Error::NotPerfectOrder { k });
        }
        if !(0..k).any(|j| is_subset(&sep, &sorted[j])) {
            return Err(Error::NotPerfectOrder { k });
        }
        history.extend(sorted[k].iter().copied());
    }

    Ok(DecomposableGraph { p, cliques: sorted })
}

fn is_subset(a: &[NodeId], b: &[NodeId]) -> bool {
    a.iter().all(|i| b.binary_search(i).is_ok())
}

/// History/separator/residual sets for a clique sequence, together with the
/// position bookkeeping used for block extraction.
#[derive(Debug, Clone)]
pub struct CliqueSequence {
    /// `H_k`, sorted.
    pub history: Vec<Vec<NodeId>>,
    /// `S_k`, sorted. `separator[0]` is empty by convention.
    pub separator: Vec<Vec<NodeId>>,
    /// `R_k`, sorted. `residual[0] = C_1`.
    pub residual: Vec<Vec<NodeId>>,
    /// For `k >= 1`: the largest `j < k` with `S_k ⊆ C_j`. Messages from
    /// clique `k` are delivered there. `parent[0] = 0` is unused.
    pub parent: Vec<usize>,
    /// Positions of `S_k` within the sorted clique `C_k`.
    pub sep_pos: Vec<Vec<usize>>,
    /// Positions of `R_k` within the sorted clique `C_k`.
    pub res_pos: Vec<Vec<usize>>,
    /// Positions of `S_k` within the sorted parent clique.
    pub sep_pos_in_parent: Vec<Vec<usize>>,
}

/// Derive all `H_k`, `S_k`, `R_k` sets for a valid graph.
pub fn derive_sets(graph: &DecomposableGraph) -> CliqueSequence {
    let kk = graph.num_cliques();
    let mut history: Vec<Vec<NodeId>> = Vec::with_capacity(kk);
    let mut separator: Vec<Vec<NodeId>> = Vec::with_capacity(kk);
    let mut residual: Vec<Vec<NodeId>> = Vec::with_capacity(kk);
    let mut parent = vec![0usize; kk];

    let mut hist: BTreeSet<NodeId> = BTreeSet::new();
    for k in 0..kk {
        let clique = graph.clique(k);
        let sep: Vec<NodeId> = if k == 0 {
            Vec::new()
        } else {
            clique.iter().copied().filter(|i| hist.contains(i)).collect()
        };
        let res: Vec<NodeId> = clique
            .iter()
            .copied()
            .filter(|i| !hist.contains(i))
            .collect();
        hist.extend(clique.iter().copied());
        history.push(hist.iter().copied().collect());
        if k > 0 {
            parent[k] = (0..k)
                .rev()
                .find(|&j| is_subset(&sep, graph.clique(j)))
                .expect("validated graph has a containing clique for each separator");
        }
        separator.push(sep);
        residual.push(res);
    }

    let positions = |subset: &[NodeId], clique: &[NodeId]| -> Vec<usize> {
        subset
            .iter()
            .map(|i| clique.binary_search(i).expect("subset of clique"))
            .collect()
    };

    let mut sep_pos = Vec::with_capacity(kk);
    let mut res_pos = Vec::with_capacity(kk);
    let mut sep_pos_in_parent = Vec::with_capacity(kk);
    for k in 0..kk {
        sep_pos.push(positions(&separator[k], graph.clique(k)));
        res_pos.push(positions(&residual[k], graph.clique(k)));
        sep_pos_in_parent.push(if k == 0 {
            Vec::new()
        } else {
            positions(&separator[k], graph.clique(parent[k]))
        });
    }

    CliqueSequence {
        history,
        separator,
        residual,
        parent,
        sep_pos,
        res_pos,
        sep_pos_in_parent,
    }
}

/// Generate a random decomposable graph, deterministic per seed.
///
/// The output always passes `build_graph` validation: separators are drawn
/// from a single earlier clique and are strictly smaller than it.
pub fn random_decomposable(
    p: usize,
    num_cliques: usize,
    max_sep: usize,
    seed: u64,
) -> Result<DecomposableGraph> {
    let infeasible = Error::InfeasibleShape {
        p,
        cliques: num_cliques,
        max_sep,
    };
    if num_cliques == 0 || max_sep == 0 {
        return Err(infeasible);
    }
    // Clique 1 needs >= 2 nodes (so later separators can be proper subsets),
    // every later clique introduces >= 1 fresh node.
    if num_cliques > 1 && p < num_cliques + 1 {
        return Err(infeasible);
    }
    if num_cliques == 1 && p == 0 {
        return Err(infeasible);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Residual sizes: r_1 >= min(2, p), r_k >= 1, summing to p.
    let base_first = if num_cliques > 1 { 2 } else { 1.min(p) };
    let mut res_sizes = vec![1usize; num_cliques];
    res_sizes[0] = base_first;
    let mut extra = p - res_sizes.iter().sum::<usize>();
    while extra > 0 {
        let k = rng.random_range(0..num_cliques);
        res_sizes[k] += 1;
        extra -= 1;
    }

    let mut cliques: Vec<Vec<NodeId>> = Vec::with_capacity(num_cliques);
    let mut next_node = 0usize;
    for (k, &r) in res_sizes.iter().enumerate() {
        let fresh: Vec<NodeId> = (next_node..next_node + r).collect();
        next_node += r;
        if k == 0 {
            cliques.push(fresh);
            continue;
        }
        let j = rng.random_range(0..k);
        let parent = &cliques[j];
        let s_max = max_sep.min(parent.len() - 1);
        let s = rng.random_range(1..=s_max.max(1));
        let mut pool: Vec<NodeId> = parent.clone();
        pool.shuffle(&mut rng);
        let mut clique: Vec<NodeId> = pool.into_iter().take(s).collect();
        clique.extend(fresh);
        clique.sort_unstable();
        cliques.push(clique);
    }

    // Node labels are assigned in elimination order above; shuffle them so
    // generated instances do not all have contiguous cliques.
    let mut relabel: Vec<NodeId> = (0..p).collect();
    relabel.shuffle(&mut rng);
    for c in &mut cliques {
        for i in c.iter_mut() {
            *i = relabel[*i];
        }
        c.sort_unstable();
    }

    build_graph(p, &cliques)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_clique_chain_is_valid() {
        let g = build_graph(3, &[vec![0, 1], vec![1, 2]]).unwrap();
        let seq = derive_sets(&g);
        assert_eq!(seq.separator[1], vec![1]);
        assert_eq!(seq.residual[1], vec![2]);
        assert_eq!(seq.history[1], vec![0, 1, 2]);
    }

    #[test]
    fn single_clique_graph() {
        let g = build_graph(2, &[vec![0, 1]]).unwrap();
        assert_eq!(g.num_cliques(), 1);
        let seq = derive_sets(&g);
        assert!(seq.separator[0].is_empty());
        assert_eq!(seq.residual[0], vec![0, 1]);
    }

    #[test]
    fn named_two_clique_sets() {
        // cliques {a,c},{c,b} with a=0, c=1, b=2
        let g = build_graph(3, &[vec![0, 1], vec![1, 2]]).unwrap();
        let seq = derive_sets(&g);
        assert_eq!(seq.history[0], vec![0, 1]);
        assert_eq!(seq.history[1], vec![0, 1, 2]);
        assert_eq!(seq.separator[1], vec![1]);
        assert_eq!(seq.residual[1], vec![2]);
    }

    #[test]
    fn disjoint_cliques_rejected() {
        let err = build_graph(4, &[vec![0, 1], vec![2, 3]]).unwrap_err();
        assert!(matches!(err, Error::NotPerfectOrder { k: 1 }));
    }

    #[test]
    fn uncovered_node_rejected() {
        let err = build_graph(4, &[vec![0, 1], vec![1, 2]]).unwrap_err();
        assert!(matches!(err, Error::UncoveredNode(3)));
    }

    #[test]
    fn containment_rejected() {
        let err = build_graph(3, &[vec![0, 1, 2], vec![1, 2]]).unwrap_err();
        assert!(matches!(err, Error::RedundantClique { .. }));
    }

    #[test]
    fn bad_order_rejected() {
        // S_3 = {0, 4} is not inside any single earlier clique.
        let err = build_graph(
            5,
            &[vec![0, 1], vec![3, 4], vec![0, 2, 4]],
        );
        assert!(err.is_err());
    }

    #[test]
    fn three_clique_five_node_overlaps() {
        let c1: Vec<usize> = (0..105).collect();
        let c2: Vec<usize> = (100..205).collect();
        let c3: Vec<usize> = (200..305).collect();
        let g = build_graph(305, &[c1, c2, c3]).unwrap();
        let seq = derive_sets(&g);
        assert_eq!(seq.separator[1], (100..105).collect::<Vec<_>>());
        assert_eq!(seq.residual[1], (105..205).collect::<Vec<_>>());
        assert_eq!(seq.separator[2], (200..205).collect::<Vec<_>>());
        assert_eq!(seq.residual[2], (205..305).collect::<Vec<_>>());
    }

    #[test]
    fn partition_invariant_on_random_graphs() {
        for seed in 0..30 {
            let g = random_decomposable(50, 5, 3, seed).unwrap();
            let seq = derive_sets(&g);
            let mut seen = vec![0usize; g.p()];
            for k in 0..g.num_cliques() {
                for &i in &seq.residual[k] {
                    seen[i] += 1;
                }
            }
            assert!(seen.iter().all(|&c| c == 1), "R_k must partition [0,p)");
        }
    }

    #[test]
    fn random_graph_is_deterministic() {
        let a = random_decomposable(30, 4, 2, 42).unwrap();
        let b = random_decomposable(30, 4, 2, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn small_random_graph() {
        let g = random_decomposable(3, 2, 1, 7).unwrap();
        assert_eq!(g.num_cliques(), 2);
    }

    #[test]
    fn serde_round_trip() {
        let g = random_decomposable(20, 3, 2, 5).unwrap();
        let json = serde_json::to_string(&g).unwrap();
        let back: DecomposableGraph = serde_json::from_str(&json).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn infeasible_shape_rejected() {
        assert!(random_decomposable(3, 5, 2, 0).is_err());
        assert!(random_decomposable(10, 0, 2, 0).is_err());
    }
}
