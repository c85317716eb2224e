//! Seeded synthetic models: ground-truth concentrations, Gaussian sampling,
//! deflation sets for randomized checks, and the reference graphs used by the
//! presets.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::eigensolver::DeflationSet;
use crate::error::{Error, Result};
use crate::estimation::{fit_concentration, BlockSparseConcentration, SampleSet};
use crate::graph::{build_graph, DecomposableGraph};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n x p` matrix of independent standard normal draws.
pub fn standard_normal_matrix(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
}

/// Random positive definite concentration with the exact sparsity of `graph`,
/// built by fitting the graphical ML estimate to white-noise samples. Using
/// `4p` samples keeps every clique block well conditioned.
pub fn random_concentration(
    graph: &DecomposableGraph,
    rng: &mut ChaCha8Rng,
) -> Result<BlockSparseConcentration> {
    let p = graph.p();
    let data = SampleSet::new(standard_normal_matrix(4 * p, p, rng))?;
    fit_concentration(&data, graph)
}

/// Draw `n` samples from `N(0, K^-1)`: with `K = L L^T`, solve `L^T x = z`
/// for standard normal `z`.
pub fn sample_gaussian(
    k_mat: &BlockSparseConcentration,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SampleSet> {
    let p = k_mat.p();
    let chol = k_mat
        .dense()
        .cholesky()
        .ok_or(Error::InvalidArgument("concentration not positive definite".into()))?;
    let l_t = chol.l().transpose();
    let mut data = DMatrix::zeros(n, p);
    for i in 0..n {
        let z: DVector<f64> = DVector::from_fn(p, |_, _| rng.sample(StandardNormal));
        let x = l_t
            .clone()
            .solve_upper_triangular(&z)
            .expect("Cholesky factor is nonsingular");
        for j in 0..p {
            data[(i, j)] = x[j];
        }
    }
    SampleSet::new(data)
}

/// Random `p x r` matrix with orthonormal columns (QR of a Gaussian matrix).
pub fn random_orthonormal(p: usize, r: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = standard_normal_matrix(p, r, rng);
    let qr = a.qr();
    qr.q()
}

/// Random deflation set: orthonormal directions with positive weights in
/// `[0.5, 5)`.
pub fn random_deflation(p: usize, r: usize, rng: &mut ChaCha8Rng) -> Result<DeflationSet> {
    let u = random_orthonormal(p, r, rng);
    let d = DVector::from_fn(r, |_, _| rng.random_range(0.5..5.0));
    DeflationSet::new(u, d)
}

/// Chain of equally sized cliques where consecutive cliques share `overlap`
/// nodes. `blocks = 3, size = 105, overlap = 5` gives the 305-node reference
/// topology.
pub fn clique_chain_graph(blocks: usize, size: usize, overlap: usize) -> Result<DecomposableGraph> {
    if blocks == 0 || size == 0 || overlap >= size {
        return Err(Error::InvalidArgument(format!(
            "bad chain shape: {blocks} blocks of {size} with overlap {overlap}"
        )));
    }
    let step = size - overlap;
    let cliques: Vec<Vec<usize>> = (0..blocks)
        .map(|b| (b * step..b * step + size).collect())
        .collect();
    let p = (blocks - 1) * step + size;
    build_graph(p, &cliques)
}

/// The 305-node tracking topology: three cliques of 105 nodes, consecutive
/// pairs coupled through 5 shared nodes.
pub fn tracking_graph() -> DecomposableGraph {
    clique_chain_graph(3, 105, 5).expect("reference topology is valid")
}

/// Add `amplitude * direction` to sample row `t` in place.
pub fn inject_spike(data: &mut DMatrix<f64>, t: usize, direction: &DVector<f64>, amplitude: f64) {
    for j in 0..data.ncols() {
        data[(t, j)] += amplitude * direction[j];
    }
}
