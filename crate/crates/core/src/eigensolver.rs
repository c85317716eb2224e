//! Distributed minimal-eigenvalue computation on block-sparse concentration
//! matrices.
//!
//! The global test `t < eig_min(K)` decouples, along the elimination order,
//! into per-clique eigenvalue tests plus separator-sized Schur-complement
//! messages
//!
//! ```text
//! M_k(t) = Q_{S_k,R_k} (Q_{R_k,R_k} - t I)^-1 Q_{R_k,S_k}
//! ```
//!
//! subtracted into the separator block of the parent clique. Bisection over
//! `t` then brackets `eig_min(K)` to any tolerance. Higher-order eigenpairs
//! come from the same sweep applied to `K + U D U^T`: the low-rank deflation
//! term rides along as an extra factor whose rank never grows past the number
//! of deflated components, so each message is at most `|S_k| + j - 1` wide.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimation::BlockSparseConcentration;
use crate::linalg;
use crate::message::{MessageLog, Phase};

/// Bisection bracket `[lower, upper]` with absolute tolerance.
#[derive(Debug, Clone, Copy)]
pub struct Bracket {
    pub lower: f64,
    pub upper: f64,
    pub tol: f64,
}

impl Bracket {
    pub fn new(lower: f64, upper: f64, tol: f64) -> Result<Self> {
        if !(lower <= upper) || !(tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "bad bracket [{lower}, {upper}] with tol {tol}"
            )));
        }
        Ok(Bracket { lower, upper, tol })
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Previously found eigenvectors with positive diagonal weights. Adding
/// `U D U^T` shifts the found eigenvalues up so the next one becomes minimal.
#[derive(Debug, Clone)]
pub struct DeflationSet {
    u: DMatrix<f64>,
    d: DVector<f64>,
}

impl DeflationSet {
    /// Validates unit norms, pairwise orthogonality (1e-8) and positive
    /// weights.
    pub fn new(u: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        if u.ncols() != d.len() {
            return Err(Error::DimensionMismatch {
                expected: u.ncols(),
                got: d.len(),
            });
        }
        for i in 0..u.ncols() {
            if (u.column(i).norm() - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidArgument(format!(
                    "deflation column {i} is not unit norm"
                )));
            }
            for j in (i + 1)..u.ncols() {
                if u.column(i).dot(&u.column(j)).abs() > 1e-8 {
                    return Err(Error::InvalidArgument(format!(
                        "deflation columns {i} and {j} are not orthogonal"
                    )));
                }
            }
        }
        if d.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidArgument(
                "deflation weights must be positive".into(),
            ));
        }
        Ok(DeflationSet { u, d })
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    /// Dense `U D U^T`, oracle/report use only.
    pub fn dense_term(&self, p: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(p, p);
        for c in 0..self.u.ncols() {
            let col = self.u.column(c);
            for i in 0..p {
                for j in 0..p {
                    out[(i, j)] += self.d[c] * col[i] * col[j];
                }
            }
        }
        out
    }
}

/// Result of one feasibility check of `t < eig_min(K + U D U^T)`.
#[derive(Debug, Clone)]
pub struct FeasibilityVerdict {
    pub feasible: bool,
    /// Clique whose local test failed, when infeasible. Order-dependent: an
    /// infeasible `t` is certified by the first failing clique along the
    /// elimination sweep.
    pub failing_clique: Option<usize>,
    /// Payload dimensions of the messages exchanged during the sweep.
    pub message_dims: Vec<usize>,
}

/// Eigenvalue/eigenvector pair with the final bracket width.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub lambda: f64,
    pub vector: DVector<f64>,
    pub bracket_width: f64,
    pub iterations: usize,
}

/// One bisection iteration: the probed midpoint and its verdict.
#[derive(Debug, Clone, Copy)]
pub struct IterationRecord {
    pub t: f64,
    pub feasible: bool,
}

/// Outcome of `bisect_min_eig`: a terminal interval containing the (deflated)
/// minimal eigenvalue.
#[derive(Debug, Clone)]
pub struct Bisection {
    pub lower: f64,
    pub upper: f64,
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
}

impl Bisection {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Smallest eigenvalue of a dense symmetric matrix (the local EVD primitive
/// every clique runs).
pub fn local_min_eig(a: &DMatrix<f64>) -> Result<f64> {
    linalg::sym_eig_min(a)
}

/// `U = min_k eig_min(K_{C_k,C_k})`: an upper bound on `eig_min(K)` (the
/// minimal eigenvalue of a symmetric matrix never exceeds that of a principal
/// submatrix).
pub fn upper_bound(k_mat: &BlockSparseConcentration) -> f64 {
    (0..k_mat.graph().num_cliques())
        .map(|k| linalg::sym_eig_min(k_mat.clique_block(k)).expect("clique blocks are symmetric"))
        .fold(f64::INFINITY, f64::min)
}

/// Upper bound for the deflated matrix `K + U D U^T`, from its clique-diagonal
/// blocks.
pub fn deflated_upper_bound(k_mat: &BlockSparseConcentration, defl: &DeflationSet) -> f64 {
    (0..k_mat.graph().num_cliques())
        .map(|k| {
            let clique = k_mat.graph().clique(k);
            let mut block = k_mat.clique_block(k).clone();
            for c in 0..defl.rank() {
                let w = defl.d[c];
                for (bi, &gi) in clique.iter().enumerate() {
                    for (bj, &gj) in clique.iter().enumerate() {
                        block[(bi, bj)] += w * defl.u[(gi, c)] * defl.u[(gj, c)];
                    }
                }
            }
            linalg::sym_eig_min(&block).expect("deflated clique blocks are symmetric")
        })
        .fold(f64::INFINITY, f64::min)
}

/// Gershgorin bound on the largest eigenvalue, `max_i sum_j |K_ij|`, computed
/// from clique blocks. Each pattern entry is counted once: the clique blocks
/// minus the separator sub-blocks cover the pattern with multiplicity one.
pub fn gershgorin_max(k_mat: &BlockSparseConcentration) -> f64 {
    let graph = k_mat.graph();
    let seq = k_mat.seq();
    let mut row_sums = vec![0.0f64; graph.p()];
    for k in 0..graph.num_cliques() {
        let clique = graph.clique(k);
        let block = k_mat.clique_block(k);
        for (bi, &gi) in clique.iter().enumerate() {
            for bj in 0..clique.len() {
                row_sums[gi] += block[(bi, bj)].abs();
            }
        }
        if k > 0 {
            let spos = &seq.sep_pos[k];
            for &si in spos {
                for &sj in spos {
                    row_sums[clique[si]] -= block[(si, sj)].abs();
                }
            }
        }
    }
    row_sums.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

// ---------------------------------------------------------------------------
// Sweep state
// ---------------------------------------------------------------------------

/// Per-clique mutable state for one elimination sweep. Each clique holds its
/// immutable base block `K_{C_k,C_k}` plus additive corrections received from
/// its children; the deflation factor is carried as base rows of `U` plus
/// accumulated row corrections and a shared `r x r` core.
pub(crate) struct SweepState<'a> {
    k_mat: &'a BlockSparseConcentration,
    pub deltas: Vec<DMatrix<f64>>,
    pub u_base: Vec<DMatrix<f64>>,
    pub u_delta: Vec<DMatrix<f64>>,
    pub core: DMatrix<f64>,
    pub rank: usize,
}

impl<'a> SweepState<'a> {
    pub fn new(k_mat: &'a BlockSparseConcentration, defl: Option<&DeflationSet>) -> Self {
        let rank = defl.map_or(0, DeflationSet::rank);
        let graph = k_mat.graph();
        let deltas = (0..graph.num_cliques())
            .map(|k| DMatrix::zeros(graph.clique(k).len(), graph.clique(k).len()))
            .collect();
        let u_base: Vec<DMatrix<f64>> = (0..graph.num_cliques())
            .map(|k| {
                let clique = graph.clique(k);
                DMatrix::from_fn(clique.len(), rank, |i, c| match defl {
                    Some(d) => d.u[(clique[i], c)],
                    None => 0.0,
                })
            })
            .collect();
        let u_delta = (0..graph.num_cliques())
            .map(|k| DMatrix::zeros(graph.clique(k).len(), rank))
            .collect();
        let core = match defl {
            Some(d) => DMatrix::from_fn(rank, rank, |i, j| if i == j { d.d[i] } else { 0.0 }),
            None => DMatrix::zeros(0, 0),
        };
        SweepState {
            k_mat,
            deltas,
            u_base,
            u_delta,
            core,
            rank,
        }
    }

    /// Effective deflation rows of clique `k` at the given local positions.
    fn u_rows(&self, k: usize, pos: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(pos.len(), self.rank, |i, c| {
            self.u_base[k][(pos[i], c)] + self.u_delta[k][(pos[i], c)]
        })
    }

    /// `base + delta + U C U^T` over the given local positions of clique `k`.
    pub fn corrected_block(&self, k: usize, pos: &[usize]) -> DMatrix<f64> {
        let base = self.k_mat.clique_block(k);
        let mut out = DMatrix::from_fn(pos.len(), pos.len(), |i, j| {
            base[(pos[i], pos[j])] + self.deltas[k][(pos[i], pos[j])]
        });
        if self.rank > 0 {
            let u = self.u_rows(k, pos);
            let ucu = &u * &self.core * u.transpose();
            out += ucu;
            linalg::symmetrize(&mut out);
        }
        out
    }

    /// Coupling `[K + delta]_{rows, cols}` inside clique `k` (the base matrix
    /// part only; deflation coupling is handled through the factor).
    fn coupling(&self, k: usize, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        let base = self.k_mat.clique_block(k);
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
            base[(rows[i], cols[j])] + self.deltas[k][(rows[i], cols[j])]
        })
    }

    /// Deliver a message payload into the parent clique's state.
    pub fn apply_message(&mut self, parent: usize, ppos: &[usize], msg: &SweepMessage) {
        for (a, &pa) in ppos.iter().enumerate() {
            for (b, &pb) in ppos.iter().enumerate() {
                self.deltas[parent][(pa, pb)] += msg.block_correction[(a, b)];
            }
        }
        if self.rank > 0 {
            for (a, &pa) in ppos.iter().enumerate() {
                for c in 0..self.rank {
                    self.u_delta[parent][(pa, c)] += msg.row_correction[(a, c)];
                }
            }
            self.core = msg.core.clone();
        }
    }
}

/// Separator-sized payload sent from a clique to its parent during a sweep.
/// Logical dimension is `|S_k| + rank`.
pub(crate) struct SweepMessage {
    /// Additive correction to the parent's `S_k x S_k` sub-block.
    pub block_correction: DMatrix<f64>,
    /// Additive correction to the parent's deflation rows on `S_k`.
    pub row_correction: DMatrix<f64>,
    /// Updated shared core.
    pub core: DMatrix<f64>,
}

impl SweepMessage {
    pub fn dim(&self) -> usize {
        self.block_correction.nrows() + self.core.nrows()
    }
}

/// Shifted residual block factor: Cholesky on the feasible path, LU when the
/// local test already failed (the block is indefinite but the Schur algebra,
/// by inertia additivity, stays exact).
enum StepFactor {
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl StepFactor {
    fn solve(&self, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        match self {
            StepFactor::Chol(c) => Some(c.solve(rhs)),
            StepFactor::Lu(lu) => lu.solve(rhs),
        }
    }
}

/// Outcome of one clique's elimination step at shift `t`: whether the local
/// eigenvalue test passed, and the outgoing message. The message is absent
/// only when the shifted block is exactly singular (then the verdict is
/// already infeasible and the sweep cannot continue).
pub(crate) struct StepOutcome {
    pub passed: bool,
    pub msg: Option<SweepMessage>,
}

/// One clique's elimination step at shift `t`: test the corrected residual
/// block, then build the outgoing message (Schur complement plus any
/// corrections being forwarded toward the root). The message is built even
/// when the local test fails so every sweep round has the same communication
/// footprint.
pub(crate) fn feasibility_step(state: &SweepState<'_>, k: usize, t: f64) -> StepOutcome {
    let seq = state.k_mat.seq();
    let rpos = &seq.res_pos[k];
    let spos = &seq.sep_pos[k];

    let rblk = state.corrected_block(k, rpos);
    let emin = linalg::sym_eig_min(&rblk).expect("residual block is symmetric");
    let passed = t < emin;
    let mut shifted = rblk;
    for i in 0..shifted.nrows() {
        shifted[(i, i)] -= t;
    }
    let factor = if passed {
        match shifted.clone().cholesky() {
            Some(c) => StepFactor::Chol(c),
            // eig_min > t but the factorization hit the boundary: fall back
            // to LU and report the test as failed; bisection absorbs the
            // ambiguity.
            None => return step_outcome_lu(state, k, &shifted, false),
        }
    } else {
        return step_outcome_lu(state, k, &shifted, false);
    };
    StepOutcome {
        passed,
        msg: build_message(state, k, spos, rpos, &factor),
    }
}

fn step_outcome_lu(
    state: &SweepState<'_>,
    k: usize,
    shifted: &DMatrix<f64>,
    passed: bool,
) -> StepOutcome {
    let seq = state.k_mat.seq();
    let factor = StepFactor::Lu(shifted.clone().lu());
    StepOutcome {
        passed,
        msg: build_message(state, k, &seq.sep_pos[k], &seq.res_pos[k], &factor),
    }
}

fn build_message(
    state: &SweepState<'_>,
    k: usize,
    spos: &[usize],
    rpos: &[usize],
    factor: &StepFactor,
) -> Option<SweepMessage> {
    let coupling = state.coupling(k, spos, rpos);
    let z1 = factor.solve(&coupling.transpose())?;
    let mut m11 = &coupling * &z1;
    linalg::symmetrize(&mut m11);

    if state.rank == 0 {
        return Some(SweepMessage {
            block_correction: forward_block(state, k, spos, -m11),
            row_correction: DMatrix::zeros(spos.len(), 0),
            core: DMatrix::zeros(0, 0),
        });
    }

    let u_r = state.u_rows(k, rpos);
    let b_r = &u_r * &state.core;
    let z2 = factor.solve(&b_r)?;
    let m12 = &coupling * &z2;
    let mut m22 = b_r.transpose() * &z2;
    linalg::symmetrize(&mut m22);

    let mut core_next = &state.core - &m22;
    linalg::symmetrize(&mut core_next);

    // Absorb the separator-indicator columns of the enlarged factor back into
    // the dense pattern: with C - M22 invertible this congruence keeps the
    // carried rank at exactly the deflation rank.
    let y = -solve_transposed(&core_next, &m12);
    let mut x = -&m11 + &y * m12.transpose();
    linalg::symmetrize(&mut x);

    Some(SweepMessage {
        block_correction: forward_block(state, k, spos, x),
        row_correction: forward_rows(state, k, spos, y),
        core: core_next,
    })
}

/// Solve `Y * core = rhs` for `Y` (core symmetric, generically invertible;
/// a vanishing pivot gets a tiny diagonal nudge, the bisection tolerance
/// absorbs the perturbation).
fn solve_transposed(core: &DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    let lu = core.clone().full_piv_lu();
    if let Some(sol) = lu.solve(&rhs.transpose()) {
        return sol.transpose()
    }
    let scale = core.amax().max(1.0);
    let mut nudged = core.clone();
    for i in 0..nudged.nrows() {
        nudged[(i, i)] += 1e-14 * scale;
    }
    nudged
        .full_piv_lu()
        .solve(&rhs.transpose())
        .expect("nudged core is invertible")
        .transpose()
}

/// New correction plus everything this clique is forwarding on its separator.
fn forward_block(
    state: &SweepState<'_>,
    k: usize,
    spos: &[usize],
    fresh: DMatrix<f64>,
) -> DMatrix<f64> {
    let mut out = fresh;
    for (a, &sa) in spos.iter().enumerate() {
        for (b, &sb) in spos.iter().enumerate() {
            out[(a, b)] += state.deltas[k][(sa, sb)];
        }
    }
    out
}

fn forward_rows(
    state: &SweepState<'_>,
    k: usize,
    spos: &[usize],
    fresh: DMatrix<f64>,
) -> DMatrix<f64> {
    let mut out = fresh;
    for (a, &sa) in spos.iter().enumerate() {
        for c in 0..state.rank {
            out[(a, c)] += state.u_delta[k][(sa, c)];
        }
    }
    out
}

/// Distributed feasibility check of `t < eig_min(K + U D U^T)`.
///
/// Sweeps cliques `K..2` in reverse elimination order; the first failing
/// local test certifies infeasibility, otherwise the corrected first clique
/// decides. The sweep completes its message round even after a failed test
/// (valid by inertia additivity of the Schur recursion), so every round has
/// one separator-sized message per non-root clique; the reported failing
/// clique is still the first failure in sweep order.
pub fn feasibility_sweep(
    k_mat: &BlockSparseConcentration,
    t: f64,
    defl: Option<&DeflationSet>,
    log: &mut MessageLog,
    phase: Phase,
) -> FeasibilityVerdict {
    let mut state = SweepState::new(k_mat, defl);
    let seq = k_mat.seq();
    let kk = k_mat.graph().num_cliques();
    let mut dims = Vec::new();

    let mut first_failure: Option<usize> = None;
    for k in (1..kk).rev() {
        let outcome = feasibility_step(&state, k, t);
        if !outcome.passed && first_failure.is_none() {
            first_failure = Some(k);
        }
        match outcome.msg {
            Some(msg) => {
                let parent = seq.parent[k];
                let dim = msg.dim();
                log.push(k, parent, dim, dim, phase);
                dims.push(dim);
                let ppos = seq.sep_pos_in_parent[k].clone();
                state.apply_message(parent, &ppos, &msg);
            }
            // exactly singular shifted block: infeasible and unable to
            // continue the round
            None => {
                return FeasibilityVerdict {
                    feasible: false,
                    failing_clique: first_failure.or(Some(k)),
                    message_dims: dims,
                };
            }
        }
    }

    let root_pos: Vec<usize> = (0..k_mat.graph().clique(0).len()).collect();
    let root = state.corrected_block(0, &root_pos);
    let emin = linalg::sym_eig_min(&root).expect("root block is symmetric");
    let feasible = first_failure.is_none() && t < emin;
    FeasibilityVerdict {
        feasible,
        failing_clique: if feasible {
            None
        } else {
            first_failure.or(Some(0))
        },
        message_dims: dims,
    }
}

/// Bisection line search for the (deflated) minimal eigenvalue.
///
/// Requires a straddling bracket: `lower` strictly feasible, `upper`
/// infeasible. Terminates when `upper - lower <= tol`, after at most
/// `ceil(log2(width / tol))` iterations.
pub fn bisect_min_eig(
    k_mat: &BlockSparseConcentration,
    bracket: Bracket,
    defl: Option<&DeflationSet>,
    log: &mut MessageLog,
) -> Result<Bisection> {
    let check_low = feasibility_sweep(k_mat, bracket.lower, defl, log, Phase::BracketCheck);
    let check_high = feasibility_sweep(k_mat, bracket.upper, defl, log, Phase::BracketCheck);
    if !check_low.feasible || check_high.feasible {
        return Err(Error::BadBracket {
            lower: bracket.lower,
            upper: bracket.upper,
        });
    }

    let mut lower = bracket.lower;
    let mut upper = bracket.upper;
    let mut history = Vec::new();
    let mut iterations = 0usize;
    while upper - lower > bracket.tol {
        let t = 0.5 * (upper + lower);
        let verdict = feasibility_sweep(
            k_mat,
            t,
            defl,
            log,
            Phase::Feasibility {
                iteration: iterations,
            },
        );
        if verdict.feasible {
            lower = t;
        } else {
            upper = t;
        }
        history.push(IterationRecord {
            t,
            feasible: verdict.feasible,
        });
        iterations += 1;
    }

    Ok(Bisection {
        lower,
        upper,
        iterations,
        history,
    })
}

// ---------------------------------------------------------------------------
// Eigenvector recovery
// ---------------------------------------------------------------------------

struct LevelSnapshot {
    /// LU factor of the corrected, shifted residual block.
    factor: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    /// Base coupling `[Q]_{S_k,R_k}` at the time of elimination.
    coupling: DMatrix<f64>,
    /// `U_R * C` at the time of elimination.
    gain: DMatrix<f64>,
    /// `U_R` rows at the time of elimination.
    u_rows: DMatrix<f64>,
    /// This level's own row mutation on `S_k` (for the deflation recurrence).
    mutation: DMatrix<f64>,
}

/// Where a recovery pass takes its local null vector.
#[derive(Clone, Copy)]
enum StopRule {
    /// Stop at the first residual block whose smallest absolute eigenvalue
    /// falls below the numerical threshold (scaled by the given factor),
    /// else at the first clique.
    Threshold(f64),
    /// Stop at a fixed level (0 = the first clique).
    Forced(usize),
}

/// Eigenvector of the (deflated) matrix at eigenvalue `lambda`, via the
/// elimination sweep on `Q = K + U D U^T - lambda I`.
///
/// Descends while residual blocks stay nonsingular, takes a local null vector
/// at the first singular block (or at the first clique), then back-substitutes
/// upward. Indices below a mid-sweep singular block get zeros. Unit norm, with
/// the first nonzero component positive.
///
/// A candidate only counts when its global residual passes; after the strict
/// threshold and one 100x escalation, a probe pass locates the most nearly
/// singular level (needed when `lambda` carries bisection error larger than
/// the strict threshold). If nothing passes, `lambda` is not an eigenvalue at
/// the working tolerance.
pub fn eigvec(
    k_mat: &BlockSparseConcentration,
    lambda: f64,
    defl: Option<&DeflationSet>,
    log: &mut MessageLog,
) -> Result<DVector<f64>> {
    let res_tol = 1e-6 * k_mat.max_abs().max(1.0);
    let attempt = |rule: StopRule,
                       diag: Option<&mut Vec<(usize, f64)>>,
                       log: &mut MessageLog|
     -> Option<DVector<f64>> {
        let mut pass_log = MessageLog::new();
        let u = eigvec_pass(k_mat, lambda, defl, rule, &mut pass_log, diag)?;
        if eig_residual(k_mat, lambda, defl, &u) <= res_tol {
            log.records.append(&mut pass_log.records);
            Some(u)
        } else {
            None
        }
    };

    for scale in [1.0, 100.0] {
        if let Some(u) = attempt(StopRule::Threshold(scale), None, log) {
            return Ok(u);
        }
    }
    // Probe: descend all the way, recording how singular every level is.
    let mut diag: Vec<(usize, f64)> = Vec::new();
    if let Some(u) = attempt(StopRule::Forced(0), Some(&mut diag), log) {
        return Ok(u);
    }
    let best = diag
        .iter()
        .filter(|(level, _)| *level > 0)
        .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite diagnostics"))
        .map(|(level, _)| *level);
    if let Some(level) = best {
        if let Some(u) = attempt(StopRule::Forced(level), None, log) {
            return Ok(u);
        }
    }
    Err(Error::NoNullVector { lambda })
}

/// `|| (K + U D U^T) u - lambda u ||` (dense; validation only).
pub fn eig_residual(
    k_mat: &BlockSparseConcentration,
    lambda: f64,
    defl: Option<&DeflationSet>,
    u: &DVector<f64>,
) -> f64 {
    let mut r = k_mat.dense() * u;
    if let Some(d) = defl {
        let proj = d.u.transpose() * u;
        for c in 0..d.rank() {
            r += d.u.column(c) * (d.d[c] * proj[c]);
        }
    }
    r -= u * lambda;
    r.norm()
}

fn eigvec_pass(
    k_mat: &BlockSparseConcentration,
    lambda: f64,
    defl: Option<&DeflationSet>,
    rule: StopRule,
    log: &mut MessageLog,
    mut diag: Option<&mut Vec<(usize, f64)>>,
) -> Option<DVector<f64>> {
    let mut state = SweepState::new(k_mat, defl);
    let seq = k_mat.seq().clone();
    let graph = k_mat.graph().clone();
    let kk = graph.num_cliques();
    let rank = state.rank;

    let mut snapshots: Vec<Option<LevelSnapshot>> = (0..kk).map(|_| None).collect();
    let mut u = DVector::zeros(graph.p());
    let mut stop_level = 0usize;
    let mut init_w = DVector::zeros(rank);

    // Downward: eliminate residual blocks while nonsingular.
    let mut found_singular = false;
    for k in (1..kk).rev() {
        let rpos = &seq.res_pos[k];
        let spos = &seq.sep_pos[k];
        let unshifted = state.corrected_block(k, rpos);
        let block_scale = unshifted.amax().max(lambda.abs()).max(f64::MIN_POSITIVE);
        let mut shifted = unshifted;
        for i in 0..shifted.nrows() {
            shifted[(i, i)] -= lambda;
        }
        let (min_eig, null_vec) = linalg::sym_min_abs_eigpair(&shifted);
        if let Some(d) = diag.as_deref_mut() {
            d.push((k, min_eig.abs() / block_scale));
        }
        let singular_here = match rule {
            StopRule::Threshold(scale) => {
                min_eig.abs() <= null_tolerance(block_scale, shifted.nrows(), scale)
            }
            StopRule::Forced(level) => k == level,
        };
        if singular_here {
            // lambda is associated with this residual; everything below it
            // is zero.
            for (i, &g) in seq.residual[k].iter().enumerate() {
                u[g] = null_vec[i];
            }
            if rank > 0 {
                let u_r = DMatrix::from_fn(rpos.len(), rank, |i, c| {
                    state.u_base[k][(rpos[i], c)] + state.u_delta[k][(rpos[i], c)]
                });
                init_w = u_r.transpose() * &null_vec;
            }
            stop_level = k;
            found_singular = true;
            break;
        }

        let u_rows = DMatrix::from_fn(rpos.len(), rank, |i, c| {
            state.u_base[k][(rpos[i], c)] + state.u_delta[k][(rpos[i], c)]
        });
        let coupling = {
            let base = k_mat.clique_block(k);
            DMatrix::from_fn(spos.len(), rpos.len(), |i, j| {
                base[(spos[i], rpos[j])] + state.deltas[k][(spos[i], rpos[j])]
            })
        };
        let factor = shifted.clone().lu();

        // Schur message at shift lambda (LU-based; the block may be
        // indefinite for higher-order eigenvalues).
        let z1 = factor.solve(&coupling.transpose())?;
        let mut m11 = &coupling * &z1;
        linalg::symmetrize(&mut m11);

        let (msg, gain, mutation) = if rank == 0 {
            (
                SweepMessage {
                    block_correction: forward_block(&state, k, spos, -m11),
                    row_correction: DMatrix::zeros(spos.len(), 0),
                    core: DMatrix::zeros(0, 0),
                },
                DMatrix::zeros(rpos.len(), 0),
                DMatrix::zeros(spos.len(), 0),
            )
        } else {
            let gain = &u_rows * &state.core;
            let z2 = factor.solve(&gain)?;
            let m12 = &coupling * &z2;
            let mut m22 = gain.transpose() * &z2;
            linalg::symmetrize(&mut m22);
            let mut core_next = &state.core - &m22;
            linalg::symmetrize(&mut core_next);
            let y = -solve_transposed(&core_next, &m12);
            let mut x = -&m11 + &y * m12.transpose();
            linalg::symmetrize(&mut x);
            (
                SweepMessage {
                    block_correction: forward_block(&state, k, spos, x),
                    row_correction: forward_rows(&state, k, spos, y.clone()),
                    core: core_next,
                },
                gain,
                y,
            )
        };

        let parent = seq.parent[k];
        let dim = msg.dim();
        log.push(k, parent, dim, dim, Phase::EigvecDown);
        let ppos = seq.sep_pos_in_parent[k].clone();
        state.apply_message(parent, &ppos, &msg);
        snapshots[k] = Some(LevelSnapshot {
            factor,
            coupling,
            gain,
            u_rows,
            mutation,
        });
    }

    if !found_singular {
        // Take the local null vector at the first clique unconditionally;
        // the caller's residual check is the arbiter.
        let root_pos: Vec<usize> = (0..graph.clique(0).len()).collect();
        let mut root = state.corrected_block(0, &root_pos);
        for i in 0..root.nrows() {
            root[(i, i)] -= lambda;
        }
        let (_, null_vec) = linalg::sym_min_abs_eigpair(&root);
        for (i, &g) in graph.clique(0).iter().enumerate() {
            u[g] = null_vec[i];
        }
        if rank > 0 {
            let u_c1 = DMatrix::from_fn(root_pos.len(), rank, |i, c| {
                state.u_base[0][(root_pos[i], c)] + state.u_delta[0][(root_pos[i], c)]
            });
            init_w = u_c1.transpose() * &null_vec;
        }
        stop_level = 0;
    }

    // Upward: back-substitute the residuals above the stop level.
    let mut w = init_w;
    for k in (stop_level + 1)..kk {
        let snap = snapshots[k].as_ref()?;
        let u_s = DVector::from_fn(seq.separator[k].len(), |i, _| u[seq.separator[k][i]]);
        if rank > 0 {
            w -= snap.mutation.transpose() * &u_s;
        }
        let mut rhs = snap.coupling.transpose() * &u_s;
        if rank > 0 {
            rhs += &snap.gain * &w;
        }
        let sol = snap.factor.solve(&rhs)?;
        for (i, &g) in seq.residual[k].iter().enumerate() {
            u[g] = -sol[i];
        }
        if rank > 0 {
            let u_r = DVector::from_fn(seq.residual[k].len(), |i, _| u[seq.residual[k][i]]);
            w += snap.u_rows.transpose() * &u_r;
        }
        log.push(
            seq.parent[k],
            k,
            seq.separator[k].len() + rank,
            1,
            Phase::EigvecUp,
        );
    }

    let norm = u.norm();
    if norm == 0.0 {
        return None;
    }
    u /= norm;
    if let Some(first) = u.iter().find(|v| **v != 0.0) {
        if *first < 0.0 {
            u = -u;
        }
    }
    Some(u)
}

/// Numerical singularity threshold for a residual block of the given entry
/// scale and dimension.
fn null_tolerance(block_scale: f64, dim: usize, scale: f64) -> f64 {
    1e3 * f64::EPSILON * block_scale * dim as f64 * scale
}

// ---------------------------------------------------------------------------
// Spectrum via deflation
// ---------------------------------------------------------------------------

/// The `j_max` smallest eigenpairs of `K`, each bracketed to `tol`.
///
/// Component `i` is found on `K + U D U^T` deflated by components `1..i-1`
/// with weights `D_ii = gershgorin_max(K) + 1 > lambda_max(K)`: every
/// deflated eigenvalue lands strictly above the whole spectrum, so the
/// minimal eigenvalue of the deflated matrix is exactly the next component
/// and its null space stays clear of the deflated directions.
pub fn spectrum(
    k_mat: &BlockSparseConcentration,
    j_max: usize,
    tol: f64,
    log: &mut MessageLog,
) -> Result<Vec<EigenPair>> {
    let p = k_mat.p();
    if j_max > p {
        return Err(Error::InvalidArgument(format!(
            "requested {j_max} components of a {p}-dimensional matrix"
        )));
    }
    let weight = gershgorin_max(k_mat) + 1.0;
    let mut pairs: Vec<EigenPair> = Vec::with_capacity(j_max);

    for _ in 0..j_max {
        let defl = if pairs.is_empty() {
            None
        } else {
            // Re-orthonormalize: vectors found at a coarse tolerance are only
            // approximately orthogonal, and the deflation shift depends on
            // their span.
            let u = DMatrix::from_fn(p, pairs.len(), |i, c| pairs[c].vector[i]);
            let q = u.qr().q();
            let d = DVector::from_element(pairs.len(), weight);
            Some(DeflationSet::new(q, d)?)
        };
        let ub = match &defl {
            Some(d) => deflated_upper_bound(k_mat, d),
            None => upper_bound(k_mat),
        };
        // Nudge the endpoint upward: `ub` can coincide with the eigenvalue
        // itself (the minimizing eigenvector living inside one clique), where
        // rounding could flip the strict endpoint check.
        let upper = ub + 1e-6 * (ub.abs() + 1.0);
        let bracket = Bracket::new(0.0, upper, tol)?;
        let bis = bisect_min_eig(k_mat, bracket, defl.as_ref(), log)?;
        let lambda = bis.midpoint();
        let vector = eigvec(k_mat, lambda, defl.as_ref(), log)?;
        pairs.push(EigenPair {
            lambda,
            vector,
            bracket_width: bis.width(),
            iterations: bis.iterations,
        });
    }
    Ok(pairs)
}
