//! Principal-subspace workflows built on the eigensolver: residual-norm
//! anomaly scoring and sliding-window tracking of the extreme eigenvalue.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::eigensolver::{self, Bracket, EigenPair, IterationRecord};
use crate::error::{Error, Result};
use crate::estimation::{fit_concentration, SampleSet};
use crate::graph::DecomposableGraph;
use crate::message::MessageLog;

/// Bracketing tolerance used when fitting subspace models.
const SPECTRUM_TOL: f64 = 1e-9;

/// The `j` leading principal components of a decomposable model: the `j`
/// smallest eigenpairs of the ML concentration, which are the `j` largest of
/// the covariance.
pub struct SubspaceModel {
    graph: DecomposableGraph,
    eigenpairs: Vec<EigenPair>,
    n: usize,
}

impl SubspaceModel {
    pub fn graph(&self) -> &DecomposableGraph {
        &self.graph
    }

    pub fn eigenpairs(&self) -> &[EigenPair] {
        &self.eigenpairs
    }

    pub fn j(&self) -> usize {
        self.eigenpairs.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `p x j` matrix of principal directions.
    pub fn basis(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.graph.p(), self.j(), |i, c| {
            self.eigenpairs[c].vector[i]
        })
    }
}

/// Fit the ML concentration on `data` and extract its `j` smallest
/// eigenpairs. Requires enough samples for every clique-local covariance to
/// be invertible.
pub fn fit_model(data: &SampleSet, graph: &DecomposableGraph, j: usize) -> Result<SubspaceModel> {
    if data.n() < graph.max_clique_size() {
        return Err(Error::InvalidArgument(format!(
            "need at least {} samples for the largest clique, got {}",
            graph.max_clique_size(),
            data.n()
        )));
    }
    let k_mat = fit_concentration(data, graph)?;
    let mut log = MessageLog::new();
    let eigenpairs = eigensolver::spectrum(&k_mat, j, SPECTRUM_TOL, &mut log)?;
    Ok(SubspaceModel {
        graph: graph.clone(),
        eigenpairs,
        n: data.n(),
    })
}

/// Per-sample residual norms `||x - V V^T x||`.
#[derive(Debug, Clone)]
pub struct ResidualSeries {
    pub norms: Vec<f64>,
}

/// Project each sample onto the orthogonal complement of the principal
/// subspace and record the norm.
pub fn residual_norms(model: &SubspaceModel, data: &SampleSet) -> Result<ResidualSeries> {
    if data.p() != model.graph.p() {
        return Err(Error::DimensionMismatch {
            expected: model.graph.p(),
            got: data.p(),
        });
    }
    let v = model.basis();
    let norms = (0..data.n())
        .map(|i| {
            let x = DVector::from_vec(data.row(i));
            let proj = &v * (v.transpose() * &x);
            (x - proj).norm()
        })
        .collect();
    Ok(ResidualSeries { norms })
}

/// Residual norms against plain dense PCA of the unconstrained sample
/// covariance (oracle/report comparison).
pub fn dense_pca_residuals(data: &SampleSet, j: usize) -> Vec<f64> {
    let s = crate::estimation::local_moments(data.matrix());
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    let v = DMatrix::from_fn(data.p(), j, |i, c| eig.eigenvectors[(i, order[c])]);
    (0..data.n())
        .map(|i| {
            let x = DVector::from_vec(data.row(i));
            let proj = &v * (v.transpose() * &x);
            (x - proj).norm()
        })
        .collect()
}

/// Flagging rule for [`detect`].
#[derive(Debug, Clone, Copy)]
pub enum DetectRule {
    /// Flag norms strictly above this value.
    Threshold(f64),
    /// Flag norms strictly above the series' own empirical quantile.
    Quantile(f64),
}

/// Indices whose residual norm exceeds the rule's threshold.
pub fn detect(series: &ResidualSeries, rule: DetectRule) -> Result<Vec<usize>> {
    let cut = match rule {
        DetectRule::Threshold(t) => {
            if !(t > 0.0) {
                return Err(Error::InvalidArgument("threshold must be positive".into()));
            }
            t
        }
        DetectRule::Quantile(q) => {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::InvalidArgument("quantile must be in (0,1)".into()));
            }
            quantile(&series.norms, q)
        }
    };
    Ok(series
        .norms
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > cut)
        .map(|(i, _)| i)
        .collect())
}

/// Empirical quantile as the order statistic at `ceil(q*n) - 1`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite residuals"));
    let idx = ((q * sorted.len() as f64).ceil() as usize).saturating_sub(1);
    sorted[idx.min(sorted.len() - 1)]
}

/// One sliding-window tracking record.
#[derive(Debug, Clone)]
pub struct WindowRecord {
    pub start: usize,
    pub lambda: f64,
    pub bracket_width: f64,
    pub iterations: usize,
    pub warm: bool,
    pub message_bytes: usize,
    pub history: Vec<IterationRecord>,
}

/// Sliding-window eigenvalue trace.
#[derive(Debug, Clone)]
pub struct TrackingTrace {
    pub windows: Vec<WindowRecord>,
}

/// Warm-start bracket for one tracking window: centered on the previous
/// estimate, clipped from above by the certified cold upper bound, keeping
/// the full `2 * margin` width (and with it a fixed iteration count). Probing
/// above `cold_upper` is never useful: the bound already certifies the
/// eigenvalue lies below it.
pub fn warm_bracket(prev: f64, margin: f64, cold_upper: f64, eps: f64) -> Result<Bracket> {
    let upper = (prev + margin).min(cold_upper);
    Bracket::new(upper - 2.0 * margin, upper, eps)
}

/// Track the minimal eigenvalue of the per-window ML concentration.
///
/// Windows advance by `window - overlap` samples; each window is fully refit.
/// The first window uses the cold bracket `[0, upper_bound]`; later windows
/// warm-start from the previous estimate with the given margin, falling back
/// to the cold bracket when the warm bracket fails to straddle.
pub fn track(
    data: &SampleSet,
    graph: &DecomposableGraph,
    window: usize,
    overlap: usize,
    eps: f64,
    warm_margin: f64,
) -> Result<TrackingTrace> {
    if window == 0 || window > data.n() {
        return Err(Error::InvalidArgument(format!(
            "window {} outside stream length {}",
            window,
            data.n()
        )));
    }
    if overlap >= window {
        return Err(Error::InvalidArgument(format!(
            "overlap {overlap} must be smaller than window {window}"
        )));
    }
    let step = window - overlap;
    let mut windows = Vec::new();
    let mut prev_lambda: Option<f64> = None;
    let mut start = 0usize;
    while start + window <= data.n() {
        let chunk = data.window(start, window)?;
        let k_mat = fit_concentration(&chunk, graph)?;
        let mut log = MessageLog::new();
        let cold = Bracket::new(0.0, eigensolver::upper_bound(&k_mat), eps)?;
        let (bisection, warm) = match prev_lambda {
            Some(prev) => {
                let bracket = warm_bracket(prev, warm_margin, cold.upper, eps)?;
                match eigensolver::bisect_min_eig(&k_mat, bracket, None, &mut log) {
                    Ok(b) => (b, true),
                    Err(Error::BadBracket { .. }) => (
                        eigensolver::bisect_min_eig(&k_mat, cold, None, &mut log)?,
                        false,
                    ),
                    Err(e) => return Err(e),
                }
            }
            None => (
                eigensolver::bisect_min_eig(&k_mat, cold, None, &mut log)?,
                false,
            ),
        };
        let lambda = bisection.midpoint();
        windows.push(WindowRecord {
            start,
            lambda,
            bracket_width: bisection.width(),
            iterations: bisection.iterations,
            warm,
            message_bytes: log.total_bytes(),
            history: bisection.history,
        });
        prev_lambda = Some(lambda);
        start += step;
    }
    Ok(TrackingTrace { windows })
}
