//! Estimation of the cluster-to-label transition matrix.
//!
//! Given per-observation cluster posteriors and expert residual densities,
//! the negative log-likelihood is convex in the transition matrix. It is
//! minimized by exponentiated gradient: multiplicative updates that keep
//! every column on the probability simplex. Updates are computed in log
//! space, so constant per-column factors cancel in the normalization and
//! large gradients cannot overflow.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pairwise_combine, pairwise_sum};

/// Column-stochastic matrix: entry `(k, j)` is the probability of label `k`
/// given cluster `j`; every column sums to one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pi: Array2<f64>,
}

impl TransitionMatrix {
    /// Validates nonnegativity and unit column sums (tolerance 1e-9).
    pub fn new(pi: Array2<f64>) -> Result<Self> {
        if pi.nrows() != pi.ncols() || pi.nrows() == 0 {
            return Err(Error::DimensionMismatch(
                "transition matrix must be square and nonempty".into(),
            ));
        }
        if pi.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "transition matrix entries must be finite and nonnegative".into(),
            ));
        }
        for j in 0..pi.ncols() {
            let s = pi.column(j).sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "transition column {j} sums to {s}, not 1"
                )));
            }
        }
        Ok(TransitionMatrix { pi })
    }

    pub fn identity(k: usize) -> Self {
        TransitionMatrix {
            pi: Array2::eye(k),
        }
    }

    pub fn uniform(k: usize) -> Self {
        TransitionMatrix {
            pi: Array2::from_elem((k, k), 1.0 / k as f64),
        }
    }

    /// Diagonal entries `rho`, off-diagonal `(1 - rho) / (k - 1)`.
    pub fn diagonal_heavy(k: usize, rho: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::InvalidConfig(format!(
                "diagonal weight must lie in [0, 1], got {rho}"
            )));
        }
        if k == 1 {
            return Ok(TransitionMatrix::identity(1));
        }
        let off = (1.0 - rho) / (k - 1) as f64;
        let pi = Array2::from_shape_fn((k, k), |(i, j)| if i == j { rho } else { off });
        Ok(TransitionMatrix { pi })
    }

    pub fn dim(&self) -> usize {
        self.pi.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.pi
    }

    /// Probability of label `k` given cluster `j`.
    pub fn prob(&self, k: usize, j: usize) -> f64 {
        self.pi[[k, j]]
    }

    /// Pushes a cluster-posterior vector through the transition: the label
    /// distribution `sum_j pi[k, j] * posterior[j]`.
    pub fn apply(&self, posterior: &ArrayView1<f64>) -> Array1<f64> {
        self.pi.dot(posterior)
    }
}

/// The data of the transition-estimation problem.
#[derive(Debug, Clone)]
pub struct EgProblem {
    /// Row `i`: posterior cluster probabilities of observation `i`.
    pub cluster_post: Array2<f64>,
    /// Entry `(i, k)`: density of observation `i`'s residual under expert `k`.
    pub expert_dens: Array2<f64>,
}

impl EgProblem {
    pub fn new(cluster_post: Array2<f64>, expert_dens: Array2<f64>) -> Result<Self> {
        if cluster_post.dim() != expert_dens.dim() {
            return Err(Error::DimensionMismatch(format!(
                "cluster posteriors are {:?} but expert densities are {:?}",
                cluster_post.dim(),
                expert_dens.dim()
            )));
        }
        for (i, row) in cluster_post.rows().into_iter().enumerate() {
            let s = row.sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "cluster posterior row {i} sums to {s}, not 1"
                )));
            }
        }
        if expert_dens.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::NonFinite("expert densities"));
        }
        Ok(EgProblem {
            cluster_post,
            expert_dens,
        })
    }

    pub fn len(&self) -> usize {
        self.cluster_post.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn k(&self) -> usize {
        self.cluster_post.ncols()
    }
}

/// Settings for [`fit_transition`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EgConfig {
    /// Base step size; the gradient is scaled by `1/n` before stepping so
    /// this is sample-size independent.
    pub step: f64,
    pub max_iter: usize,
    /// Absolute objective-change stopping threshold. `None` derives
    /// `1e-9 * n`.
    pub tol: Option<f64>,
    pub init: EgInit,
    /// Tiny positive floor applied to per-observation mixture densities
    /// before taking logs; only affects observations whose density would
    /// otherwise be exactly zero.
    pub density_floor: f64,
    /// Record every iterate (for diagnostics/tests).
    pub record_iterates: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EgInit {
    Uniform,
    /// Diagonal `rho`, off-diagonal `(1 - rho) / (K - 1)`; encodes that a
    /// cluster most likely keeps its own label.
    DiagonalHeavy { rho: f64 },
}

impl Default for EgConfig {
    fn default() -> Self {
        EgConfig {
            step: 0.5,
            max_iter: 2000,
            tol: None,
            init: EgInit::DiagonalHeavy { rho: 0.7 },
            density_floor: 1e-300,
            record_iterates: false,
        }
    }
}

impl EgConfig {
    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) {
            return Err(Error::InvalidConfig("eg: step must be positive".into()));
        }
        if !(self.density_floor > 0.0) {
            return Err(Error::InvalidConfig(
                "eg: density_floor must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Result of [`fit_transition`].
#[derive(Debug, Clone)]
pub struct EgOutcome {
    pub transition: TransitionMatrix,
    /// Objective value at the initial point and after every accepted update;
    /// non-increasing by construction.
    pub objective_trace: Vec<f64>,
    /// Every accepted iterate, when requested via `record_iterates`.
    pub iterates: Vec<Array2<f64>>,
}

const CHUNK: usize = 512;

/// Per-observation mixture density `D_i = sum_{k,j} pi[k,j] post[i,j] dens[i,k]`,
/// floored at `density_floor`.
fn denominators(prob: &EgProblem, pi: &ArrayView2<f64>, density_floor: f64) -> Array1<f64> {
    // D_i = dens_row_i . (Pi post_row_i); computed as row sums of
    // (dens  *  post Pi^T).
    let mixed = prob.cluster_post.dot(&pi.t());
    let mut d = Array1::zeros(prob.len());
    for i in 0..prob.len() {
        let mut s = 0.0;
        for k in 0..prob.k() {
            s += prob.expert_dens[[i, k]] * mixed[[i, k]];
        }
        d[i] = s.max(density_floor);
    }
    d
}

/// Negative log-likelihood of the transition matrix on the problem data.
pub fn eg_objective(prob: &EgProblem, pi: &TransitionMatrix, density_floor: f64) -> f64 {
    let d = denominators(prob, &pi.matrix().view(), density_floor);
    let logs: Vec<f64> = d.iter().map(|&v| v.ln()).collect();
    -pairwise_sum(&logs)
}

/// Gradient of [`eg_objective`]: entry `(k, j)` is
/// `-sum_i post[i, j] dens[i, k] / D_i`.
pub fn eg_gradient(prob: &EgProblem, pi: &TransitionMatrix, density_floor: f64) -> Array2<f64> {
    let n = prob.len();
    let k = prob.k();
    let d = denominators(prob, &pi.matrix().view(), density_floor);
    let n_chunks = n.div_ceil(CHUNK);
    let partials: Vec<Array2<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = ((c + 1) * CHUNK).min(n);
            let mut g = Array2::<f64>::zeros((k, k));
            for i in lo..hi {
                let w = 1.0 / d[i];
                for a in 0..k {
                    let da = prob.expert_dens[[i, a]] * w;
                    if da == 0.0 {
                        continue;
                    }
                    for b in 0..k {
                        g[[a, b]] -= da * prob.cluster_post[[i, b]];
                    }
                }
            }
            g
        })
        .collect();
    pairwise_combine(partials, |a, b| a + b).unwrap_or_else(|| Array2::zeros((k, k)))
}

fn init_log_matrix(init: EgInit, k: usize) -> Result<Array2<f64>> {
    let m = match init {
        EgInit::Uniform => TransitionMatrix::uniform(k),
        EgInit::DiagonalHeavy { rho } => TransitionMatrix::diagonal_heavy(k, rho)?,
    };
    Ok(m.matrix().mapv(|v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY }))
}

/// Normalizes each column of a log-domain matrix to the simplex and returns
/// the linear-domain matrix alongside.
fn normalize_columns(log_pi: &mut Array2<f64>) -> Array2<f64> {
    let k = log_pi.nrows();
    let mut pi = Array2::<f64>::zeros((k, k));
    for j in 0..k {
        let col_max = log_pi.column(j).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !col_max.is_finite() {
            // A fully collapsed column; reset it to uniform.
            for i in 0..k {
                log_pi[[i, j]] = -(k as f64).ln();
                pi[[i, j]] = 1.0 / k as f64;
            }
            continue;
        }
        let mut total = 0.0;
        for i in 0..k {
            total += (log_pi[[i, j]] - col_max).exp();
        }
        let log_total = col_max + total.ln();
        for i in 0..k {
            log_pi[[i, j]] -= log_total;
            pi[[i, j]] = log_pi[[i, j]].exp();
        }
    }
    pi
}

/// Minimizes the negative log-likelihood over column-stochastic matrices by
/// exponentiated gradient with objective-based backtracking: the step is
/// halved whenever an update would increase the objective and restored to the
/// configured value after five consecutive accepted steps.
pub fn fit_transition(prob: &EgProblem, cfg: &EgConfig) -> Result<EgOutcome> {
    cfg.validate()?;
    let n = prob.len();
    let k = prob.k();
    if n == 0 {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    let tol = cfg.tol.unwrap_or(1e-9 * n as f64);

    let mut log_pi = init_log_matrix(cfg.init, k)?;
    let mut pi = normalize_columns(&mut log_pi);
    let mut obj = eg_objective(
        prob,
        &TransitionMatrix { pi: pi.clone() },
        cfg.density_floor,
    );
    let mut trace = vec![obj];
    let mut iterates = Vec::new();
    if cfg.record_iterates {
        iterates.push(pi.clone());
    }

    let mut step = cfg.step;
    let mut streak = 0usize;
    for _ in 0..cfg.max_iter {
        let grad = eg_gradient(
            prob,
            &TransitionMatrix { pi: pi.clone() },
            cfg.density_floor,
        )
        .mapv(|g| g / n as f64);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("exponentiated-gradient step"));
        }
        // Backtracking on the objective: shrink the step until the update
        // does not increase it. As step -> 0 the candidate tends to the
        // current point, so this terminates.
        let (cand_log, cand_pi, cand_obj) = loop {
            let mut cand_log = &log_pi - &grad.mapv(|g| g * step);
            let cand_pi = normalize_columns(&mut cand_log);
            let cand_obj = eg_objective(
                prob,
                &TransitionMatrix {
                    pi: cand_pi.clone(),
                },
                cfg.density_floor,
            );
            if cand_obj <= obj || step < 1e-280 {
                break (cand_log, cand_pi, cand_obj);
            }
            step *= 0.5;
            streak = 0;
        };
        let delta = obj - cand_obj;
        log_pi = cand_log;
        pi = cand_pi;
        obj = cand_obj.min(obj);
        trace.push(obj);
        if cfg.record_iterates {
            iterates.push(pi.clone());
        }
        streak += 1;
        if streak >= 5 {
            step = cfg.step;
            streak = 0;
        }
        if delta.abs() < tol {
            break;
        }
    }

    Ok(EgOutcome {
        transition: TransitionMatrix { pi },
        objective_trace: trace,
        iterates,
    })
}
