//! The composed noisy mixture-of-experts estimator.
//!
//! Fitting runs the full pipeline: cluster the covariates with a Gaussian
//! mixture, partition the labeled points by hard assignment, fit one trimmed
//! regression per cluster, estimate each expert's error scale on the retained
//! residuals, and estimate the cluster-to-label transition matrix from the
//! labeled likelihood. Prediction pushes the covariate's cluster posterior
//! through the transition matrix and mixes the expert means with the
//! resulting soft gate; hard assignment is never used for prediction.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{fit_gmm, GmmFitConfig, GmmModel};
use crate::lts::{
    estimate_error_params, lts_fit, reweight_fit, ErrorFamily, ErrorParams, LtsConfig,
};
use crate::rng::derive_seed;
use crate::stats::normal_pdf;
use crate::transition::{fit_transition, EgConfig, EgProblem, TransitionMatrix};

/// One expert: a linear mean plus an error distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpertModel {
    pub intercept: f64,
    pub coefficients: Array1<f64>,
    /// Error-distribution parameters; the family is the enum discriminant.
    pub theta: ErrorParams,
}

impl ExpertModel {
    pub fn mean(&self, x: &ArrayView1<f64>) -> f64 {
        self.intercept + x.dot(&self.coefficients)
    }

    pub fn sigma(&self) -> f64 {
        self.theta.sigma()
    }
}

/// Which covariates the mixture model is fit on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GmmPool {
    /// Labeled and unlabeled covariates pooled (the default).
    All,
    /// Unlabeled covariates only.
    UnlabeledOnly,
}

/// Per-fit bookkeeping: cluster occupancy and fallback events.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Labeled points assigned to each cluster.
    pub labeled_counts: Vec<usize>,
    /// Observations retained by the trimmed fit in each cluster.
    pub retained_counts: Vec<usize>,
    /// Clusters too thin to trim; fit by plain OLS instead.
    pub thin_clusters: Vec<usize>,
    /// Clusters with no labeled points; the expert copies the global OLS fit.
    pub empty_clusters: Vec<usize>,
    /// Experts whose error scale hit the relative floor.
    pub sigma_floored: Vec<usize>,
    pub eg_initial_objective: f64,
    pub eg_final_objective: f64,
    pub eg_iterations: usize,
}

/// The deployable noisy mixture-of-experts model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoisyMoeModel {
    pub gmm: GmmModel,
    pub experts: Vec<ExpertModel>,
    pub transition: TransitionMatrix,
    pub alpha_used: f64,
    pub diagnostics: FitDiagnostics,
}

impl NoisyMoeModel {
    pub fn k(&self) -> usize {
        self.experts.len()
    }

    pub fn dim(&self) -> usize {
        self.gmm.dim()
    }

    /// The gate: label probabilities given the covariates, computed as the
    /// transition matrix applied to the cluster posterior.
    pub fn gate(&self, x: &ArrayView1<f64>) -> Array1<f64> {
        self.transition.apply(&self.gmm.posterior(x).view())
    }

    /// Point prediction: gate-weighted mixture of expert means.
    pub fn predict(&self, x: &ArrayView1<f64>) -> f64 {
        let gate = self.gate(x);
        gate.iter()
            .zip(&self.experts)
            .map(|(g, e)| g * e.mean(x))
            .sum()
    }

    /// Predictions for every row of `x`.
    pub fn predict_batch(&self, x: &ArrayView2<f64>) -> Array1<f64> {
        let post = self.gmm.posterior_batch(x);
        let mut out = Array1::zeros(x.nrows());
        for (i, (row, p)) in x.rows().into_iter().zip(post.rows()).enumerate() {
            let gate = self.transition.apply(&p);
            out[i] = gate
                .iter()
                .zip(&self.experts)
                .map(|(g, e)| g * e.mean(&row))
                .sum();
        }
        out
    }

    /// Expert coefficients stacked as a `K x (p + 1)` matrix, intercept first.
    pub fn coefficient_matrix(&self) -> Array2<f64> {
        coefficient_matrix(&self.experts)
    }
}

pub(crate) fn coefficient_matrix(experts: &[ExpertModel]) -> Array2<f64> {
    let k = experts.len();
    let p = experts.first().map_or(0, |e| e.coefficients.len());
    Array2::from_shape_fn((k, p + 1), |(i, j)| {
        if j == 0 {
            experts[i].intercept
        } else {
            experts[i].coefficients[j - 1]
        }
    })
}

/// Settings for [`fit_noisy_moe`]. The `k`, `alpha`, and `seed` fields of the
/// nested stage configs are overwritten from the top-level values during the
/// fit so the stages cannot disagree.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoisyMoeConfig {
    pub k: usize,
    /// Retaining fraction handed to the trimmed expert fits.
    pub alpha: f64,
    pub seed: u64,
    pub gmm_pool: GmmPool,
    /// Refit each expert by OLS on the points the trimmed fit deems inliers
    /// (within 2.5 corrected standard deviations). Restores Gaussian
    /// efficiency lost to raw trimming while keeping its breakdown behavior.
    pub reweight: bool,
    pub gmm: GmmFitConfig,
    pub lts: LtsConfig,
    pub eg: EgConfig,
}

impl NoisyMoeConfig {
    pub fn new(k: usize) -> Self {
        NoisyMoeConfig {
            k,
            alpha: 0.5,
            seed: 0,
            gmm_pool: GmmPool::All,
            reweight: true,
            gmm: GmmFitConfig::default(),
            lts: LtsConfig::default(),
            eg: EgConfig::default(),
        }
    }
}

/// Relative floor applied to expert error scales so zero-noise clusters keep
/// a usable density.
const SIGMA_FLOOR_REL: f64 = 1e-8;
const REWEIGHT_CUTOFF: f64 = 2.5;

/// Fits the full pipeline, including the covariate mixture model.
pub fn fit_noisy_moe(
    labeled_x: &ArrayView2<f64>,
    labeled_y: &ArrayView1<f64>,
    unlabeled_x: &ArrayView2<f64>,
    cfg: &NoisyMoeConfig,
) -> Result<NoisyMoeModel> {
    if unlabeled_x.ncols() != labeled_x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "labeled covariates have {} columns, unlabeled have {}",
            labeled_x.ncols(),
            unlabeled_x.ncols()
        )));
    }
    let gmm_cfg = GmmFitConfig {
        k: cfg.k,
        seed: derive_seed(cfg.seed, 1),
        ..cfg.gmm.clone()
    };
    let gmm = match cfg.gmm_pool {
        GmmPool::All => {
            let mut pool = Array2::zeros((labeled_x.nrows() + unlabeled_x.nrows(), labeled_x.ncols()));
            pool.slice_mut(ndarray::s![..labeled_x.nrows(), ..])
                .assign(labeled_x);
            pool.slice_mut(ndarray::s![labeled_x.nrows().., ..])
                .assign(unlabeled_x);
            fit_gmm(&pool.view(), &gmm_cfg)?
        }
        GmmPool::UnlabeledOnly => fit_gmm(unlabeled_x, &gmm_cfg)?,
    };
    fit_noisy_moe_with_gmm(labeled_x, labeled_y, gmm, cfg)
}

/// Fits the supervised stages on top of an already-fit (or known) covariate
/// mixture. Simulation oracle mode injects the true mixture parameters here.
pub fn fit_noisy_moe_with_gmm(
    labeled_x: &ArrayView2<f64>,
    labeled_y: &ArrayView1<f64>,
    gmm: GmmModel,
    cfg: &NoisyMoeConfig,
) -> Result<NoisyMoeModel> {
    let n = labeled_x.nrows();
    let p = labeled_x.ncols();
    if labeled_y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} labeled rows but {} responses",
            labeled_y.len()
        )));
    }
    if n == 0 {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    if gmm.dim() != p {
        return Err(Error::DimensionMismatch(format!(
            "mixture is {}-dimensional but covariates have {p} columns",
            gmm.dim()
        )));
    }
    if gmm.k() != cfg.k {
        return Err(Error::DimensionMismatch(format!(
            "mixture has {} components but the fit was configured for {}",
            gmm.k(),
            cfg.k
        )));
    }
    let k = cfg.k;

    // Step 2: partition the labeled points by hard assignment.
    let assignments = gmm.assign_batch(labeled_x);
    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in assignments.iter().enumerate() {
        clusters[c].push(i);
    }

    let response_scale = {
        let mean = labeled_y.mean().unwrap_or(0.0);
        let var = labeled_y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if sd > 0.0 {
            sd
        } else {
            1.0
        }
    };
    let sigma_floor = SIGMA_FLOOR_REL * response_scale;

    // Global OLS fallback for empty clusters.
    let global = fit_cluster_ols(labeled_x, labeled_y, &(0..n).collect::<Vec<_>>())?;

    // Step 3: one trimmed fit per cluster, in parallel.
    let thin_threshold = 2 * (p + 2);
    let fitted: Vec<Result<ClusterExpert>> = (0..k)
        .into_par_iter()
        .map(|c| {
            fit_cluster_expert(
                labeled_x,
                labeled_y,
                &clusters[c],
                cfg,
                derive_seed(cfg.seed, 100 + c as u64),
                thin_threshold,
                &global,
            )
        })
        .collect();

    let mut experts = Vec::with_capacity(k);
    let mut diagnostics = FitDiagnostics {
        labeled_counts: clusters.iter().map(Vec::len).collect(),
        ..Default::default()
    };
    for (c, item) in fitted.into_iter().enumerate() {
        let mut item = item?;
        diagnostics.retained_counts.push(item.retained);
        match item.kind {
            ClusterFitKind::Trimmed => {}
            ClusterFitKind::Thin => diagnostics.thin_clusters.push(c),
            ClusterFitKind::Empty => diagnostics.empty_clusters.push(c),
        }
        if item.expert.sigma() < sigma_floor {
            item.expert.theta = ErrorParams::Gaussian { sigma: sigma_floor };
            diagnostics.sigma_floored.push(c);
        }
        experts.push(item.expert);
    }

    // Step 4: transition matrix from the labeled likelihood, reusing the
    // stage-1 mixture unchanged.
    let cluster_post = gmm.posterior_batch(labeled_x);
    let mut expert_dens = Array2::zeros((n, k));
    for (i, row) in labeled_x.rows().into_iter().enumerate() {
        for (c, e) in experts.iter().enumerate() {
            expert_dens[[i, c]] = normal_pdf(labeled_y[i] - e.mean(&row), e.sigma());
        }
    }
    let problem = EgProblem::new(cluster_post, expert_dens)?;
    let outcome = fit_transition(&problem, &cfg.eg)?;
    diagnostics.eg_initial_objective = outcome.objective_trace[0];
    diagnostics.eg_final_objective = *outcome.objective_trace.last().unwrap();
    diagnostics.eg_iterations = outcome.objective_trace.len() - 1;

    Ok(NoisyMoeModel {
        gmm,
        experts,
        transition: outcome.transition,
        alpha_used: cfg.alpha,
        diagnostics,
    })
}

enum ClusterFitKind {
    Trimmed,
    Thin,
    Empty,
}

struct ClusterExpert {
    expert: ExpertModel,
    retained: usize,
    kind: ClusterFitKind,
}

struct OlsExpert {
    intercept: f64,
    coefficients: Array1<f64>,
    sigma: f64,
}

fn fit_cluster_ols(
    x: &ArrayView2<f64>,
    y: &ArrayView1<f64>,
    idx: &[usize],
) -> Result<OlsExpert> {
    let p = x.ncols();
    let mut design = Array2::zeros((idx.len(), p + 1));
    let mut rhs = Array1::zeros(idx.len());
    for (row, &i) in idx.iter().enumerate() {
        design[[row, 0]] = 1.0;
        for j in 0..p {
            design[[row, j + 1]] = x[[i, j]];
        }
        rhs[row] = y[i];
    }
    let fit = crate::linalg::lstsq(&design.view(), &rhs.view())?;
    let intercept = fit.solution[0];
    let coefficients = fit.solution.slice(ndarray::s![1..]).to_owned();
    let mut ssr = 0.0;
    for &i in idx {
        let r = y[i] - intercept - x.row(i).dot(&coefficients);
        ssr += r * r;
    }
    Ok(OlsExpert {
        intercept,
        coefficients,
        sigma: (ssr / idx.len() as f64).sqrt(),
    })
}

fn fit_cluster_expert(
    x: &ArrayView2<f64>,
    y: &ArrayView1<f64>,
    idx: &[usize],
    cfg: &NoisyMoeConfig,
    seed: u64,
    thin_threshold: usize,
    global: &OlsExpert,
) -> Result<ClusterExpert> {
    if idx.is_empty() {
        return Ok(ClusterExpert {
            expert: ExpertModel {
                intercept: global.intercept,
                coefficients: global.coefficients.clone(),
                theta: ErrorParams::Gaussian {
                    sigma: global.sigma,
                },
            },
            retained: 0,
            kind: ClusterFitKind::Empty,
        });
    }
    let sub_x = select_rows(x, idx);
    let sub_y = Array1::from_shape_fn(idx.len(), |r| y[idx[r]]);

    if idx.len() < thin_threshold {
        let local = fit_cluster_ols(x, y, idx)?;
        return Ok(ClusterExpert {
            expert: ExpertModel {
                intercept: local.intercept,
                coefficients: local.coefficients,
                theta: ErrorParams::Gaussian { sigma: local.sigma },
            },
            retained: idx.len(),
            kind: ClusterFitKind::Thin,
        });
    }

    let lts_cfg = LtsConfig {
        alpha: cfg.alpha,
        seed,
        ..cfg.lts.clone()
    };
    let fit = lts_fit(&sub_x.view(), &sub_y.view(), &lts_cfg)?;
    let retained = fit.h;
    let expert = if cfg.reweight {
        let rw = reweight_fit(&sub_x.view(), &sub_y.view(), &fit, REWEIGHT_CUTOFF)?;
        ExpertModel {
            intercept: rw.beta0,
            coefficients: rw.beta,
            theta: ErrorParams::Gaussian { sigma: rw.sigma },
        }
    } else {
        let theta = estimate_error_params(&fit, &sub_x.view(), &sub_y.view(), ErrorFamily::Gaussian)?;
        ExpertModel {
            intercept: fit.beta0,
            coefficients: fit.beta,
            theta,
        }
    };
    Ok(ClusterExpert {
        expert,
        retained,
        kind: ClusterFitKind::Trimmed,
    })
}

fn select_rows(x: &ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    let p = x.ncols();
    Array2::from_shape_fn((idx.len(), p), |(r, j)| x[[idx[r], j]])
}

/// The empirical counterpart of the minimum dominant-label share: for each
/// cluster `j`, the fraction of points assigned to `j` whose supervised
/// label is also `j`; returns the minimum over clusters. Labels come from a
/// simulation, so this is a diagnostic for generated data only.
pub fn dominant_label_share_from_assignments(
    assignments: &[usize],
    labels: &[usize],
    k: usize,
) -> Result<f64> {
    if assignments.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} assignments but {} labels",
            assignments.len(),
            labels.len()
        )));
    }
    let mut totals = vec![0usize; k];
    let mut hits = vec![0usize; k];
    for (&a, &z) in assignments.iter().zip(labels) {
        if a >= k || z >= k {
            return Err(Error::DimensionMismatch(format!(
                "assignment or label out of range for k = {k}"
            )));
        }
        totals[a] += 1;
        if z == a {
            hits[a] += 1;
        }
    }
    let mut min_share = f64::INFINITY;
    for j in 0..k {
        if totals[j] == 0 {
            return Err(Error::EmptyCell { cluster: j });
        }
        min_share = min_share.min(hits[j] as f64 / totals[j] as f64);
    }
    Ok(min_share)
}

/// [`dominant_label_share_from_assignments`] with assignments produced by a
/// mixture model's hard assignment rule.
pub fn dominant_label_share(
    gmm: &GmmModel,
    x: &ArrayView2<f64>,
    labels: &[usize],
) -> Result<f64> {
    let assignments = gmm.assign_batch(x);
    dominant_label_share_from_assignments(&assignments, labels, gmm.k())
}
