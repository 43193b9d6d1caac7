//! Gaussian mixture modeling of the covariates.
//!
//! The mixture is fit by EM with k-means++ seeding and a small number of
//! restarts; the best restart by converged log-likelihood wins. Posterior
//! cluster probabilities are computed in log space (max-shifted) so they stay
//! normalized even when every component density underflows.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::kmeanspp_indices;
use crate::linalg::{cholesky, cholesky_log_det, cholesky_solve, pairwise_sum};
use crate::rng::stream_rng;
use crate::stats::LN_SQRT_2PI;

/// A fitted Gaussian mixture over covariates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmModel {
    /// Mixing weights, one per component; nonnegative, summing to one.
    pub weights: Array1<f64>,
    /// Component means, one row per component.
    pub means: Array2<f64>,
    /// Component covariance matrices.
    pub covariances: Vec<Array2<f64>>,
    /// Training log-likelihood at convergence; `None` for models built from
    /// known parameters rather than fit to data.
    pub log_likelihood: Option<f64>,
}

impl GmmModel {
    /// Builds a model from explicit parameters, checking the invariants.
    pub fn from_parameters(
        weights: Array1<f64>,
        means: Array2<f64>,
        covariances: Vec<Array2<f64>>,
    ) -> Result<Self> {
        let model = GmmModel {
            weights,
            means,
            covariances,
            log_likelihood: None,
        };
        model.check_invariants()?;
        Ok(model)
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// Validates weight normalization, covariance symmetry, and positive
    /// definiteness.
    pub fn check_invariants(&self) -> Result<()> {
        let k = self.k();
        if self.means.nrows() != k || self.covariances.len() != k {
            return Err(Error::DimensionMismatch(
                "weights, means, and covariances disagree on the component count".into(),
            ));
        }
        if self.weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidConfig("negative mixture weight".into()));
        }
        if (self.weights.sum() - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidConfig(format!(
                "mixture weights sum to {}, not 1",
                self.weights.sum()
            )));
        }
        let p = self.dim();
        for (idx, cov) in self.covariances.iter().enumerate() {
            if cov.nrows() != p || cov.ncols() != p {
                return Err(Error::DimensionMismatch(format!(
                    "covariance {idx} is not {p}x{p}"
                )));
            }
            for i in 0..p {
                for j in 0..i {
                    if (cov[[i, j]] - cov[[j, i]]).abs() > 1e-10 {
                        return Err(Error::InvalidConfig(format!(
                            "covariance {idx} is not symmetric"
                        )));
                    }
                }
            }
            if cholesky(&cov.view()).is_none() {
                return Err(Error::InvalidConfig(format!(
                    "covariance {idx} is not positive definite"
                )));
            }
        }
        Ok(())
    }

    fn caches(&self) -> Result<Vec<ComponentCache>> {
        (0..self.k())
            .map(|c| {
                ComponentCache::build(&self.means.row(c), &self.covariances[c], self.weights[c])
                    .ok_or(Error::DegenerateComponent { component: c })
            })
            .collect()
    }

    /// Posterior component probabilities for one covariate vector.
    ///
    /// Computed as softmax of `log weight + Gaussian log-density`; the
    /// max-shift keeps the result a valid probability vector even when all
    /// densities underflow in linear space.
    pub fn posterior(&self, x: &ArrayView1<f64>) -> Array1<f64> {
        let caches = self.caches().expect("model invariants violated");
        posterior_from_caches(&caches, x)
    }

    /// Posterior probabilities for every row of `x` (components as columns).
    pub fn posterior_batch(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let caches = self.caches().expect("model invariants violated");
        let mut out = Array2::zeros((x.nrows(), self.k()));
        for (i, row) in x.rows().into_iter().enumerate() {
            out.row_mut(i).assign(&posterior_from_caches(&caches, &row));
        }
        out
    }

    /// Hard assignment: the index of the largest posterior entry, ties broken
    /// by the lowest index.
    pub fn assign(&self, x: &ArrayView1<f64>) -> usize {
        argmax_first(&self.posterior(x))
    }

    /// Hard assignments for every row of `x`.
    pub fn assign_batch(&self, x: &ArrayView2<f64>) -> Vec<usize> {
        self.posterior_batch(x)
            .rows()
            .into_iter()
            .map(|r| argmax_first(&r.to_owned()))
            .collect()
    }
}

pub(crate) fn argmax_first(v: &Array1<f64>) -> usize {
    let mut best = 0;
    let mut best_v = v[0];
    for (i, &val) in v.iter().enumerate().skip(1) {
        if val > best_v {
            best_v = val;
            best = i;
        }
    }
    best
}

struct ComponentCache {
    mean: Array1<f64>,
    chol: Array2<f64>,
    log_weight: f64,
    log_norm: f64,
}

impl ComponentCache {
    fn build(mean: &ArrayView1<f64>, cov: &Array2<f64>, weight: f64) -> Option<Self> {
        let chol = cholesky(&cov.view())?;
        let p = mean.len() as f64;
        let log_norm = -0.5 * cholesky_log_det(&chol) - p * LN_SQRT_2PI;
        Some(ComponentCache {
            mean: mean.to_owned(),
            chol,
            log_weight: if weight > 0.0 {
                weight.ln()
            } else {
                f64::NEG_INFINITY
            },
            log_norm,
        })
    }

    fn log_density(&self, x: &ArrayView1<f64>) -> f64 {
        let diff = x.to_owned() - &self.mean;
        let solved = cholesky_solve(&self.chol, &diff.view());
        let maha: f64 = diff.iter().zip(solved.iter()).map(|(a, b)| a * b).sum();
        self.log_norm - 0.5 * maha
    }

    fn log_score(&self, x: &ArrayView1<f64>) -> f64 {
        self.log_weight + self.log_density(x)
    }
}

fn posterior_from_caches(caches: &[ComponentCache], x: &ArrayView1<f64>) -> Array1<f64> {
    let scores: Vec<f64> = caches.iter().map(|c| c.log_score(x)).collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = Array1::zeros(scores.len());
    if !m.is_finite() {
        // All components are impossible; fall back to uniform.
        out.fill(1.0 / scores.len() as f64);
        return out;
    }
    let mut total = 0.0;
    for (i, s) in scores.iter().enumerate() {
        let e = (s - m).exp();
        out[i] = e;
        total += e;
    }
    out.mapv_inplace(|v| v / total);
    out
}

/// Settings for [`fit_gmm`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmFitConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Relative log-likelihood change threshold for convergence.
    pub tol: f64,
    pub n_restarts: usize,
    /// Added to every covariance diagonal. `None` derives
    /// `1e-6 * mean diagonal of the global sample covariance`.
    pub cov_floor: Option<f64>,
    pub seed: u64,
}

impl Default for GmmFitConfig {
    fn default() -> Self {
        GmmFitConfig {
            k: 1,
            max_iter: 500,
            tol: 1e-8,
            n_restarts: 5,
            cov_floor: None,
            seed: 0,
        }
    }
}

impl GmmFitConfig {
    fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidConfig("gmm: k must be at least 1".into()));
        }
        if self.max_iter < 1 {
            return Err(Error::InvalidConfig("gmm: max_iter must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("gmm: tol must be positive".into()));
        }
        if let Some(f) = self.cov_floor {
            if f < 0.0 {
                return Err(Error::InvalidConfig("gmm: cov_floor must be >= 0".into()));
            }
        }
        if self.n_restarts < 1 {
            return Err(Error::InvalidConfig("gmm: need at least one restart".into()));
        }
        Ok(())
    }
}

/// Fits a Gaussian mixture by EM and returns the best restart.
pub fn fit_gmm(x: &ArrayView2<f64>, cfg: &GmmFitConfig) -> Result<GmmModel> {
    fit_gmm_with_trace(x, cfg).map(|(m, _)| m)
}

/// As [`fit_gmm`], also returning the winning restart's log-likelihood trace
/// (one entry per EM iteration, non-decreasing up to regularization slack).
pub fn fit_gmm_with_trace(x: &ArrayView2<f64>, cfg: &GmmFitConfig) -> Result<(GmmModel, Vec<f64>)> {
    cfg.validate()?;
    let n = x.nrows();
    let p = x.ncols();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gmm training data"));
    }
    let needed = cfg.k * (p + 1);
    if n < needed {
        return Err(Error::TooFewPoints { needed, got: n });
    }

    let global_mean = x.mean_axis(Axis(0)).unwrap();
    let global_cov = biased_covariance(x, &global_mean.view());
    let floor = cfg
        .cov_floor
        .unwrap_or_else(|| 1e-6 * global_cov.diag().mean().unwrap_or(0.0));

    let results: Vec<Result<(GmmModel, Vec<f64>)>> = (0..cfg.n_restarts)
        .into_par_iter()
        .map(|restart| em_single_restart(x, cfg, &global_cov, floor, restart as u64))
        .collect();

    let mut best: Option<(GmmModel, Vec<f64>)> = None;
    let mut first_err: Option<Error> = None;
    for r in results {
        match r {
            Ok((model, trace)) => {
                let ll = model.log_likelihood.unwrap_or(f64::NEG_INFINITY);
                let replace = match &best {
                    None => true,
                    Some((b, _)) => ll > b.log_likelihood.unwrap_or(f64::NEG_INFINITY),
                };
                if replace {
                    best = Some((model, trace));
                }
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    match best {
        Some(out) => Ok(out),
        None => Err(first_err.expect("at least one restart ran")),
    }
}

fn biased_covariance(x: &ArrayView2<f64>, mean: &ArrayView1<f64>) -> Array2<f64> {
    let n = x.nrows();
    let p = x.ncols();
    let mut cov = Array2::<f64>::zeros((p, p));
    for row in x.rows() {
        for i in 0..p {
            let di = row[i] - mean[i];
            for j in 0..=i {
                cov[[i, j]] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..p {
        for j in 0..=i {
            cov[[i, j]] /= n as f64;
            cov[[j, i]] = cov[[i, j]];
        }
    }
    cov
}

fn em_single_restart(
    x: &ArrayView2<f64>,
    cfg: &GmmFitConfig,
    global_cov: &Array2<f64>,
    floor: f64,
    restart: u64,
) -> Result<(GmmModel, Vec<f64>)> {
    let n = x.nrows();
    let p = x.ncols();
    let k = cfg.k;
    let mut rng = stream_rng(cfg.seed, restart);

    let mut init_cov = global_cov.clone();
    for i in 0..p {
        init_cov[[i, i]] += floor;
    }
    let seeds = kmeanspp_indices(x, k, &mut rng);
    let mut model = GmmModel {
        weights: Array1::from_elem(k, 1.0 / k as f64),
        means: {
            let mut m = Array2::zeros((k, p));
            for (c, &i) in seeds.iter().enumerate() {
                m.row_mut(c).assign(&x.row(i));
            }
            m
        },
        covariances: vec![init_cov.clone(); k],
        log_likelihood: None,
    };

    let mut reseeded = vec![false; k];
    let mut trace: Vec<f64> = Vec::new();
    let mut resp = Array2::<f64>::zeros((n, k));
    let mut prev_ll = f64::NEG_INFINITY;

    let mut iter = 0;
    while iter < cfg.max_iter {
        // Build per-component caches; a failed Cholesky means the component
        // collapsed and gets one chance to re-seed.
        let caches: Vec<Option<ComponentCache>> = (0..k)
            .map(|c| ComponentCache::build(&model.means.row(c), &model.covariances[c], model.weights[c]))
            .collect();
        if let Some(bad) = caches.iter().position(|c| c.is_none()) {
            reseed_component(&mut model, x, &caches, bad, &init_cov, &mut reseeded)?;
            continue;
        }
        let caches: Vec<ComponentCache> = caches.into_iter().map(|c| c.unwrap()).collect();

        // E-step.
        let mut row_lls = vec![0.0; n];
        for (i, row) in x.rows().into_iter().enumerate() {
            let scores: Vec<f64> = caches.iter().map(|c| c.log_score(&row)).collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (c, s) in scores.iter().enumerate() {
                let e = (s - m).exp();
                resp[[i, c]] = e;
                total += e;
            }
            for c in 0..k {
                resp[[i, c]] /= total;
            }
            row_lls[i] = m + total.ln();
        }
        let ll = pairwise_sum(&row_lls);
        trace.push(ll);

        // Degenerate component: vanishing responsibility mass.
        let masses: Vec<f64> = (0..k).map(|c| resp.column(c).sum()).collect();
        if let Some(bad) = masses.iter().position(|&m| m < 1e-8 * n as f64) {
            let caches_opt: Vec<Option<ComponentCache>> = caches.into_iter().map(Some).collect();
            reseed_component(&mut model, x, &caches_opt, bad, &init_cov, &mut reseeded)?;
            trace.pop();
            continue;
        }

        let converged = (ll - prev_ll).abs() < cfg.tol * ll.abs().max(1.0);
        prev_ll = ll;
        if converged {
            break;
        }

        // M-step.
        for c in 0..k {
            let nk = masses[c];
            model.weights[c] = nk / n as f64;
            let mut mean = Array1::<f64>::zeros(p);
            for (i, row) in x.rows().into_iter().enumerate() {
                let w = resp[[i, c]];
                for j in 0..p {
                    mean[j] += w * row[j];
                }
            }
            mean.mapv_inplace(|v| v / nk);
            let mut cov = Array2::<f64>::zeros((p, p));
            for (i, row) in x.rows().into_iter().enumerate() {
                let w = resp[[i, c]];
                for a in 0..p {
                    let da = row[a] - mean[a];
                    for b in 0..=a {
                        cov[[a, b]] += w * da * (row[b] - mean[b]);
                    }
                }
            }
            for a in 0..p {
                for b in 0..=a {
                    cov[[a, b]] /= nk;
                    cov[[b, a]] = cov[[a, b]];
                }
                cov[[a, a]] += floor;
            }
            model.means.row_mut(c).assign(&mean);
            model.covariances[c] = cov;
        }
        iter += 1;
    }

    model.log_likelihood = Some(prev_ll);
    Ok((model, trace))
}

/// Moves a collapsed component's mean to the point the current model explains
/// worst. Each component may be re-seeded once; a second collapse is an error.
fn reseed_component(
    model: &mut GmmModel,
    x: &ArrayView2<f64>,
    caches: &[Option<ComponentCache>],
    component: usize,
    init_cov: &Array2<f64>,
    reseeded: &mut [bool],
) -> Result<()> {
    if reseeded[component] {
        return Err(Error::DegenerateComponent { component });
    }
    reseeded[component] = true;
    let k = model.k();
    // Total log-density under the healthy components only.
    let mut worst_i = 0;
    let mut worst_ll = f64::INFINITY;
    for (i, row) in x.rows().into_iter().enumerate() {
        let scores: Vec<f64> = caches
            .iter()
            .flatten()
            .map(|c| c.log_score(&row))
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ll = if m.is_finite() {
            m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
        } else {
            f64::NEG_INFINITY
        };
        if ll < worst_ll {
            worst_ll = ll;
            worst_i = i;
        }
    }
    model.means.row_mut(component).assign(&x.row(worst_i));
    model.covariances[component] = init_cov.clone();
    model.weights[component] = 1.0 / k as f64;
    let total = model.weights.sum();
    model.weights.mapv_inplace(|w| w / total);
    Ok(())
}

/// One row of the BIC model-selection table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BicRow {
    pub k: usize,
    pub bic: Option<f64>,
    pub log_likelihood: Option<f64>,
    pub error: Option<String>,
}

/// BIC values over candidate component counts plus an elbow suggestion. The
/// full table is returned so the caller can overrule the suggestion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BicTable {
    pub rows: Vec<BicRow>,
    pub suggested_k: usize,
}

/// Fits each candidate `k` and scores it with `BIC = -2 ll + params ln(N)`
/// where `params = k-1 + k p + k p (p+1)/2`. The suggestion is the smallest
/// `k` whose relative BIC improvement over the next candidate falls below
/// `rel_threshold`; per-candidate fit failures are recorded, not fatal.
pub fn select_k_bic(
    x: &ArrayView2<f64>,
    k_candidates: &[usize],
    cfg: &GmmFitConfig,
    rel_threshold: f64,
) -> Result<BicTable> {
    if k_candidates.is_empty() {
        return Err(Error::InvalidConfig("BIC: no candidates".into()));
    }
    let mut cands: Vec<usize> = k_candidates.to_vec();
    cands.sort_unstable();
    cands.dedup();
    let n = x.nrows();
    let p = x.ncols();
    let rows: Vec<BicRow> = cands
        .par_iter()
        .map(|&k| {
            let cand_cfg = GmmFitConfig {
                k,
                seed: crate::rng::derive_seed(cfg.seed, k as u64),
                ..cfg.clone()
            };
            match fit_gmm(x, &cand_cfg) {
                Ok(model) => {
                    let ll = model.log_likelihood.unwrap_or(f64::NEG_INFINITY);
                    let params = (k - 1) + k * p + k * p * (p + 1) / 2;
                    BicRow {
                        k,
                        bic: Some(-2.0 * ll + params as f64 * (n as f64).ln()),
                        log_likelihood: Some(ll),
                        error: None,
                    }
                }
                Err(e) => BicRow {
                    k,
                    bic: None,
                    log_likelihood: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let ok_rows: Vec<(usize, f64)> = rows
        .iter()
        .filter_map(|r| r.bic.map(|b| (r.k, b)))
        .collect();
    if ok_rows.is_empty() {
        let first = rows
            .iter()
            .find_map(|r| r.error.clone())
            .unwrap_or_else(|| "unknown".into());
        return Err(Error::NoViableFit(format!("every BIC candidate failed: {first}")));
    }
    let mut suggested = ok_rows.last().unwrap().0;
    for w in ok_rows.windows(2) {
        let (k_small, bic_small) = w[0];
        let (_k_next, bic_next) = w[1];
        let improvement = (bic_small - bic_next) / bic_small.abs().max(1e-12);
        if improvement < rel_threshold {
            suggested = k_small;
            break;
        }
    }
    Ok(BicTable {
        rows,
        suggested_k: suggested,
    })
}
