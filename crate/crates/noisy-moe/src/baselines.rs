//! Comparison estimators.
//!
//! * `MoessModel`: the semi-supervised baseline that trusts the cluster
//!   assignment outright — per-cluster OLS with no trimming, prediction
//!   weighted by the cluster posterior.
//! * `MoeModel`: the fully supervised mixture of experts with a softmax gate
//!   (linear or quadratic in the covariates), fit by EM on labeled data only.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{fit_gmm, GmmFitConfig, GmmModel};
use crate::kmeans::lloyd;
use crate::linalg::{cholesky, cholesky_solve, lstsq, pairwise_sum};
use crate::moe::GmmPool;
use crate::rng::{derive_seed, stream_rng};
use crate::stats::normal_logpdf;

/// A linear mean with no error model attached.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearExpert {
    pub intercept: f64,
    pub coefficients: Array1<f64>,
}

impl LinearExpert {
    pub fn mean(&self, x: &ArrayView1<f64>) -> f64 {
        self.intercept + x.dot(&self.coefficients)
    }
}

/// Semi-supervised mixture of experts with an implicit identity transition:
/// per-cluster OLS experts weighted by the cluster posterior.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MoessModel {
    pub gmm: GmmModel,
    pub experts: Vec<LinearExpert>,
    /// Labeled points per cluster at fit time.
    pub labeled_counts: Vec<usize>,
    /// Clusters that had no labeled points and copied the global OLS fit.
    pub empty_clusters: Vec<usize>,
}

impl MoessModel {
    pub fn k(&self) -> usize {
        self.experts.len()
    }

    pub fn predict(&self, x: &ArrayView1<f64>) -> f64 {
        let post = self.gmm.posterior(x);
        post.iter()
            .zip(&self.experts)
            .map(|(w, e)| w * e.mean(x))
            .sum()
    }

    pub fn predict_batch(&self, x: &ArrayView2<f64>) -> Array1<f64> {
        let post = self.gmm.posterior_batch(x);
        let mut out = Array1::zeros(x.nrows());
        for (i, (row, w)) in x.rows().into_iter().zip(post.rows()).enumerate() {
            out[i] = w
                .iter()
                .zip(&self.experts)
                .map(|(wi, e)| wi * e.mean(&row))
                .sum();
        }
        out
    }

    /// Coefficients stacked as `K x (p + 1)`, intercept first.
    pub fn coefficient_matrix(&self) -> Array2<f64> {
        let p = self.experts[0].coefficients.len();
        Array2::from_shape_fn((self.k(), p + 1), |(i, j)| {
            if j == 0 {
                self.experts[i].intercept
            } else {
                self.experts[i].coefficients[j - 1]
            }
        })
    }
}

fn ols(x: &ArrayView2<f64>, y: &ArrayView1<f64>, idx: &[usize]) -> Result<LinearExpert> {
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
    let fit = lstsq(&design.view(), &rhs.view())?;
    Ok(LinearExpert {
        intercept: fit.solution[0],
        coefficients: fit.solution.slice(ndarray::s![1..]).to_owned(),
    })
}

/// Fits the MoESS baseline on top of an already-fit (or known) mixture.
pub fn fit_moess_with_gmm(
    x: &ArrayView2<f64>,
    y: &ArrayView1<f64>,
    gmm: GmmModel,
) -> Result<MoessModel> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} rows but {} responses",
            y.len()
        )));
    }
    if n == 0 {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    let k = gmm.k();
    let assignments = gmm.assign_batch(x);
    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in assignments.iter().enumerate() {
        clusters[c].push(i);
    }
    let global = ols(x, y, &(0..n).collect::<Vec<_>>())?;
    let mut experts = Vec::with_capacity(k);
    let mut empty = Vec::new();
    for (c, idx) in clusters.iter().enumerate() {
        if idx.is_empty() {
            empty.push(c);
            experts.push(global.clone());
        } else {
            experts.push(ols(x, y, idx)?);
        }
    }
    Ok(MoessModel {
        gmm,
        experts,
        labeled_counts: clusters.iter().map(Vec::len).collect(),
        empty_clusters: empty,
    })
}

/// Fits the MoESS baseline including its covariate mixture stage.
pub fn fit_moess(
    labeled_x: &ArrayView2<f64>,
    labeled_y: &ArrayView1<f64>,
    unlabeled_x: &ArrayView2<f64>,
    k: usize,
    gmm_cfg: &GmmFitConfig,
    pool: GmmPool,
) -> Result<MoessModel> {
    let cfg = GmmFitConfig {
        k,
        ..gmm_cfg.clone()
    };
    let gmm = match pool {
        GmmPool::All => {
            let mut pooled = Array2::zeros((
                labeled_x.nrows() + unlabeled_x.nrows(),
                labeled_x.ncols(),
            ));
            pooled
                .slice_mut(ndarray::s![..labeled_x.nrows(), ..])
                .assign(labeled_x);
            pooled
                .slice_mut(ndarray::s![labeled_x.nrows().., ..])
                .assign(unlabeled_x);
            fit_gmm(&pooled.view(), &cfg)?
        }
        GmmPool::UnlabeledOnly => fit_gmm(unlabeled_x, &cfg)?,
    };
    fit_moess_with_gmm(labeled_x, labeled_y, gmm)
}

/// Gate parameterization of the supervised mixture of experts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    Linear,
    Quadratic,
}

impl GateKind {
    /// Gate feature dimension: `1 + p` for linear, plus the `p (p + 1) / 2`
    /// upper-triangular products for quadratic.
    pub fn feature_dim(self, p: usize) -> usize {
        match self {
            GateKind::Linear => 1 + p,
            GateKind::Quadratic => 1 + p + p * (p + 1) / 2,
        }
    }

    /// Gate features of one covariate vector: intercept, coordinates, and for
    /// the quadratic gate the products `x_i x_j` with `i <= j` (each
    /// unordered pair appears once, so the parameterization is not doubled).
    pub fn features(self, x: &ArrayView1<f64>) -> Array1<f64> {
        let p = x.len();
        let mut out = Array1::zeros(self.feature_dim(p));
        out[0] = 1.0;
        for j in 0..p {
            out[1 + j] = x[j];
        }
        if self == GateKind::Quadratic {
            let mut idx = 1 + p;
            for i in 0..p {
                for j in i..p {
                    out[idx] = x[i] * x[j];
                    idx += 1;
                }
            }
        }
        out
    }
}

/// A Gaussian regression expert of the supervised mixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianExpert {
    pub intercept: f64,
    pub coefficients: Array1<f64>,
    pub sigma: f64,
}

impl GaussianExpert {
    pub fn mean(&self, x: &ArrayView1<f64>) -> f64 {
        self.intercept + x.dot(&self.coefficients)
    }
}

/// Supervised mixture of experts with a softmax gate.
///
/// Gate parameters are stored as a `K x d` matrix of feature coefficients;
/// component 0's row is pinned to zero for softmax identifiability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MoeModel {
    pub gate_kind: GateKind,
    pub gate: Array2<f64>,
    pub experts: Vec<GaussianExpert>,
    /// Experts whose error scale hit the relative floor during EM.
    pub sigma_floored: Vec<usize>,
    /// Observed-data log-likelihood of the winning restart.
    pub log_likelihood: f64,
}

impl MoeModel {
    pub fn k(&self) -> usize {
        self.experts.len()
    }

    /// Softmax gate weights at `x`, computed with a max shift.
    pub fn gate_weights(&self, x: &ArrayView1<f64>) -> Array1<f64> {
        let features = self.gate_kind.features(x);
        let logits = self.gate.dot(&features);
        softmax(&logits)
    }

    pub fn predict(&self, x: &ArrayView1<f64>) -> f64 {
        let w = self.gate_weights(x);
        w.iter().zip(&self.experts).map(|(wi, e)| wi * e.mean(x)).sum()
    }

    pub fn predict_batch(&self, x: &ArrayView2<f64>) -> Array1<f64> {
        Array1::from_shape_fn(x.nrows(), |i| self.predict(&x.row(i)))
    }

    /// Coefficients stacked as `K x (p + 1)`, intercept first.
    pub fn coefficient_matrix(&self) -> Array2<f64> {
        let p = self.experts[0].coefficients.len();
        Array2::from_shape_fn((self.k(), p + 1), |(i, j)| {
            if j == 0 {
                self.experts[i].intercept
            } else {
                self.experts[i].coefficients[j - 1]
            }
        })
    }
}

pub(crate) fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.mapv(|v| (v - m).exp());
    let s = out.sum();
    out.mapv_inplace(|v| v / s);
    out
}

/// Settings for [`fit_moe_em`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MoeEmConfig {
    pub n_restarts: usize,
    pub max_iter: usize,
    /// Relative log-likelihood change threshold.
    pub tol: f64,
    /// Newton iterations per gate M-step. The M-step may stop early; a
    /// partial (generalized EM) M-step keeps the likelihood monotone.
    pub irls_max_iter: usize,
    /// Ridge added to the gate Newton Hessian.
    pub ridge: f64,
    pub seed: u64,
    /// Error scales are floored at this fraction of the response scale.
    pub sigma_floor_rel: f64,
}

impl Default for MoeEmConfig {
    fn default() -> Self {
        MoeEmConfig {
            n_restarts: 5,
            max_iter: 1000,
            tol: 1e-8,
            irls_max_iter: 25,
            ridge: 1e-8,
            seed: 0,
            sigma_floor_rel: 1e-6,
        }
    }
}

/// Fits the supervised mixture of experts by EM, returning the restart with
/// the highest observed-data log-likelihood.
pub fn fit_moe_em(
    x: &ArrayView2<f64>,
    y: &ArrayView1<f64>,
    k: usize,
    gate_kind: GateKind,
    cfg: &MoeEmConfig,
) -> Result<MoeModel> {
    fit_moe_em_with_trace(x, y, k, gate_kind, cfg).map(|(m, _)| m)
}

/// As [`fit_moe_em`], also returning the winning restart's log-likelihood
/// trace (non-decreasing up to the documented slack).
pub fn fit_moe_em_with_trace(
    x: &ArrayView2<f64>,
    y: &ArrayView1<f64>,
    k: usize,
    gate_kind: GateKind,
    cfg: &MoeEmConfig,
) -> Result<(MoeModel, Vec<f64>)> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} rows but {} responses",
            y.len()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("moe: k must be at least 1".into()));
    }
    let needed = k * (p + 2);
    if n < needed {
        return Err(Error::TooFewPoints { needed, got: n });
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("moe training data"));
    }

    let response_scale = {
        let mean = y.mean().unwrap_or(0.0);
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if sd > 0.0 {
            sd
        } else {
            1.0
        }
    };
    let sigma_floor = cfg.sigma_floor_rel * response_scale;

    let results: Vec<Result<(MoeModel, Vec<f64>)>> = (0..cfg.n_restarts)
        .into_par_iter()
        .map(|restart| {
            em_restart(
                x,
                y,
                k,
                gate_kind,
                cfg,
                sigma_floor,
                derive_seed(cfg.seed, restart as u64),
            )
        })
        .collect();

    let mut best: Option<(MoeModel, Vec<f64>)> = None;
    let mut first_err = None;
    for r in results {
        match r {
            Ok((model, trace)) => {
                let replace = match &best {
                    None => true,
                    Some((b, _)) => model.log_likelihood > b.log_likelihood,
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
    best.ok_or_else(|| first_err.expect("at least one restart ran"))
}

#[allow(clippy::too_many_arguments)]
fn em_restart(
    x: &ArrayView2<f64>,
    y: &ArrayView1<f64>,
    k: usize,
    gate_kind: GateKind,
    cfg: &MoeEmConfig,
    sigma_floor: f64,
    seed: u64,
) -> Result<(MoeModel, Vec<f64>)> {
    let n = x.nrows();
    let p = x.ncols();
    let d = gate_kind.feature_dim(p);
    let mut rng = stream_rng(seed, 0);

    // Initialization: k-means clusters, per-cluster OLS experts, zero gate.
    let (_, labels) = lloyd(x, k, 50, &mut rng);
    let mut experts = Vec::with_capacity(k);
    let all: Vec<usize> = (0..n).collect();
    for c in 0..k {
        let idx: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        let idx = if idx.len() < p + 2 { &all } else { &idx };
        let base = ols(x, y, idx)?;
        let mut ssr = 0.0;
        for &i in idx {
            let r = y[i] - base.mean(&x.row(i));
            ssr += r * r;
        }
        let sigma = (ssr / idx.len() as f64).sqrt().max(sigma_floor);
        experts.push(GaussianExpert {
            intercept: base.intercept,
            coefficients: base.coefficients,
            sigma,
        });
    }
    let mut gate = Array2::<f64>::zeros((k, d));

    // Precompute gate features.
    let mut features = Array2::<f64>::zeros((n, d));
    for (i, row) in x.rows().into_iter().enumerate() {
        features.row_mut(i).assign(&gate_kind.features(&row));
    }

    let mut sigma_floored: Vec<usize> = Vec::new();
    let mut trace: Vec<f64> = Vec::new();
    let mut resp = Array2::<f64>::zeros((n, k));
    let mut ll_prev = f64::NEG_INFINITY;

    for iter in 0..cfg.max_iter {
        // E-step.
        let logits = features.dot(&gate.t());
        let mut row_lls = vec![0.0; n];
        for i in 0..n {
            let row_logit = logits.row(i);
            let lse_gate = log_sum_exp(&row_logit.to_owned());
            let mut scores = Array1::zeros(k);
            for (c, e) in experts.iter().enumerate() {
                scores[c] =
                    row_logit[c] - lse_gate + normal_logpdf(y[i] - e.mean(&x.row(i)), e.sigma);
            }
            let lse = log_sum_exp(&scores);
            for c in 0..k {
                resp[[i, c]] = (scores[c] - lse).exp();
            }
            row_lls[i] = lse;
        }
        let ll = pairwise_sum(&row_lls);
        trace.push(ll);
        if iter > 0 && (ll - ll_prev).abs() < cfg.tol * ll.abs().max(1.0) {
            break;
        }
        ll_prev = ll;

        // M-step: experts by weighted least squares.
        for c in 0..k {
            let mass: f64 = resp.column(c).sum();
            if mass < 1e-10 * n as f64 {
                return Err(Error::Degenerate(format!(
                    "component {c} lost its responsibility mass during EM"
                )));
            }
            let mut design = Array2::zeros((n, p + 1));
            let mut rhs = Array1::zeros(n);
            for i in 0..n {
                let w = resp[[i, c]].sqrt();
                design[[i, 0]] = w;
                for j in 0..p {
                    design[[i, j + 1]] = w * x[[i, j]];
                }
                rhs[i] = w * y[i];
            }
            let fit = lstsq(&design.view(), &rhs.view())?;
            let intercept = fit.solution[0];
            let coefficients = fit.solution.slice(ndarray::s![1..]).to_owned();
            let mut wssr = 0.0;
            for i in 0..n {
                let r = y[i] - intercept - x.row(i).dot(&coefficients);
                wssr += resp[[i, c]] * r * r;
            }
            let mut sigma = (wssr / mass).sqrt();
            if sigma < sigma_floor {
                sigma = sigma_floor;
                if !sigma_floored.contains(&c) {
                    sigma_floored.push(c);
                }
            }
            experts[c] = GaussianExpert {
                intercept,
                coefficients,
                sigma,
            };
        }

        // M-step: gate by responsibility-weighted multinomial logistic
        // regression (Newton with ridge and step halving; partial steps are
        // accepted, which keeps EM monotone).
        gate_newton(&features, &resp, &mut gate, cfg);
    }

    let ll = *trace.last().unwrap();
    Ok((
        MoeModel {
            gate_kind,
            gate,
            experts,
            sigma_floored,
            log_likelihood: ll,
        },
        trace,
    ))
}

fn log_sum_exp(v: &Array1<f64>) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
}

/// Weighted multinomial log-likelihood of the gate given responsibilities.
fn gate_objective(features: &Array2<f64>, resp: &Array2<f64>, gate: &Array2<f64>) -> f64 {
    let logits = features.dot(&gate.t());
    let n = features.nrows();
    let k = gate.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let row = logits.row(i).to_owned();
        let lse = log_sum_exp(&row);
        for c in 0..k {
            total += resp[[i, c]] * (row[c] - lse);
        }
    }
    total
}

/// Newton/IRLS maximization of the gate objective over the rows 1..K of the
/// gate matrix (row 0 stays pinned at zero).
fn gate_newton(features: &Array2<f64>, resp: &Array2<f64>, gate: &mut Array2<f64>, cfg: &MoeEmConfig) {
    let n = features.nrows();
    let d = features.ncols();
    let k = gate.nrows();
    if k == 1 {
        return;
    }
    let free = k - 1;
    let dim = free * d;
    let mut obj = gate_objective(features, resp, gate);

    for _ in 0..cfg.irls_max_iter {
        let logits = features.dot(&gate.t());
        // Gradient and Hessian of the weighted multinomial log-likelihood.
        let mut grad = Array1::<f64>::zeros(dim);
        let mut hess = Array2::<f64>::zeros((dim, dim));
        for i in 0..n {
            let w = softmax(&logits.row(i).to_owned());
            let fi = features.row(i);
            for a in 1..k {
                let ga = resp[[i, a]] - w[a];
                for t in 0..d {
                    grad[(a - 1) * d + t] += ga * fi[t];
                }
                for b in a..k {
                    let coeff = if a == b {
                        w[a] * (1.0 - w[a])
                    } else {
                        -w[a] * w[b]
                    };
                    if coeff == 0.0 {
                        continue;
                    }
                    for t in 0..d {
                        for s in 0..d {
                            let v = coeff * fi[t] * fi[s];
                            hess[[(a - 1) * d + t, (b - 1) * d + s]] += v;
                            if a != b {
                                hess[[(b - 1) * d + s, (a - 1) * d + t]] += v;
                            }
                        }
                    }
                }
            }
        }
        // Solve (H + ridge I) delta = grad; H is PSD by construction.
        let mut ridge = cfg.ridge;
        let delta = loop {
            let mut h = hess.clone();
            for i in 0..dim {
                h[[i, i]] += ridge;
            }
            if let Some(l) = cholesky(&h.view()) {
                break cholesky_solve(&l, &grad.view());
            }
            ridge *= 100.0;
            if ridge > 1e6 {
                return;
            }
        };

        // Step halving: never accept a decrease of the objective.
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..5 {
            let mut cand = gate.clone();
            for a in 1..k {
                for t in 0..d {
                    cand[[a, t]] += step * delta[(a - 1) * d + t];
                }
            }
            let cand_obj = gate_objective(features, resp, &cand);
            if cand_obj >= obj {
                let improved = cand_obj - obj;
                *gate = cand;
                obj = cand_obj;
                accepted = true;
                if improved < 1e-10 * (1.0 + obj.abs()) {
                    return;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn moess_single_cluster_is_global_ols() {
        let mut rng = stream_rng(90, 0);
        let n = 80;
        let x = Array2::from_shape_fn((n, 2), |_| rng.random::<f64>() * 4.0 - 2.0);
        let y = Array1::from_shape_fn(n, |i| {
            0.5 + x[[i, 0]] - 2.0 * x[[i, 1]] + 0.1 * rng.sample::<f64, _>(StandardNormal)
        });
        let gmm = GmmModel::from_parameters(
            array![1.0],
            Array2::zeros((1, 2)),
            vec![Array2::eye(2)],
        )
        .unwrap();
        let model = fit_moess_with_gmm(&x.view(), &y.view(), gmm).unwrap();
        let global = ols(&x.view(), &y.view(), &(0..n).collect::<Vec<_>>()).unwrap();
        assert!((model.experts[0].intercept - global.intercept).abs() < 1e-12);
        for j in 0..2 {
            assert!((model.experts[0].coefficients[j] - global.coefficients[j]).abs() < 1e-12);
        }
        // And prediction is the OLS line.
        let x0 = array![0.3, -0.4];
        assert!((model.predict(&x0.view()) - global.mean(&x0.view())).abs() < 1e-12);
    }

    #[test]
    fn moe_em_single_component_is_ols_with_residual_variance() {
        let mut rng = stream_rng(91, 0);
        let n = 60;
        let x = Array2::from_shape_fn((n, 1), |_| rng.random::<f64>() * 4.0 - 2.0);
        let y = Array1::from_shape_fn(n, |i| {
            2.0 - 1.5 * x[[i, 0]] + 0.3 * rng.sample::<f64, _>(StandardNormal)
        });
        let model = fit_moe_em(&x.view(), &y.view(), 1, GateKind::Linear, &MoeEmConfig::default())
            .unwrap();
        let global = ols(&x.view(), &y.view(), &(0..n).collect::<Vec<_>>()).unwrap();
        assert!((model.experts[0].intercept - global.intercept).abs() < 1e-9);
        assert!((model.experts[0].coefficients[0] - global.coefficients[0]).abs() < 1e-9);
        let mut ssr = 0.0;
        for i in 0..n {
            let r = y[i] - global.mean(&x.row(i));
            ssr += r * r;
        }
        let sigma = (ssr / n as f64).sqrt();
        assert!((model.experts[0].sigma - sigma).abs() < 1e-9);
        // Gate is trivially one.
        let w = model.gate_weights(&array![0.0].view());
        assert_eq!(w.len(), 1);
        assert!((w[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn moe_em_recovers_two_planted_regimes() {
        // Experts split on the sign of x1 with no gate overlap.
        let mut rng = stream_rng(92, 0);
        let n = 2000;
        let x = Array2::from_shape_fn((n, 1), |_| {
            let v = rng.random::<f64>() * 6.0 - 3.0;
            if v.abs() < 0.3 {
                v + 0.6 * v.signum()
            } else {
                v
            }
        });
        let y = Array1::from_shape_fn(n, |i| {
            let xi = x[[i, 0]];
            let noise = 0.05 * rng.sample::<f64, _>(StandardNormal);
            if xi > 0.0 {
                2.0 + 3.0 * xi + noise
            } else {
                -1.0 - 2.0 * xi + noise
            }
        });
        let model = fit_moe_em(&x.view(), &y.view(), 2, GateKind::Linear, &MoeEmConfig::default())
            .unwrap();
        let est = model.coefficient_matrix();
        let truth = [(2.0, 3.0), (-1.0, -2.0)];
        // Two components: check both pairings by hand.
        let direct: f64 = (est[[0, 0]] - truth[0].0).powi(2)
            + (est[[0, 1]] - truth[0].1).powi(2)
            + (est[[1, 0]] - truth[1].0).powi(2)
            + (est[[1, 1]] - truth[1].1).powi(2);
        let swapped: f64 = (est[[0, 0]] - truth[1].0).powi(2)
            + (est[[0, 1]] - truth[1].1).powi(2)
            + (est[[1, 0]] - truth[0].0).powi(2)
            + (est[[1, 1]] - truth[0].1).powi(2);
        let err = direct.min(swapped);
        assert!(err < 0.05 * 0.05 * 4.0, "recovery error {err}");
    }

    #[test]
    fn em_trace_is_monotone() {
        let mut rng = stream_rng(93, 0);
        for trial in 0..10 {
            let n = 150;
            let x = Array2::from_shape_fn((n, 1), |_| rng.random::<f64>() * 4.0 - 2.0);
            let y = Array1::from_shape_fn(n, |i| {
                let xi = x[[i, 0]];
                let noise = 0.2 * rng.sample::<f64, _>(StandardNormal);
                if rng.random::<f64>() < 0.5 {
                    1.0 + xi + noise
                } else {
                    -1.0 - xi + noise
                }
            });
            let cfg = MoeEmConfig {
                n_restarts: 1,
                seed: trial,
                max_iter: 200,
                ..Default::default()
            };
            let (_, trace) =
                fit_moe_em_with_trace(&x.view(), &y.view(), 2, GateKind::Linear, &cfg).unwrap();
            for w in trace.windows(2) {
                assert!(
                    w[1] >= w[0] - 1e-6,
                    "log-likelihood decreased: {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn predict_all_zero_gate_is_uniform_average() {
        let model = MoeModel {
            gate_kind: GateKind::Linear,
            gate: Array2::zeros((3, 2)),
            experts: vec![
                GaussianExpert {
                    intercept: 1.0,
                    coefficients: array![0.0],
                    sigma: 1.0,
                },
                GaussianExpert {
                    intercept: 2.0,
                    coefficients: array![0.0],
                    sigma: 1.0,
                },
                GaussianExpert {
                    intercept: 6.0,
                    coefficients: array![0.0],
                    sigma: 1.0,
                },
            ],
            sigma_floored: vec![],
            log_likelihood: 0.0,
        };
        let w = model.gate_weights(&array![0.7].view());
        for wi in w.iter() {
            assert!((wi - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!((model.predict(&array![0.7].view()) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn predict_matches_naive_softmax_sum() {
        let mut rng = stream_rng(94, 0);
        let p = 2;
        let d = GateKind::Quadratic.feature_dim(p);
        let gate = Array2::from_shape_fn((3, d), |(i, _)| {
            if i == 0 {
                0.0
            } else {
                rng.random::<f64>() - 0.5
            }
        });
        let experts: Vec<GaussianExpert> = (0..3)
            .map(|_| GaussianExpert {
                intercept: rng.random::<f64>(),
                coefficients: Array1::from_shape_fn(p, |_| rng.random::<f64>() - 0.5),
                sigma: 0.5,
            })
            .collect();
        let model = MoeModel {
            gate_kind: GateKind::Quadratic,
            gate: gate.clone(),
            experts: experts.clone(),
            sigma_floored: vec![],
            log_likelihood: 0.0,
        };
        for _ in 0..25 {
            let x = array![rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0];
            // Naive: explicit feature build, exp, normalize, weighted sum.
            let xs = [x[0], x[1]];
            let feats = vec![1.0, xs[0], xs[1], xs[0] * xs[0], xs[0] * xs[1], xs[1] * xs[1]];
            let logits: Vec<f64> = (0..3)
                .map(|c| (0..d).map(|t| gate[[c, t]] * feats[t]).sum())
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let total: f64 = exps.iter().sum();
            let mut naive = 0.0;
            for c in 0..3 {
                let mean = experts[c].intercept
                    + experts[c].coefficients[0] * xs[0]
                    + experts[c].coefficients[1] * xs[1];
                naive += exps[c] / total * mean;
            }
            assert!((model.predict(&x.view()) - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_gate_with_zero_products_matches_linear() {
        let mut rng = stream_rng(95, 0);
        let p = 2;
        let linear_gate = Array2::from_shape_fn((3, 1 + p), |(i, _)| {
            if i == 0 {
                0.0
            } else {
                rng.random::<f64>() - 0.5
            }
        });
        let mut quad_gate = Array2::zeros((3, GateKind::Quadratic.feature_dim(p)));
        quad_gate
            .slice_mut(ndarray::s![.., ..1 + p])
            .assign(&linear_gate);
        let experts: Vec<GaussianExpert> = (0..3)
            .map(|_| GaussianExpert {
                intercept: rng.random::<f64>(),
                coefficients: Array1::from_shape_fn(p, |_| rng.random::<f64>() - 0.5),
                sigma: 0.5,
            })
            .collect();
        let lin = MoeModel {
            gate_kind: GateKind::Linear,
            gate: linear_gate,
            experts: experts.clone(),
            sigma_floored: vec![],
            log_likelihood: 0.0,
        };
        let quad = MoeModel {
            gate_kind: GateKind::Quadratic,
            gate: quad_gate,
            experts,
            sigma_floored: vec![],
            log_likelihood: 0.0,
        };
        for _ in 0..25 {
            let x = array![rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0];
            assert_eq!(lin.predict(&x.view()), quad.predict(&x.view()));
        }
    }

    #[test]
    fn softmax_shift_invariance_and_normalization() {
        let mut rng = stream_rng(96, 0);
        for _ in 0..100 {
            let z = Array1::from_shape_fn(4, |_| rng.random::<f64>() * 10.0 - 5.0);
            let c = rng.random::<f64>() * 20.0 - 10.0;
            let a = softmax(&z);
            let b = softmax(&z.mapv(|v| v + c));
            assert!((a.sum() - 1.0).abs() < 1e-12);
            for i in 0..4 {
                assert!((a[i] - b[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn moe_em_rejects_too_few_points() {
        let x = Array2::<f64>::zeros((5, 1));
        let y = Array1::<f64>::zeros(5);
        match fit_moe_em(&x.view(), &y.view(), 2, GateKind::Linear, &MoeEmConfig::default()) {
            Err(Error::TooFewPoints { .. }) => {}
            other => panic!("expected TooFewPoints, got {other:?}"),
        }
    }
}
