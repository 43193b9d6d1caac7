//! The benchmark's synthetic truth and sampler.
//!
//! Cluster means and expert coefficients follow deterministic grid rules;
//! covariance rotations and eigenvalues are drawn fresh from the seed, so
//! every replication sees a new covariance geometry. The corruption process
//! keeps a label with probability `p0` and otherwise reassigns it uniformly
//! among the other clusters.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::linalg::{cholesky, qr_square};
use crate::lts::ErrorParams;
use crate::moe::{ExpertModel, FitDiagnostics, NoisyMoeModel};
use crate::rng::stream_rng;
use crate::transition::TransitionMatrix;

/// Evenly spaced values on `[lo, hi]`: entry `k` of `K` is
/// `lo + k (hi - lo) / (K - 1)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridRule {
    pub lo: f64,
    pub hi: f64,
}

impl GridRule {
    pub fn value(&self, index: usize, count: usize) -> f64 {
        if count <= 1 {
            self.lo
        } else {
            self.lo + index as f64 * (self.hi - self.lo) / (count - 1) as f64
        }
    }
}

/// Generator settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub k: usize,
    pub p: usize,
    pub n_labeled: usize,
    /// Unlabeled draw size for finite-sample mixture fitting; unused when
    /// `oracle_x` is set.
    pub n_unlabeled: usize,
    pub n_test: usize,
    /// Diagonal of the label transition matrix.
    pub p0: f64,
    /// Inject the true mixture parameters instead of fitting them
    /// (emulates an unlimited unlabeled sample).
    pub oracle_x: bool,
    pub seed: u64,
    /// Expert noise standard deviation.
    pub sigma: f64,
    /// Range of the covariance eigenvalue draws.
    pub d_range: (f64, f64),
    /// Rule for cluster-mean entries (every coordinate of cluster `k` shares
    /// one value).
    pub mean_rule: GridRule,
    /// Rule for expert coefficient entries (intercept and slopes of expert
    /// `k` share one value).
    pub coef_rule: GridRule,
    /// Cluster weights; `None` means uniform.
    pub cluster_weights: Option<Vec<f64>>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            k: 10,
            p: 3,
            n_labeled: 2000,
            n_unlabeled: 10_000,
            n_test: 20_000,
            p0: 1.0,
            oracle_x: true,
            seed: 0,
            sigma: 0.1,
            d_range: (0.005, 0.05),
            mean_rule: GridRule { lo: -3.0, hi: 3.0 },
            coef_rule: GridRule { lo: -1.0, hi: 1.0 },
            cluster_weights: None,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.p == 0 {
            return Err(Error::InvalidConfig("simulation: k and p must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.p0) {
            return Err(Error::InvalidConfig(format!(
                "simulation: p0 must lie in [0, 1], got {}",
                self.p0
            )));
        }
        if !(self.d_range.0 > 0.0) || self.d_range.1 < self.d_range.0 {
            return Err(Error::InvalidConfig(
                "simulation: eigenvalue range must be positive and ordered".into(),
            ));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::InvalidConfig("simulation: sigma must be >= 0".into()));
        }
        if let Some(w) = &self.cluster_weights {
            if w.len() != self.k {
                return Err(Error::InvalidConfig(format!(
                    "simulation: {} cluster weights for k = {}",
                    w.len(),
                    self.k
                )));
            }
            if w.iter().any(|&v| v < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidConfig(
                    "simulation: cluster weights must be nonnegative and sum to 1".into(),
                ));
            }
        }
        Ok(())
    }

    fn weights(&self) -> Array1<f64> {
        match &self.cluster_weights {
            Some(w) => Array1::from_vec(w.clone()),
            None => Array1::from_elem(self.k, 1.0 / self.k as f64),
        }
    }
}

/// Builds the true model: grid means, random rotated covariances, grid expert
/// coefficients, and the single-parameter corruption transition.
pub fn make_truth(cfg: &SimulationConfig) -> Result<NoisyMoeModel> {
    cfg.validate()?;
    let k = cfg.k;
    let p = cfg.p;
    let mut rng = stream_rng(cfg.seed, 0);

    let weights = cfg.weights();
    let mut means = Array2::zeros((k, p));
    for c in 0..k {
        let v = cfg.mean_rule.value(c, k);
        for j in 0..p {
            means[[c, j]] = v;
        }
    }

    let mut covariances = Vec::with_capacity(k);
    for _ in 0..k {
        // Orthogonalize a standard normal matrix; the QR sign convention
        // (nonnegative R diagonal) pins the factor uniquely, so R R^T = I
        // holds to machine precision.
        let raw = Array2::from_shape_fn((p, p), |_| rng.sample::<f64, _>(StandardNormal));
        let (q, _) = qr_square(&raw.view());
        let eigs = Array1::from_shape_fn(p, |_| {
            rng.random_range(cfg.d_range.0..cfg.d_range.1)
        });
        let mut cov = Array2::zeros((p, p));
        for a in 0..p {
            for b in 0..p {
                let mut s = 0.0;
                for t in 0..p {
                    s += q[[a, t]] * eigs[t] * q[[b, t]];
                }
                cov[[a, b]] = s;
            }
        }
        // Symmetrize against rounding.
        for a in 0..p {
            for b in 0..a {
                let v = 0.5 * (cov[[a, b]] + cov[[b, a]]);
                cov[[a, b]] = v;
                cov[[b, a]] = v;
            }
        }
        covariances.push(cov);
    }
    let gmm = GmmModel::from_parameters(weights, means, covariances)?;

    let experts = (0..k)
        .map(|c| {
            let v = cfg.coef_rule.value(c, k);
            ExpertModel {
                intercept: v,
                coefficients: Array1::from_elem(p, v),
                theta: ErrorParams::Gaussian { sigma: cfg.sigma },
            }
        })
        .collect();

    let transition = TransitionMatrix::diagonal_heavy(k, cfg.p0)?;

    Ok(NoisyMoeModel {
        gmm,
        experts,
        transition,
        alpha_used: 1.0,
        diagnostics: FitDiagnostics::default(),
    })
}

/// Corruption level in percent: `100 (1 - sum_k P(cluster k, label k))`.
pub fn corruption_percent(truth: &NoisyMoeModel) -> f64 {
    let k = truth.k();
    let mut agree = 0.0;
    for c in 0..k {
        agree += truth.gmm.weights[c] * truth.transition.prob(c, c);
    }
    100.0 * (1.0 - agree)
}

/// One simulated draw: covariates, responses, and both latent label sets.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    /// Expert labels (which regression generated each response).
    pub z: Vec<usize>,
    /// Cluster labels (which mixture component generated each covariate).
    pub tilde_z: Vec<usize>,
}

fn categorical(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Draws `n` observations from the model: cluster, covariates given the
/// cluster, label given the cluster, response given label and covariates.
pub fn sample_dataset(truth: &NoisyMoeModel, n: usize, seed: u64) -> Dataset {
    let k = truth.k();
    let p = truth.dim();
    let mut rng = stream_rng(seed, 1);
    let chols: Vec<Array2<f64>> = truth
        .gmm
        .covariances
        .iter()
        .map(|c| cholesky(&c.view()).expect("truth covariances are positive definite"))
        .collect();
    let weights: Vec<f64> = truth.gmm.weights.to_vec();
    let columns: Vec<Vec<f64>> = (0..k)
        .map(|j| (0..k).map(|i| truth.transition.prob(i, j)).collect())
        .collect();

    let mut x = Array2::zeros((n, p));
    let mut y = Array1::zeros(n);
    let mut z = Vec::with_capacity(n);
    let mut tilde_z = Vec::with_capacity(n);
    for i in 0..n {
        let cluster = categorical(&mut rng, &weights);
        let normals: Vec<f64> = (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for a in 0..p {
            let mut v = truth.gmm.means[[cluster, a]];
            for b in 0..=a {
                v += chols[cluster][[a, b]] * normals[b];
            }
            x[[i, a]] = v;
        }
        let label = if truth.transition.prob(cluster, cluster) >= 1.0 {
            cluster
        } else {
            categorical(&mut rng, &columns[cluster])
        };
        let expert = &truth.experts[label];
        let noise: f64 = rng.sample::<f64, _>(StandardNormal);
        y[i] = expert.mean(&x.row(i)) + expert.sigma() * noise;
        z.push(label);
        tilde_z.push(cluster);
    }
    Dataset { x, y, z, tilde_z }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truth_transition_shapes() {
        // p0 = 1 gives the identity.
        let cfg = SimulationConfig {
            k: 4,
            p: 2,
            p0: 1.0,
            ..Default::default()
        };
        let truth = make_truth(&cfg).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_eq!(truth.transition.prob(i, j), expect);
            }
        }
        assert_eq!(corruption_percent(&truth), 0.0);

        // p0 = 0.8, K = 10: off-diagonals 0.2/9, corruption 20%.
        let cfg = SimulationConfig {
            p0: 0.8,
            ..Default::default()
        };
        let truth = make_truth(&cfg).unwrap();
        assert!((truth.transition.prob(1, 0) - 0.2 / 9.0).abs() < 1e-15);
        assert!((corruption_percent(&truth) - 20.0).abs() < 1e-10);

        // K = 2, p0 = 0.5: uniform columns.
        let cfg = SimulationConfig {
            k: 2,
            p0: 0.5,
            ..Default::default()
        };
        let truth = make_truth(&cfg).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((truth.transition.prob(i, j) - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn truth_covariances_come_from_orthogonal_rotations() {
        let cfg = SimulationConfig {
            seed: 3,
            ..Default::default()
        };
        let truth = make_truth(&cfg).unwrap();
        for cov in &truth.gmm.covariances {
            // Positive definite with eigenvalues inside the configured range.
            let eigs = crate::linalg::sym_eigenvalues(&cov.view());
            for &e in eigs.iter() {
                assert!(e > 0.004 && e < 0.051, "eigenvalue {e} out of range");
            }
            for a in 0..3 {
                for b in 0..3 {
                    assert!((cov[[a, b]] - cov[[b, a]]).abs() < 1e-15);
                }
            }
        }
        // Mean grid: first cluster at -3, last at +3, all coordinates equal.
        assert_eq!(truth.gmm.means[[0, 0]], -3.0);
        assert_eq!(truth.gmm.means[[9, 2]], 3.0);
        // Coefficient grid: entries from -1 to 1.
        assert_eq!(truth.experts[0].intercept, -1.0);
        assert_eq!(truth.experts[9].coefficients[1], 1.0);
    }

    #[test]
    fn rotation_is_orthogonal_to_machine_precision() {
        let mut rng = stream_rng(4, 0);
        for _ in 0..20 {
            let raw = Array2::from_shape_fn((3, 3), |_| rng.sample::<f64, _>(StandardNormal));
            let (q, r) = qr_square(&raw.view());
            let qqt = q.dot(&q.t());
            for ((i, j), v) in qqt.indexed_iter() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-12);
            }
            for i in 0..3 {
                assert!(r[[i, i]] >= 0.0);
            }
        }
    }

    #[test]
    fn sampler_matches_cluster_weights() {
        let cfg = SimulationConfig {
            k: 5,
            p: 2,
            seed: 5,
            ..Default::default()
        };
        let truth = make_truth(&cfg).unwrap();
        let n = 100_000;
        let data = sample_dataset(&truth, n, 99);
        let mut counts = vec![0usize; 5];
        for &c in &data.tilde_z {
            counts[c] += 1;
        }
        // Within three standard errors of the uniform weights.
        let se = (0.2 * 0.8 / n as f64).sqrt();
        for &c in &counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.2).abs() < 3.0 * se, "freq {freq}");
        }
    }

    #[test]
    fn sampler_no_corruption_keeps_labels() {
        let cfg = SimulationConfig {
            k: 3,
            p: 2,
            p0: 1.0,
            seed: 6,
            ..Default::default()
        };
        let truth = make_truth(&cfg).unwrap();
        let data = sample_dataset(&truth, 5000, 7);
        assert_eq!(data.z, data.tilde_z);
    }

    #[test]
    fn sampler_residual_scale_matches_sigma() {
        let cfg = SimulationConfig {
            k: 4,
            p: 3,
            p0: 0.7,
            sigma: 0.1,
            seed: 8,
            ..Default::default()
        };
        let truth = make_truth(&cfg).unwrap();
        let n = 100_000;
        let data = sample_dataset(&truth, n, 11);
        let mut ss = 0.0;
        for i in 0..n {
            let e = &truth.experts[data.z[i]];
            let r = data.y[i] - e.mean(&data.x.row(i));
            ss += r * r;
        }
        let sd = (ss / n as f64).sqrt();
        assert!((sd - 0.1).abs() < 0.005, "residual sd {sd}");
    }

    #[test]
    fn sampler_is_reproducible() {
        let cfg = SimulationConfig {
            k: 3,
            p: 2,
            seed: 10,
            ..Default::default()
        };
        let truth = make_truth(&cfg).unwrap();
        let a = sample_dataset(&truth, 50, 3);
        let b = sample_dataset(&truth, 50, 3);
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_eq!(a.z, b.z);
    }
}
