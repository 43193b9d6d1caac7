//! Least trimmed squares regression.
//!
//! `lts_fit` minimizes the mean of the `h` smallest squared residuals, where
//! `h = floor(alpha * (m + p + 1))` is set by the retaining fraction `alpha`.
//! The search is the FAST-LTS scheme: random elemental starts, two cheap
//! C-steps each, full C-step refinement of the best few candidates. A C-step
//! (refit on the currently retained points, then re-select the `h` smallest
//! residuals) never increases the objective, so every refinement terminates
//! at a fixed point.
//!
//! `lts_enumerate` solves the same problem exactly by subset enumeration and
//! serves as the test oracle for small instances.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::lstsq;
use crate::rng::stream_rng;
use crate::stats::{normal_quantile, truncated_normal_variance};

/// Error-distribution families for the expert noise term. Only the Gaussian
/// family ships an estimator; the variants exist so callers can request
/// others and receive a typed `UnsupportedFamily` error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[non_exhaustive]
pub enum ErrorFamily {
    Gaussian,
    Laplace,
}

/// Estimated error-distribution parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ErrorParams {
    Gaussian { sigma: f64 },
}

impl ErrorParams {
    pub fn sigma(&self) -> f64 {
        match self {
            ErrorParams::Gaussian { sigma } => *sigma,
        }
    }
}

/// Settings for [`lts_fit`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LtsConfig {
    /// Retaining fraction in `[0.5, 1]`.
    pub alpha: f64,
    /// Number of random elemental starts.
    pub n_starts: usize,
    /// Number of best candidates given full C-step refinement.
    pub n_keep: usize,
    /// Cap on C-steps per refined candidate.
    pub max_csteps: usize,
    pub seed: u64,
    /// Exact enumeration instead of the randomized search (test oracle mode).
    pub exhaustive: bool,
}

impl Default for LtsConfig {
    fn default() -> Self {
        LtsConfig {
            alpha: 0.5,
            n_starts: 500,
            n_keep: 10,
            max_csteps: 50,
            seed: 0,
            exhaustive: false,
        }
    }
}

impl LtsConfig {
    fn validate(&self) -> Result<()> {
        if !(0.5..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!(
                "lts: alpha must lie in [0.5, 1], got {}",
                self.alpha
            )));
        }
        if self.n_keep > self.n_starts || self.n_keep == 0 || self.n_starts == 0 {
            return Err(Error::InvalidConfig(
                "lts: need 1 <= n_keep <= n_starts".into(),
            ));
        }
        Ok(())
    }
}

/// A trimmed least-squares fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LtsFit {
    pub beta0: f64,
    pub beta: Array1<f64>,
    /// Indices of the retained observations, ascending. These are exactly the
    /// `h` smallest squared residuals under `(beta0, beta)`, ties broken by
    /// the lowest index.
    pub retained: Vec<usize>,
    pub h: usize,
    /// Trimmed objective: sum of retained squared residuals over `h - p - 1`.
    pub objective: f64,
    /// Whether the C-step refinement reached a fixed point.
    pub converged: bool,
}

/// Retained count: `floor(alpha * (m + p + 1))` clamped to `[p + 2, m]`.
/// The clamp is needed because the raw formula can exceed `m` for small
/// clusters or `alpha` near one.
pub fn retained_count(alpha: f64, m: usize, p: usize) -> usize {
    let raw = (alpha * (m + p + 1) as f64).floor() as usize;
    raw.clamp(p + 2, m)
}

fn check_inputs(x: &ArrayView2<f64>, y: &ArrayView1<f64>) -> Result<(usize, usize)> {
    let m = x.nrows();
    let p = x.ncols();
    if y.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "lts: {m} design rows but {} responses",
            y.len()
        )));
    }
    if m < p + 2 {
        return Err(Error::TooFewPoints { needed: p + 2, got: m });
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("lts training data"));
    }
    Ok((m, p))
}

/// OLS on the rows of `x`/`y` listed in `idx`, intercept handled by a
/// constant design column. Returns `(beta0, beta, rank)`.
fn ols_on(
    x: &ArrayView2<f64>,
    y: &ArrayView1<f64>,
    idx: &[usize],
) -> Result<(f64, Array1<f64>, usize)> {
    let p = x.ncols();
    let mut design = Array2::<f64>::zeros((idx.len(), p + 1));
    let mut rhs = Array1::<f64>::zeros(idx.len());
    for (row, &i) in idx.iter().enumerate() {
        design[[row, 0]] = 1.0;
        for j in 0..p {
            design[[row, j + 1]] = x[[i, j]];
        }
        rhs[row] = y[i];
    }
    let fit = lstsq(&design.view(), &rhs.view())?;
    let beta0 = fit.solution[0];
    let beta = fit.solution.slice(ndarray::s![1..]).to_owned();
    Ok((beta0, beta, fit.rank))
}

fn squared_residuals(
    x: &ArrayView2<f64>,
    y: &ArrayView1<f64>,
    beta0: f64,
    beta: &Array1<f64>,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.nrows());
    for (row, &yi) in x.rows().into_iter().zip(y.iter()) {
        let pred = beta0 + row.dot(beta);
        let r = yi - pred;
        out.push(r * r);
    }
    out
}

/// Indices of the `h` smallest values, ties broken by the lowest index.
fn smallest_h(values: &[f64], h: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .unwrap()
            .then(a.cmp(&b))
    });
    idx.truncate(h);
    idx.sort_unstable();
    idx
}

/// Evaluates a coefficient vector: canonical retained set and objective.
fn evaluate(
    x: &ArrayView2<f64>,
    y: &ArrayView1<f64>,
    beta0: f64,
    beta: &Array1<f64>,
    h: usize,
) -> (Vec<usize>, f64) {
    let p = x.ncols();
    let res = squared_residuals(x, y, beta0, beta);
    let retained = smallest_h(&res, h);
    let ssr: f64 = retained.iter().map(|&i| res[i]).sum();
    (retained, ssr / (h - p - 1) as f64)
}

struct Candidate {
    beta0: f64,
    beta: Array1<f64>,
    retained: Vec<usize>,
    objective: f64,
    converged: bool,
}

/// One C-step: refit on the retained set, then re-evaluate.
fn c_step(
    x: &ArrayView2<f64>,
    y: &ArrayView1<f64>,
    retained: &[usize],
    h: usize,
) -> Result<Candidate> {
    let (beta0, beta, _) = ols_on(x, y, retained)?;
    let (new_retained, objective) = evaluate(x, y, beta0, &beta, h);
    let converged = new_retained == retained;
    Ok(Candidate {
        beta0,
        beta,
        retained: new_retained,
        objective,
        converged,
    })
}

fn refine_to_fixed_point(
    x: &ArrayView2<f64>,
    y: &ArrayView1<f64>,
    mut cand: Candidate,
    h: usize,
    max_csteps: usize,
) -> Result<Candidate> {
    for _ in 0..max_csteps {
        let next = c_step(x, y, &cand.retained, h)?;
        let done = next.converged;
        cand = next;
        if done {
            cand.converged = true;
            return Ok(cand);
        }
    }
    cand.converged = false;
    Ok(cand)
}

/// Least-trimmed-squares fit by the FAST-LTS randomized search (or by exact
/// enumeration when `cfg.exhaustive` is set).
pub fn lts_fit(x: &ArrayView2<f64>, y: &ArrayView1<f64>, cfg: &LtsConfig) -> Result<LtsFit> {
    cfg.validate()?;
    let (m, p) = check_inputs(x, y)?;
    let h = retained_count(cfg.alpha, m, p);

    if cfg.exhaustive {
        return lts_enumerate(x, y, h);
    }

    if h == m {
        // No trimming: plain OLS.
        let all: Vec<usize> = (0..m).collect();
        let (beta0, beta, _) = ols_on(x, y, &all)?;
        let (retained, objective) = evaluate(x, y, beta0, &beta, h);
        return Ok(LtsFit {
            beta0,
            beta,
            retained,
            h,
            objective,
            converged: true,
        });
    }

    // Elemental starts: OLS through p + 1 random points, two C-steps each.
    let starts: Vec<Option<Candidate>> = (0..cfg.n_starts)
        .into_par_iter()
        .map(|start| {
            let mut rng = stream_rng(cfg.seed, start as u64);
            let subset = rand::seq::index::sample(&mut rng, m, p + 1).into_vec();
            let (beta0, beta, rank) = ols_on(x, y, &subset).ok()?;
            if rank < p + 1 {
                return None;
            }
            let (retained, objective) = evaluate(x, y, beta0, &beta, h);
            let mut cand = Candidate {
                beta0,
                beta,
                retained,
                objective,
                converged: false,
            };
            for _ in 0..2 {
                cand = c_step(x, y, &cand.retained, h).ok()?;
            }
            Some(cand)
        })
        .collect();

    let mut candidates: Vec<(usize, Candidate)> = starts
        .into_iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|c| (i, c)))
        .collect();
    if candidates.is_empty() {
        return Err(Error::SingularDesign);
    }
    candidates.sort_by(|(ia, a), (ib, b)| {
        a.objective
            .partial_cmp(&b.objective)
            .unwrap()
            .then(ia.cmp(ib))
    });
    candidates.truncate(cfg.n_keep);

    let refined: Vec<Result<Candidate>> = candidates
        .into_par_iter()
        .map(|(_, cand)| refine_to_fixed_point(x, y, cand, h, cfg.max_csteps))
        .collect();

    let mut best: Option<Candidate> = None;
    for r in refined {
        let cand = r?;
        let replace = match &best {
            None => true,
            Some(b) => cand.objective < b.objective,
        };
        if replace {
            best = Some(cand);
        }
    }
    let best = best.expect("candidates nonempty");
    Ok(LtsFit {
        beta0: best.beta0,
        beta: best.beta,
        retained: best.retained,
        h,
        objective: best.objective,
        converged: best.converged,
    })
}

fn binomial_f64(m: usize, h: usize) -> f64 {
    let k = h.min(m - h);
    let mut out = 1.0;
    for i in 0..k {
        out = out * (m - i) as f64 / (i + 1) as f64;
        if out > 1e18 {
            return f64::INFINITY;
        }
    }
    out
}

/// Exact LTS by enumerating every size-`h` retained set. The global optimum
/// of the trimmed objective; intended as a test oracle for small instances.
pub fn lts_enumerate(x: &ArrayView2<f64>, y: &ArrayView1<f64>, h: usize) -> Result<LtsFit> {
    let (m, p) = check_inputs(x, y)?;
    if h < p + 2 || h > m {
        return Err(Error::InvalidConfig(format!(
            "lts_enumerate: h={h} outside [{}, {m}]",
            p + 2
        )));
    }
    if binomial_f64(m, h) > 1e6 {
        return Err(Error::TooLarge(format!(
            "C({m}, {h}) exceeds the enumeration guard of 1e6 subsets"
        )));
    }

    // Lexicographic subset enumeration.
    let mut subset: Vec<usize> = (0..h).collect();
    let mut best: Option<(f64, f64, Array1<f64>)> = None; // (objective, beta0, beta)
    loop {
        if let Ok((beta0, beta, _)) = ols_on(x, y, &subset) {
            let mut ssr = 0.0;
            for &i in &subset {
                let pred = beta0 + x.row(i).dot(&beta);
                let r = y[i] - pred;
                ssr += r * r;
            }
            let obj = ssr / (h - p - 1) as f64;
            let replace = match &best {
                None => true,
                Some((b, _, _)) => obj < *b,
            };
            if replace {
                best = Some((obj, beta0, beta));
            }
        }
        // Advance to the next combination.
        let mut i = h;
        let mut advanced = false;
        while i > 0 {
            i -= 1;
            if subset[i] != i + m - h {
                subset[i] += 1;
                for j in (i + 1)..h {
                    subset[j] = subset[j - 1] + 1;
                }
                advanced = true;
                break;
            }
        }
        if !advanced {
            break;
        }
    }
    finish_enumerate(x, y, best, h)
}

fn finish_enumerate(
    x: &ArrayView2<f64>,
    y: &ArrayView1<f64>,
    best: Option<(f64, f64, Array1<f64>)>,
    h: usize,
) -> Result<LtsFit> {
    let (_, beta0, beta) = best.ok_or(Error::SingularDesign)?;
    // Canonical retained set under the optimal coefficients. At the global
    // optimum this coincides with the optimizing subset (up to ties).
    let (retained, objective) = evaluate(x, y, beta0, &beta, h);
    Ok(LtsFit {
        beta0,
        beta,
        retained,
        h,
        objective,
        converged: true,
    })
}

/// Maximum-likelihood error parameters on the retained observations. For the
/// Gaussian family this is the mean squared retained residual (denominator
/// equal to the retained count).
pub fn estimate_error_params(
    fit: &LtsFit,
    x: &ArrayView2<f64>,
    y: &ArrayView1<f64>,
    family: ErrorFamily,
) -> Result<ErrorParams> {
    match family {
        ErrorFamily::Gaussian => {
            let mut ssr = 0.0;
            for &i in &fit.retained {
                let pred = fit.beta0 + x.row(i).dot(&fit.beta);
                let r = y[i] - pred;
                ssr += r * r;
            }
            Ok(ErrorParams::Gaussian {
                sigma: (ssr / fit.retained.len() as f64).sqrt(),
            })
        }
        other => Err(Error::UnsupportedFamily(format!(
            "{other:?}: no estimator shipped; quantile-based estimation for \
             known non-Gaussian families is not implemented"
        ))),
    }
}

/// A plain linear fit produced by the reweighting refinement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReweightedFit {
    pub beta0: f64,
    pub beta: Array1<f64>,
    pub sigma: f64,
    /// Points kept by the reweighting cutoff, ascending.
    pub kept: Vec<usize>,
}

/// Efficiency reweighting on top of a raw LTS fit: the trimmed scale is
/// consistency-corrected for symmetric truncation, points within
/// `cutoff * sigma` are kept, and OLS is refit on them. Raw LTS coefficients
/// are robust but statistically inefficient under Gaussian noise; the refit
/// restores most of the efficiency while keeping the breakdown behavior of
/// the initial trimmed fit.
pub fn reweight_fit(
    x: &ArrayView2<f64>,
    y: &ArrayView1<f64>,
    fit: &LtsFit,
    cutoff: f64,
) -> Result<ReweightedFit> {
    let (m, p) = check_inputs(x, y)?;
    let h = fit.retained.len();
    let mut ssr = 0.0;
    for &i in &fit.retained {
        let pred = fit.beta0 + x.row(i).dot(&fit.beta);
        let r = y[i] - pred;
        ssr += r * r;
    }
    let raw_var = ssr / h as f64;
    let coverage = h as f64 / m as f64;
    let sigma0 = if raw_var > 0.0 && coverage < 1.0 {
        let c_q = normal_quantile((1.0 + coverage) / 2.0);
        (raw_var / truncated_normal_variance(c_q)).sqrt()
    } else {
        raw_var.sqrt()
    };

    let res = squared_residuals(x, y, fit.beta0, &fit.beta);
    let threshold = cutoff * sigma0;
    let mut kept: Vec<usize> = (0..m)
        .filter(|&i| res[i].sqrt() <= threshold)
        .collect();
    if kept.len() < p + 2 {
        kept = fit.retained.clone();
    }
    let (beta0, beta, _) = ols_on(x, y, &kept)?;
    let mut kept_ssr = 0.0;
    for &i in &kept {
        let pred = beta0 + x.row(i).dot(&beta);
        let r = y[i] - pred;
        kept_ssr += r * r;
    }
    let mut sigma = (kept_ssr / kept.len() as f64).sqrt();
    if kept.len() < m {
        sigma /= truncated_normal_variance(cutoff).sqrt();
    }
    Ok(ReweightedFit {
        beta0,
        beta,
        sigma,
        kept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn line_data(
        n_clean: usize,
        n_outliers: usize,
        slope: f64,
        intercept: f64,
        seed: u64,
    ) -> (Array2<f64>, Array1<f64>) {
        let mut rng = stream_rng(seed, 0);
        let n = n_clean + n_outliers;
        let mut x = Array2::<f64>::zeros((n, 1));
        let mut y = Array1::<f64>::zeros(n);
        for i in 0..n {
            let xi = rng.random::<f64>() * 10.0 - 5.0;
            x[[i, 0]] = xi;
            y[i] = intercept + slope * xi;
            if i >= n_clean {
                y[i] += 100.0;
            }
        }
        (x, y)
    }

    /// Closed-form simple-regression OLS for the independent oracle.
    fn hand_ols(x: &[f64], y: &[f64]) -> (f64, f64) {
        let n = x.len() as f64;
        let xm = x.iter().sum::<f64>() / n;
        let ym = y.iter().sum::<f64>() / n;
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - xm) * (b - ym)).sum();
        let sxx: f64 = x.iter().map(|a| (a - xm) * (a - xm)).sum();
        let slope = sxy / sxx;
        (ym - slope * xm, slope)
    }

    #[test]
    fn alpha_one_equals_ols() {
        let mut rng = stream_rng(40, 0);
        let n = 30;
        let x = Array2::from_shape_fn((n, 2), |_| rng.random::<f64>() * 4.0 - 2.0);
        let y = Array1::from_shape_fn(n, |i| {
            1.5 + 2.0 * x[[i, 0]] - x[[i, 1]] + 0.1 * rng.sample::<f64, _>(StandardNormal)
        });
        let cfg = LtsConfig {
            alpha: 1.0,
            ..Default::default()
        };
        let fit = lts_fit(&x.view(), &y.view(), &cfg).unwrap();
        assert_eq!(fit.h, n);
        assert_eq!(fit.retained.len(), n);
        let all: Vec<usize> = (0..n).collect();
        let (b0, b, _) = ols_on(&x.view(), &y.view(), &all).unwrap();
        assert!((fit.beta0 - b0).abs() < 1e-8);
        for j in 0..2 {
            assert!((fit.beta[j] - b[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn exhaustive_matches_independent_enumeration() {
        // n = 12, p = 1: compare against a from-scratch enumeration using
        // closed-form simple-regression OLS.
        let mut rng = stream_rng(41, 0);
        let n = 12;
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
        let ys: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let noise = rng.random::<f64>() - 0.5;
                if i % 4 == 0 {
                    10.0 + noise * 8.0
                } else {
                    1.0 + 2.0 * x + noise
                }
            })
            .collect();
        let x = Array2::from_shape_fn((n, 1), |(i, _)| xs[i]);
        let y = Array1::from_vec(ys.clone());

        let cfg = LtsConfig {
            alpha: 0.5,
            exhaustive: true,
            ..Default::default()
        };
        let fit = lts_fit(&x.view(), &y.view(), &cfg).unwrap();
        let h = retained_count(0.5, n, 1);
        assert_eq!(h, 7);

        // Independent oracle: all C(12,7) subsets, hand OLS on each.
        let mut best = f64::INFINITY;
        let idx: Vec<usize> = (0..n).collect();
        let mut comb: Vec<usize> = (0..h).collect();
        loop {
            let sx: Vec<f64> = comb.iter().map(|&i| xs[idx[i]]).collect();
            let sy: Vec<f64> = comb.iter().map(|&i| ys[idx[i]]).collect();
            let (b0, b1) = hand_ols(&sx, &sy);
            let ssr: f64 = sx
                .iter()
                .zip(&sy)
                .map(|(&xi, &yi)| {
                    let r = yi - b0 - b1 * xi;
                    r * r
                })
                .sum();
            let obj = ssr / (h - 2) as f64;
            if obj < best {
                best = obj;
            }
            // next combination
            let mut i = h;
            let mut advanced = false;
            while i > 0 {
                i -= 1;
                if comb[i] != i + n - h {
                    comb[i] += 1;
                    for j in (i + 1)..h {
                        comb[j] = comb[j - 1] + 1;
                    }
                    advanced = true;
                    break;
                }
            }
            if !advanced {
                break;
            }
        }
        assert!(
            (fit.objective - best).abs() < 1e-12,
            "exhaustive {} vs oracle {}",
            fit.objective,
            best
        );
    }

    #[test]
    fn planted_line_with_gross_outliers_recovered_exactly() {
        let (x, y) = line_data(60, 25, 2.0, 1.0, 42);
        let cfg = LtsConfig {
            alpha: 0.5,
            seed: 7,
            ..Default::default()
        };
        let fit = lts_fit(&x.view(), &y.view(), &cfg).unwrap();
        assert_eq!(fit.h, retained_count(0.5, 85, 1));
        assert_eq!(fit.h, 43);
        assert!((fit.beta0 - 1.0).abs() < 1e-6, "beta0={}", fit.beta0);
        assert!((fit.beta[0] - 2.0).abs() < 1e-6, "beta={}", fit.beta[0]);
        // Zero-noise construction: retained residuals vanish.
        let sigma = estimate_error_params(&fit, &x.view(), &y.view(), ErrorFamily::Gaussian)
            .unwrap()
            .sigma();
        assert!(sigma * sigma < 1e-10);
    }

    #[test]
    fn error_params_hand_values() {
        // sigma^2 is the mean squared retained residual: residuals
        // {1, -1, 1, -1} about the fit give exactly 1.
        let x = Array2::from_shape_fn((4, 1), |(i, _)| i as f64);
        let y = array![1.0, -1.0, 1.0, -1.0];
        let fit = LtsFit {
            beta0: 0.0,
            beta: array![0.0],
            retained: vec![0, 1, 2, 3],
            h: 4,
            objective: 2.0,
            converged: true,
        };
        let theta = estimate_error_params(&fit, &x.view(), &y.view(), ErrorFamily::Gaussian)
            .unwrap();
        assert!((theta.sigma() - 1.0).abs() < 1e-15);

        let yz = array![0.0, 0.0, 0.0, 0.0];
        let theta = estimate_error_params(&fit, &x.view(), &yz.view(), ErrorFamily::Gaussian)
            .unwrap();
        assert_eq!(theta.sigma(), 0.0);
    }

    #[test]
    fn unsupported_family_is_an_error() {
        let x = Array2::from_shape_fn((4, 1), |(i, _)| i as f64);
        let y = array![0.0, 1.0, 2.0, 3.0];
        let fit = LtsFit {
            beta0: 0.0,
            beta: array![1.0],
            retained: vec![0, 1, 2, 3],
            h: 4,
            objective: 0.0,
            converged: true,
        };
        match estimate_error_params(&fit, &x.view(), &y.view(), ErrorFamily::Laplace) {
            Err(Error::UnsupportedFamily(_)) => {}
            other => panic!("expected UnsupportedFamily, got {other:?}"),
        }
    }

    #[test]
    fn enumerate_full_h_is_ols() {
        let mut rng = stream_rng(43, 0);
        let n = 8;
        let x = Array2::from_shape_fn((n, 1), |_| rng.random::<f64>() * 2.0);
        let y = Array1::from_shape_fn(n, |i| 3.0 - x[[i, 0]] + 0.01 * rng.random::<f64>());
        let fit = lts_enumerate(&x.view(), &y.view(), n).unwrap();
        let all: Vec<usize> = (0..n).collect();
        let (b0, b, _) = ols_on(&x.view(), &y.view(), &all).unwrap();
        assert!((fit.beta0 - b0).abs() < 1e-12);
        assert!((fit.beta[0] - b[0]).abs() < 1e-12);
    }

    #[test]
    fn enumerate_excludes_obvious_outlier() {
        // Five points on a line plus one far off it; h = 4 must retain only
        // clean points.
        let x = Array2::from_shape_fn((6, 1), |(i, _)| i as f64);
        let y = array![0.0, 1.0, 2.0, 3.0, 4.0, 50.0];
        let fit = lts_enumerate(&x.view(), &y.view(), 4).unwrap();
        assert!(!fit.retained.contains(&5));
        assert!(fit.objective < 1e-20);
        assert!((fit.beta[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn enumerate_guard_rejects_large_instances() {
        let x = Array2::<f64>::zeros((60, 1));
        let y = Array1::<f64>::zeros(60);
        match lts_enumerate(&x.view(), &y.view(), 30) {
            Err(Error::TooLarge(_)) => {}
            other => panic!("expected TooLarge, got {other:?}"),
        }
    }

    #[test]
    fn fast_matches_exhaustive_on_small_instances() {
        let mut rng = stream_rng(44, 0);
        let mut matched = 0;
        let trials = 40;
        for t in 0..trials {
            let n = 8 + (t % 5);
            let x = Array2::from_shape_fn((n, 1), |_| rng.random::<f64>() * 4.0 - 2.0);
            let y = Array1::from_shape_fn(n, |i| {
                if rng.random::<f64>() < 0.25 {
                    rng.random::<f64>() * 20.0
                } else {
                    0.5 + 1.5 * x[[i, 0]] + 0.05 * rng.sample::<f64, _>(StandardNormal)
                }
            });
            let exact = lts_fit(
                &x.view(),
                &y.view(),
                &LtsConfig {
                    exhaustive: true,
                    ..Default::default()
                },
            )
            .unwrap();
            let fast = lts_fit(&x.view(), &y.view(), &LtsConfig::default()).unwrap();
            assert!(fast.objective >= exact.objective - 1e-12);
            if (fast.objective - exact.objective).abs() < 1e-9 {
                matched += 1;
            }
        }
        assert!(matched >= trials - 1, "FAST-LTS matched {matched}/{trials}");
    }

    #[test]
    fn c_steps_never_increase_objective() {
        let mut rng = stream_rng(45, 0);
        for _ in 0..30 {
            let n = 40;
            let x = Array2::from_shape_fn((n, 2), |_| rng.random::<f64>() * 4.0 - 2.0);
            let y = Array1::from_shape_fn(n, |i| {
                if rng.random::<f64>() < 0.3 {
                    rng.random::<f64>() * 30.0 - 15.0
                } else {
                    x[[i, 0]] - 2.0 * x[[i, 1]] + 0.2 * rng.sample::<f64, _>(StandardNormal)
                }
            });
            let h = retained_count(0.5, n, 2);
            let start: Vec<usize> = rand::seq::index::sample(&mut rng, n, 3).into_vec();
            let Ok((b0, b, rank)) = ols_on(&x.view(), &y.view(), &start) else {
                continue;
            };
            if rank < 3 {
                continue;
            }
            let (retained, mut obj) = evaluate(&x.view(), &y.view(), b0, &b, h);
            let mut current = retained;
            for _ in 0..20 {
                let cand = c_step(&x.view(), &y.view(), &current, h).unwrap();
                assert!(
                    cand.objective <= obj + 1e-12,
                    "C-step increased: {obj} -> {}",
                    cand.objective
                );
                let done = cand.converged;
                obj = cand.objective;
                current = cand.retained;
                if done {
                    break;
                }
            }
        }
    }

    #[test]
    fn retained_set_is_consistent_with_coefficients() {
        let mut rng = stream_rng(46, 0);
        for trial in 0..20 {
            let n = 25;
            let x = Array2::from_shape_fn((n, 2), |_| rng.random::<f64>() * 4.0 - 2.0);
            let y = Array1::from_shape_fn(n, |i| {
                x[[i, 0]] + x[[i, 1]] + rng.sample::<f64, _>(StandardNormal)
            });
            let fit = lts_fit(
                &x.view(),
                &y.view(),
                &LtsConfig {
                    seed: trial,
                    n_starts: 50,
                    n_keep: 5,
                    ..Default::default()
                },
            )
            .unwrap();
            // Invariants: |retained| = h; retained are the h smallest
            // residuals; objective recomputes from the triple.
            assert_eq!(fit.retained.len(), fit.h);
            let res = squared_residuals(&x.view(), &y.view(), fit.beta0, &fit.beta);
            let expect = smallest_h(&res, fit.h);
            assert_eq!(fit.retained, expect);
            let ssr: f64 = fit.retained.iter().map(|&i| res[i]).sum();
            let obj = ssr / (fit.h - 3) as f64;
            assert!((obj - fit.objective).abs() < 1e-10);
        }
    }

    #[test]
    fn affine_equivariance() {
        // Noisy data: exact residual ties would make the retained set
        // depend on rounding rather than the tie-break rule.
        let mut rng = stream_rng(47, 0);
        let n = 40;
        let x = Array2::from_shape_fn((n, 1), |_| rng.random::<f64>() * 10.0 - 5.0);
        let y = Array1::from_shape_fn(n, |i| {
            let base = 2.0 - x[[i, 0]] + 0.3 * rng.sample::<f64, _>(StandardNormal);
            if i % 4 == 0 {
                base + 60.0
            } else {
                base
            }
        });
        let cfg = LtsConfig {
            seed: 3,
            n_starts: 200,
            ..Default::default()
        };
        let base = lts_fit(&x.view(), &y.view(), &cfg).unwrap();
        let (a, b) = (-2.5, 4.0);
        let y2 = y.mapv(|v| a * v + b);
        let scaled = lts_fit(&x.view(), &y2.view(), &cfg).unwrap();
        assert_eq!(base.retained, scaled.retained);
        assert!((scaled.beta0 - (a * base.beta0 + b)).abs() < 1e-9);
        assert!((scaled.beta[0] - a * base.beta[0]).abs() < 1e-9);
    }

    #[test]
    fn too_few_points_rejected() {
        let x = Array2::<f64>::zeros((2, 1));
        let y = Array1::<f64>::zeros(2);
        match lts_fit(&x.view(), &y.view(), &LtsConfig::default()) {
            Err(Error::TooFewPoints { .. }) => {}
            other => panic!("expected TooFewPoints, got {other:?}"),
        }
    }

    #[test]
    fn constant_covariate_is_singular() {
        let x = Array2::<f64>::ones((10, 1));
        let y = Array1::from_shape_fn(10, |i| i as f64);
        match lts_fit(&x.view(), &y.view(), &LtsConfig::default()) {
            Err(Error::SingularDesign) => {}
            other => panic!("expected SingularDesign, got {other:?}"),
        }
    }

    #[test]
    fn reweighting_restores_efficiency_scale() {
        let mut rng = stream_rng(48, 0);
        let n = 400;
        let x = Array2::from_shape_fn((n, 1), |_| rng.random::<f64>() * 6.0 - 3.0);
        let y = Array1::from_shape_fn(n, |i| {
            1.0 + 2.0 * x[[i, 0]] + 0.5 * rng.sample::<f64, _>(StandardNormal)
        });
        let fit = lts_fit(&x.view(), &y.view(), &LtsConfig::default()).unwrap();
        let rw = reweight_fit(&x.view(), &y.view(), &fit, 2.5).unwrap();
        assert!((rw.beta0 - 1.0).abs() < 0.15);
        assert!((rw.beta[0] - 2.0).abs() < 0.1);
        assert!((rw.sigma - 0.5).abs() < 0.08, "sigma={}", rw.sigma);
        assert!(rw.kept.len() > fit.h);
    }

    #[test]
    fn reweighting_preserves_breakdown() {
        let (x, y) = line_data(60, 25, 2.0, 1.0, 49);
        let fit = lts_fit(&x.view(), &y.view(), &LtsConfig::default()).unwrap();
        let rw = reweight_fit(&x.view(), &y.view(), &fit, 2.5).unwrap();
        assert!((rw.beta0 - 1.0).abs() < 1e-6);
        assert!((rw.beta[0] - 2.0).abs() < 1e-6);
        // No outlier sneaks back in.
        assert!(rw.kept.iter().all(|&i| i < 60));
    }
}
