//! Benchmark metrics: permutation-matched coefficient error and prediction
//! error relative to the true conditional mean.

use ndarray::{ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::simbench::hungarian::min_cost_assignment;

/// Mean squared coefficient error, matched over expert relabelings: the
/// minimum over permutations of the per-coefficient squared error, averaged
/// over experts. Each row stacks one expert's coefficient vector (intercept
/// first), so with rows of length `p + 1` this is
/// `min_perm sum_k ||est[perm(k)] - truth[k]||^2 / (K (p + 1))`.
/// Matching is applied regardless of whether the estimator anchors experts
/// to clusters; for anchored estimators it is the identity whenever the
/// anchoring is correct.
pub fn coefficient_mse(est: &ArrayView2<f64>, truth: &ArrayView2<f64>) -> Result<f64> {
    if est.dim() != truth.dim() {
        return Err(Error::DimensionMismatch(format!(
            "coefficient matrices disagree: {:?} vs {:?}",
            est.dim(),
            truth.dim()
        )));
    }
    let k = est.nrows();
    let width = est.ncols() as f64;
    let mut cost = ndarray::Array2::<f64>::zeros((k, k));
    for a in 0..k {
        for b in 0..k {
            let mut d = 0.0;
            for j in 0..est.ncols() {
                let diff = est[[a, j]] - truth[[b, j]];
                d += diff * diff;
            }
            cost[[a, b]] = d / width;
        }
    }
    let (_, total) = min_cost_assignment(&cost.view())?;
    Ok(total / k as f64)
}

/// Test squared error divided by the squared error of the true conditional
/// mean; 1.0 is the oracle floor in expectation.
pub fn relative_prediction_error(
    y_test: &ArrayView1<f64>,
    yhat: &ArrayView1<f64>,
    ytrue_mean: &ArrayView1<f64>,
) -> Result<f64> {
    let n = y_test.len();
    if yhat.len() != n || ytrue_mean.len() != n {
        return Err(Error::DimensionMismatch(
            "relative prediction error: length mismatch".into(),
        ));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        let e = y_test[i] - yhat[i];
        num += e * e;
        let o = y_test[i] - ytrue_mean[i];
        den += o * o;
    }
    if den == 0.0 {
        return Err(Error::ZeroDenominator("relative prediction error"));
    }
    Ok(num / den)
}

/// Plain mean squared prediction error.
pub fn prediction_error(y_test: &ArrayView1<f64>, yhat: &ArrayView1<f64>) -> Result<f64> {
    let n = y_test.len();
    if yhat.len() != n {
        return Err(Error::DimensionMismatch(
            "prediction error: length mismatch".into(),
        ));
    }
    if n == 0 {
        return Err(Error::ZeroDenominator("prediction error"));
    }
    let mut total = 0.0;
    for i in 0..n {
        let e = y_test[i] - yhat[i];
        total += e * e;
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use ndarray::{array, Array1, Array2};
    use rand::Rng;

    #[test]
    fn mse_zero_when_equal_or_permuted() {
        let truth = array![[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]];
        assert_eq!(coefficient_mse(&truth.view(), &truth.view()).unwrap(), 0.0);
        // Cyclic shift of the rows is matched away.
        let shifted = array![[0.5, 0.5], [0.0, 1.0], [2.0, -1.0]];
        let mse = coefficient_mse(&shifted.view(), &truth.view()).unwrap();
        assert!(mse < 1e-12);
    }

    #[test]
    fn mse_hand_two_expert_case() {
        // p = 1: truth experts (0,0) and (1,1); estimates (1,1) and (0,2).
        // Pairing est0<->truth1, est1<->truth0: (0 + 4)/2 summed, /K = 1.
        // Pairing est0<->truth0, est1<->truth1: (2 + 2)/2 summed, /K = 1.
        // Both pairings tie at 1.
        let truth = array![[0.0, 0.0], [1.0, 1.0]];
        let est = array![[1.0, 1.0], [0.0, 2.0]];
        let mse = coefficient_mse(&est.view(), &truth.view()).unwrap();
        assert!((mse - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mse_is_permutation_invariant_random() {
        let mut rng = stream_rng(130, 0);
        for _ in 0..20 {
            let k = 5;
            let truth = Array2::from_shape_fn((k, 3), |_| rng.random::<f64>() * 2.0 - 1.0);
            let mut order: Vec<usize> = (0..k).collect();
            for i in (1..k).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            let est = Array2::from_shape_fn((k, 3), |(i, j)| truth[[order[i], j]]);
            let mse = coefficient_mse(&est.view(), &truth.view()).unwrap();
            assert!(mse < 1e-12);
        }
    }

    #[test]
    fn rpe_oracle_predictions_score_one() {
        let mut rng = stream_rng(131, 0);
        let n = 500;
        let ytrue = Array1::from_shape_fn(n, |_| rng.random::<f64>() * 2.0);
        let y = Array1::from_shape_fn(n, |i| ytrue[i] + rng.random::<f64>() - 0.5);
        let rpe = relative_prediction_error(&y.view(), &ytrue.view(), &ytrue.view()).unwrap();
        assert!((rpe - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pe_exact_predictions_score_zero() {
        let y = array![1.0, 2.0, 3.0];
        assert_eq!(prediction_error(&y.view(), &y.view()).unwrap(), 0.0);
    }

    #[test]
    fn metrics_match_naive_loops() {
        let mut rng = stream_rng(132, 0);
        let n = 40;
        let y = Array1::from_shape_fn(n, |_| rng.random::<f64>());
        let yhat = Array1::from_shape_fn(n, |_| rng.random::<f64>());
        let ymean = Array1::from_shape_fn(n, |_| rng.random::<f64>());
        let naive_num: f64 = (0..n).map(|i| (y[i] - yhat[i]).powi(2)).sum();
        let naive_den: f64 = (0..n).map(|i| (y[i] - ymean[i]).powi(2)).sum();
        let rpe = relative_prediction_error(&y.view(), &yhat.view(), &ymean.view()).unwrap();
        assert!((rpe - naive_num / naive_den).abs() < 1e-12);
        let pe = prediction_error(&y.view(), &yhat.view()).unwrap();
        assert!((pe - naive_num / n as f64).abs() < 1e-12);
    }

    #[test]
    fn rpe_zero_denominator_is_an_error() {
        let y = array![1.0, 2.0];
        let yhat = array![1.5, 2.5];
        match relative_prediction_error(&y.view(), &yhat.view(), &y.view()) {
            Err(Error::ZeroDenominator(_)) => {}
            other => panic!("expected ZeroDenominator, got {other:?}"),
        }
    }
}
