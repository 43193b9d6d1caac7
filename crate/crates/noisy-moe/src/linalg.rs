//! Small dense linear-algebra kernels.
//!
//! The matrices in this crate are tiny (covariates have a handful of
//! dimensions), so hand-rolled factorizations are both fast and dependency
//! free. Everything here is deterministic: no BLAS, no threading inside a
//! factorization, and summations with a fixed reduction tree.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
/// Returns `None` when a pivot is not strictly positive.
pub fn cholesky(a: &ArrayView2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return None;
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let dj = d.sqrt();
        l[[j, j]] = dj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / dj;
        }
    }
    Some(l)
}

/// Solves `L L^T x = b` given the lower Cholesky factor.
pub fn cholesky_solve(l: &Array2<f64>, b: &ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = b.to_owned();
    for i in 0..n {
        for k in 0..i {
            let v = y[k];
            y[i] -= l[[i, k]] * v;
        }
        y[i] /= l[[i, i]];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let v = y[k];
            y[i] -= l[[k, i]] * v;
        }
        y[i] /= l[[i, i]];
    }
    y
}

/// log det(A) from the lower Cholesky factor of A.
pub fn cholesky_log_det(l: &Array2<f64>) -> f64 {
    2.0 * (0..l.nrows()).map(|i| l[[i, i]].ln()).sum::<f64>()
}

/// Thin Householder QR of a square matrix; returns `(q, r)` with `q`
/// orthogonal and `r` upper triangular, using the sign convention that the
/// diagonal of `r` is nonnegative.
pub fn qr_square(a: &ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "qr_square requires a square matrix");
    let mut r = a.to_owned();
    let mut q = Array2::<f64>::eye(n);
    let mut v = vec![0.0; n];
    for k in 0..n {
        let mut norm = 0.0;
        for i in k..n {
            norm += r[[i, k]] * r[[i, k]];
        }
        let norm = norm.sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if r[[k, k]] >= 0.0 { -norm } else { norm };
        let mut vsq = 0.0;
        for i in k..n {
            v[i] = r[[i, k]];
            if i == k {
                v[i] -= alpha;
            }
            vsq += v[i] * v[i];
        }
        if vsq == 0.0 {
            continue;
        }
        // Apply the reflector to R (columns k..) and accumulate into Q.
        for j in k..n {
            let mut dot = 0.0;
            for i in k..n {
                dot += v[i] * r[[i, j]];
            }
            let scale = 2.0 * dot / vsq;
            for i in k..n {
                r[[i, j]] -= scale * v[i];
            }
        }
        for j in 0..n {
            let mut dot = 0.0;
            for i in k..n {
                dot += v[i] * q[[j, i]];
            }
            let scale = 2.0 * dot / vsq;
            for i in k..n {
                q[[j, i]] -= scale * v[i];
            }
        }
        r[[k, k]] = alpha;
        for i in (k + 1)..n {
            r[[i, k]] = 0.0;
        }
    }
    // Fix signs so diag(R) >= 0.
    for k in 0..n {
        if r[[k, k]] < 0.0 {
            for j in k..n {
                r[[k, j]] = -r[[k, j]];
            }
            for i in 0..n {
                q[[i, k]] = -q[[i, k]];
            }
        }
    }
    (q, r)
}

/// Least-squares solution of `a x ~= b`.
pub struct Lstsq {
    pub solution: Array1<f64>,
    /// Numerical rank detected by the column-pivoted factorization.
    pub rank: usize,
}

/// Minimum-norm least squares via column-pivoted Householder QR, completed
/// orthogonally when the design is rank-deficient.
pub fn lstsq(a: &ArrayView2<f64>, b: &ArrayView1<f64>) -> Result<Lstsq> {
    let m = a.nrows();
    let n = a.ncols();
    if b.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "lstsq: {m} rows in the design but {} responses",
            b.len()
        )));
    }
    if m == 0 || n == 0 {
        return Err(Error::DimensionMismatch("lstsq: empty system".into()));
    }
    let mut r = a.to_owned();
    let mut qtb = b.to_owned();
    let mut jpvt: Vec<usize> = (0..n).collect();
    let kmax = m.min(n);
    let mut v = vec![0.0; m];
    for k in 0..kmax {
        // Column pivot: bring the column with the largest remaining norm up.
        let mut best = k;
        let mut best_norm = -1.0;
        for j in k..n {
            let mut s = 0.0;
            for i in k..m {
                s += r[[i, j]] * r[[i, j]];
            }
            if s > best_norm {
                best_norm = s;
                best = j;
            }
        }
        if best != k {
            for i in 0..m {
                r.swap([i, k], [i, best]);
            }
            jpvt.swap(k, best);
        }
        let norm = best_norm.max(0.0).sqrt();
        if norm == 0.0 {
            break;
        }
        let alpha = if r[[k, k]] >= 0.0 { -norm } else { norm };
        let mut vsq = 0.0;
        for i in k..m {
            v[i] = r[[i, k]];
            if i == k {
                v[i] -= alpha;
            }
            vsq += v[i] * v[i];
        }
        if vsq > 0.0 {
            for j in k..n {
                let mut dot = 0.0;
                for i in k..m {
                    dot += v[i] * r[[i, j]];
                }
                let scale = 2.0 * dot / vsq;
                for i in k..m {
                    r[[i, j]] -= scale * v[i];
                }
            }
            let mut dot = 0.0;
            for i in k..m {
                dot += v[i] * qtb[i];
            }
            let scale = 2.0 * dot / vsq;
            for i in k..m {
                qtb[i] -= scale * v[i];
            }
        }
        r[[k, k]] = alpha;
        for i in (k + 1)..m {
            r[[i, k]] = 0.0;
        }
    }
    // Numerical rank from the pivoted diagonal.
    let tol = f64::EPSILON * (m.max(n) as f64) * r[[0, 0]].abs();
    let mut rank = 0;
    for k in 0..kmax {
        if r[[k, k]].abs() > tol {
            rank += 1;
        } else {
            break;
        }
    }
    if rank == 0 {
        // Zero design: minimum-norm solution is zero.
        return Ok(Lstsq {
            solution: Array1::zeros(n),
            rank: 0,
        });
    }

    let mut z = Array1::<f64>::zeros(n);
    if rank == n {
        for i in (0..n).rev() {
            let mut s = qtb[i];
            for j in (i + 1)..n {
                s -= r[[i, j]] * z[j];
            }
            z[i] = s / r[[i, i]];
        }
    } else {
        // Complete orthogonal decomposition: factor T^T = Q2 R2 where
        // T = R[0..rank, 0..n]; the minimum-norm solution of T z = c is
        // z = Q2 (R2^{-T} c).
        let mut tt = Array2::<f64>::zeros((n, rank));
        for i in 0..rank {
            for j in 0..n {
                tt[[j, i]] = r[[i, j]];
            }
        }
        let (q2, r2) = qr_thin(&tt);
        // Forward-substitute R2^T u = c.
        let mut u = Array1::<f64>::zeros(rank);
        for i in 0..rank {
            let mut s = qtb[i];
            for j in 0..i {
                s -= r2[[j, i]] * u[j];
            }
            u[i] = s / r2[[i, i]];
        }
        for j in 0..n {
            let mut s = 0.0;
            for i in 0..rank {
                s += q2[[j, i]] * u[i];
            }
            z[j] = s;
        }
    }
    let mut solution = Array1::<f64>::zeros(n);
    for j in 0..n {
        solution[jpvt[j]] = z[j];
    }
    Ok(Lstsq { solution, rank })
}

/// Thin Householder QR of an m x n matrix with m >= n and full column rank:
/// returns `(q, r)` with `q` m x n having orthonormal columns.
fn qr_thin(a: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let m = a.nrows();
    let n = a.ncols();
    debug_assert!(m >= n);
    let mut r = a.clone();
    let mut reflectors: Vec<(usize, Vec<f64>, f64)> = Vec::with_capacity(n);
    for k in 0..n {
        let mut norm = 0.0;
        for i in k..m {
            norm += r[[i, k]] * r[[i, k]];
        }
        let norm = norm.sqrt();
        if norm == 0.0 {
            reflectors.push((k, Vec::new(), 0.0));
            continue;
        }
        let alpha = if r[[k, k]] >= 0.0 { -norm } else { norm };
        let mut v = vec![0.0; m - k];
        let mut vsq = 0.0;
        for i in k..m {
            v[i - k] = r[[i, k]];
            if i == k {
                v[i - k] -= alpha;
            }
            vsq += v[i - k] * v[i - k];
        }
        for j in k..n {
            let mut dot = 0.0;
            for i in k..m {
                dot += v[i - k] * r[[i, j]];
            }
            let scale = 2.0 * dot / vsq;
            for i in k..m {
                r[[i, j]] -= scale * v[i - k];
            }
        }
        r[[k, k]] = alpha;
        for i in (k + 1)..m {
            r[[i, k]] = 0.0;
        }
        reflectors.push((k, v, vsq));
    }
    // Form the thin Q by applying the reflectors to the first n identity cols.
    let mut q = Array2::<f64>::zeros((m, n));
    for j in 0..n {
        q[[j, j]] = 1.0;
    }
    for (k, v, vsq) in reflectors.iter().rev() {
        if v.is_empty() || *vsq == 0.0 {
            continue;
        }
        for j in 0..n {
            let mut dot = 0.0;
            for i in *k..m {
                dot += v[i - *k] * q[[i, j]];
            }
            let scale = 2.0 * dot / vsq;
            for i in *k..m {
                q[[i, j]] -= scale * v[i - *k];
            }
        }
    }
    let r_out = r.slice(ndarray::s![..n, ..n]).to_owned();
    (q, r_out)
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method, ascending.
pub fn sym_eigenvalues(a: &ArrayView2<f64>) -> Array1<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut m = a.to_owned();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + m.diag().iter().map(|d| d.abs()).fold(0.0, f64::max)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = m.diag().to_vec();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Array1::from_vec(eig)
}

/// Sum with a fixed pairwise reduction tree. The result depends only on the
/// values and their order, never on chunking or thread count.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BASE: usize = 64;
    if values.len() <= BASE {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Pairwise combination of per-chunk partial results. `partials` must be in
/// chunk order; the combine tree is fixed by the number of chunks.
pub fn pairwise_combine<T, F: Fn(T, T) -> T + Copy>(mut partials: Vec<T>, combine: F) -> Option<T> {
    if partials.is_empty() {
        return None;
    }
    while partials.len() > 1 {
        let mut next = Vec::with_capacity(partials.len().div_ceil(2));
        let mut iter = partials.into_iter();
        while let Some(a) = iter.next() {
            match iter.next() {
                Some(b) => next.push(combine(a, b)),
                None => next.push(a),
            }
        }
        partials = next;
    }
    partials.pop()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn random_matrix(rng: &mut impl Rng, m: usize, n: usize) -> Array2<f64> {
        Array2::from_shape_fn((m, n), |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn cholesky_round_trip() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let l = cholesky(&a.view()).expect("SPD");
        let rebuilt = l.dot(&l.t());
        for ((i, j), v) in rebuilt.indexed_iter() {
            assert!((v - a[[i, j]]).abs() < 1e-12);
        }
        let b = array![1.0, -2.0, 0.5];
        let x = cholesky_solve(&l, &b.view());
        let ax = a.dot(&x);
        for i in 0..3 {
            assert!((ax[i] - b[i]).abs() < 1e-12);
        }
        let dettrue = {
            // direct 3x3 determinant
            let m = &a;
            m[[0, 0]] * (m[[1, 1]] * m[[2, 2]] - m[[1, 2]] * m[[2, 1]])
                - m[[0, 1]] * (m[[1, 0]] * m[[2, 2]] - m[[1, 2]] * m[[2, 0]])
                + m[[0, 2]] * (m[[1, 0]] * m[[2, 1]] - m[[1, 1]] * m[[2, 0]])
        };
        assert!((cholesky_log_det(&l) - dettrue.ln()).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(&a.view()).is_none());
    }

    #[test]
    fn qr_square_orthogonal_with_positive_diagonal() {
        let mut rng = crate::rng::stream_rng(11, 0);
        for _ in 0..20 {
            let a = random_matrix(&mut rng, 4, 4);
            let (q, r) = qr_square(&a.view());
            let qtq = q.t().dot(&q);
            for ((i, j), v) in qtq.indexed_iter() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-12, "Q not orthogonal");
            }
            let rebuilt = q.dot(&r);
            for ((i, j), v) in rebuilt.indexed_iter() {
                assert!((v - a[[i, j]]).abs() < 1e-11, "QR != A");
            }
            for k in 0..4 {
                assert!(r[[k, k]] >= 0.0, "sign convention");
            }
        }
    }

    #[test]
    fn lstsq_matches_normal_equations_full_rank() {
        let mut rng = crate::rng::stream_rng(12, 0);
        for _ in 0..25 {
            let a = random_matrix(&mut rng, 12, 4);
            let b = Array1::from_shape_fn(12, |_| rng.random::<f64>() * 2.0 - 1.0);
            let fit = lstsq(&a.view(), &b.view()).unwrap();
            assert_eq!(fit.rank, 4);
            let ata = a.t().dot(&a);
            let atb = a.t().dot(&b);
            let l = cholesky(&ata.view()).unwrap();
            let x_ne = cholesky_solve(&l, &atb.view());
            for j in 0..4 {
                assert!((fit.solution[j] - x_ne[j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn lstsq_minimum_norm_on_duplicate_columns() {
        // Design [c, c]: any (x1, x2) with x1 + x2 = 1 fits y = c exactly;
        // the minimum-norm solution splits the coefficient evenly.
        let c = array![1.0, 2.0, 3.0, 4.0];
        let a = Array2::from_shape_fn((4, 2), |(i, _)| c[i]);
        let fit = lstsq(&a.view(), &c.view()).unwrap();
        assert_eq!(fit.rank, 1);
        assert!((fit.solution[0] - 0.5).abs() < 1e-12);
        assert!((fit.solution[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn lstsq_zero_design() {
        let a = Array2::<f64>::zeros((3, 2));
        let b = array![1.0, 1.0, 1.0];
        let fit = lstsq(&a.view(), &b.view()).unwrap();
        assert_eq!(fit.rank, 0);
        assert_eq!(fit.solution, array![0.0, 0.0]);
    }

    #[test]
    fn jacobi_eigenvalues_match_known() {
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        let e = sym_eigenvalues(&a.view());
        assert!((e[0] - 1.0).abs() < 1e-10);
        assert!((e[1] - 3.0).abs() < 1e-10);
        // Diagonal matrix: eigenvalues are the entries.
        let d = array![[0.5, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, -1.0]];
        let e = sym_eigenvalues(&d.view());
        assert!((e[0] + 1.0).abs() < 1e-12);
        assert!((e[1] - 0.5).abs() < 1e-12);
        assert!((e[2] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn pairwise_sum_matches_naive_and_is_chunk_stable() {
        let mut rng = crate::rng::stream_rng(13, 0);
        let xs: Vec<f64> = (0..1000).map(|_| rng.random::<f64>() - 0.5).collect();
        let naive: f64 = xs.iter().sum();
        let pw = pairwise_sum(&xs);
        assert!((pw - naive).abs() < 1e-9);
        assert_eq!(pw, pairwise_sum(&xs), "deterministic");
    }

    #[test]
    fn pairwise_combine_folds_in_order() {
        let parts = vec![vec![1], vec![2], vec![3], vec![4], vec![5]];
        let combined = pairwise_combine(parts, |mut a, b| {
            a.extend(b);
            a
        })
        .unwrap();
        assert_eq!(combined, vec![1, 2, 3, 4, 5]);
    }
}
