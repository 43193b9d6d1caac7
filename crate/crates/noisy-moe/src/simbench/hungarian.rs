//! Exact minimum-cost assignment in O(K^3) via shortest augmenting paths
//! with dual potentials.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

const MAX_DIM: usize = 64;

/// Solves the square assignment problem exactly: returns the permutation
/// `perm` (row `i` is assigned column `perm[i]`) minimizing the total cost,
/// together with that cost.
pub fn min_cost_assignment(cost: &ArrayView2<f64>) -> Result<(Vec<usize>, f64)> {
    let n = cost.nrows();
    if n == 0 || cost.ncols() != n {
        return Err(Error::DimensionMismatch(
            "assignment requires a nonempty square cost matrix".into(),
        ));
    }
    if n > MAX_DIM {
        return Err(Error::TooLarge(format!(
            "assignment guard: {n} exceeds the supported dimension {MAX_DIM}"
        )));
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("assignment cost matrix"));
    }

    // 1-indexed arrays; p[j] is the row matched to column j (0 = none).
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    let total = (0..n).map(|i| cost[[i, perm[i]]]).sum();
    Ok((perm, total))
}
