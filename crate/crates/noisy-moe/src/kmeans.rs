//! k-means++ seeding and Lloyd iterations, used to initialize the EM fits.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: returns the row indices chosen as initial centers.
pub(crate) fn kmeanspp_indices(x: &ArrayView2<f64>, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = x.nrows();
    assert!(k >= 1 && n >= 1);
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| {
            sq_dist(
                x.row(i).as_slice().unwrap(),
                x.row(chosen[0]).as_slice().unwrap(),
            )
        })
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // All remaining points coincide with a center; any index works.
            rng.random_range(0..n)
        };
        chosen.push(next);
        for i in 0..n {
            let d = sq_dist(
                x.row(i).as_slice().unwrap(),
                x.row(next).as_slice().unwrap(),
            );
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    chosen
}

/// Plain Lloyd k-means. Returns `(centers, labels)`. Empty clusters are
/// re-seeded at the point farthest from its current center.
pub(crate) fn lloyd(
    x: &ArrayView2<f64>,
    k: usize,
    max_iter: usize,
    rng: &mut impl Rng,
) -> (Array2<f64>, Vec<usize>) {
    let n = x.nrows();
    let p = x.ncols();
    let seeds = kmeanspp_indices(x, k, rng);
    let mut centers = Array2::<f64>::zeros((k, p));
    for (c, &i) in seeds.iter().enumerate() {
        centers.row_mut(c).assign(&x.row(i));
    }
    let mut labels = vec![0usize; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for i in 0..n {
            let xi = x.row(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = sq_dist(xi.as_slice().unwrap(), centers.row(c).as_slice().unwrap());
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        let mut sums = Array2::<f64>::zeros((k, p));
        for i in 0..n {
            counts[labels[i]] += 1;
            let xi = x.row(i);
            for j in 0..p {
                sums[[labels[i], j]] += xi[j];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed at the point with the largest distance to its center.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(
                            x.row(a).as_slice().unwrap(),
                            centers.row(labels[a]).as_slice().unwrap(),
                        );
                        let db = sq_dist(
                            x.row(b).as_slice().unwrap(),
                            centers.row(labels[b]).as_slice().unwrap(),
                        );
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                centers.row_mut(c).assign(&x.row(far));
                changed = true;
            } else {
                for j in 0..p {
                    centers[[c, j]] = sums[[c, j]] / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    (centers, labels)
}
