//! Lloyd's k-means with k-means++ seeding, multiple restarts, and medoid
//! extraction. Shared by the tail-score clustering and bidding scenario
//! reduction.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;

use super::EvalError;
use crate::seed;

const MAX_ITERS: usize = 300;

#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    /// Per cluster, the index of the member closest to its centroid.
    pub medoids: Vec<usize>,
    /// Within-cluster sum of squared distances.
    pub wcss: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn plus_plus_init<R: Rng>(points: &ArrayView2<f64>, k: usize, rng: &mut R) -> Vec<usize> {
    let n = points.nrows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut dist: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i).as_slice().unwrap(), points.row(chosen[0]).as_slice().unwrap()))
        .collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total <= 0.0 {
            // All remaining points coincide with a centroid; pick any unused.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, d) in dist.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        };
        chosen.push(next);
        for i in 0..n {
            let d = sq_dist(points.row(i).as_slice().unwrap(), points.row(next).as_slice().unwrap());
            if d < dist[i] {
                dist[i] = d;
            }
        }
    }
    chosen
}

fn lloyd(points: &ArrayView2<f64>, k: usize, run_seed: u64, restart: u64) -> (Vec<usize>, Array2<f64>, f64) {
    let n = points.nrows();
    let dim = points.ncols();
    let mut rng = seed::stream_rng(run_seed, restart);

    let init = plus_plus_init(points, k, &mut rng);
    let mut centroids = Array2::zeros((k, dim));
    for (c, &i) in init.iter().enumerate() {
        centroids.row_mut(c).assign(&points.row(i));
    }

    let mut assignments = vec![0usize; n];
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for i in 0..n {
            let p = points.row(i);
            let mut best = (f64::INFINITY, 0usize);
            for c in 0..k {
                let d = sq_dist(p.as_slice().unwrap(), centroids.row(c).as_slice().unwrap());
                if d < best.0 {
                    best = (d, c);
                }
            }
            if assignments[i] != best.1 {
                assignments[i] = best.1;
                changed = true;
            }
        }

        let mut sums = Array2::<f64>::zeros((k, dim));
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            let mut row = sums.row_mut(c);
            row += &points.row(i);
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed an empty cluster on the point farthest from its centroid.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(points.row(a).as_slice().unwrap(), centroids.row(assignments[a]).as_slice().unwrap());
                        let db = sq_dist(points.row(b).as_slice().unwrap(), centroids.row(assignments[b]).as_slice().unwrap());
                        da.total_cmp(&db)
                    })
                    .unwrap();
                centroids.row_mut(c).assign(&points.row(far));
                assignments[far] = c;
                changed = true;
            } else {
                let inv = 1.0 / counts[c] as f64;
                let mut row = centroids.row_mut(c);
                row.assign(&sums.row(c));
                row.mapv_inplace(|v| v * inv);
            }
        }
        if !changed {
            break;
        }
    }

    let wcss: f64 = (0..n)
        .map(|i| sq_dist(points.row(i).as_slice().unwrap(), centroids.row(assignments[i]).as_slice().unwrap()))
        .sum();
    (assignments, centroids, wcss)
}

/// Clusters `points` (rows) into `k` groups, keeping the best of `restarts`
/// independent runs by WCSS. Deterministic given `run_seed`.
pub fn kmeans(points: &ArrayView2<f64>, k: usize, restarts: usize, run_seed: u64) -> Result<KmeansResult, EvalError> {
    let n = points.nrows();
    if k == 0 || n < k {
        return Err(EvalError::TooFewPoints { have: n, need: k.max(1) });
    }
    let restarts = restarts.max(1);

    let runs: Vec<(Vec<usize>, Array2<f64>, f64)> = (0..restarts as u64)
        .into_par_iter()
        .map(|r| lloyd(points, k, run_seed, r))
        .collect();
    let (assignments, centroids, wcss) = runs
        .into_iter()
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .unwrap();

    let mut medoids = vec![usize::MAX; k];
    let mut best_d = vec![f64::INFINITY; k];
    for (i, &c) in assignments.iter().enumerate() {
        let d = sq_dist(points.row(i).as_slice().unwrap(), centroids.row(c).as_slice().unwrap());
        if d < best_d[c] {
            best_d[c] = d;
            medoids[c] = i;
        }
    }

    Ok(KmeansResult { centroids, assignments, medoids, wcss })
}

/// Index of the nearest centroid to `point`.
pub fn nearest_centroid(centroids: &Array2<f64>, point: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0usize);
    for c in 0..centroids.nrows() {
        let d = sq_dist(point, centroids.row(c).as_slice().unwrap());
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn k_equals_n_gives_zero_wcss() {
        let points = ndarray::array![[0.0, 0.0], [5.0, 5.0], [9.0, 1.0]];
        let res = kmeans(&points.view(), 3, 4, 0).unwrap();
        assert!(res.wcss < 1e-12);
        let mut seen: Vec<usize> = res.assignments.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 3, "each point its own cluster");
    }

    #[test]
    fn separated_blobs_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n_per = 40;
        let mut points = Array2::zeros((2 * n_per, 2));
        for i in 0..n_per {
            points[[i, 0]] = rng.random_range(-0.5..0.5);
            points[[i, 1]] = rng.random_range(-0.5..0.5);
            points[[n_per + i, 0]] = 50.0 + rng.random_range(-0.5..0.5);
            points[[n_per + i, 1]] = 50.0 + rng.random_range(-0.5..0.5);
        }
        let res = kmeans(&points.view(), 2, 10, 1).unwrap();
        let first = res.assignments[0];
        assert!(res.assignments[..n_per].iter().all(|&a| a == first));
        assert!(res.assignments[n_per..].iter().all(|&a| a != first));
        // Medoids live inside their source blobs.
        assert!(res.medoids[first] < n_per);
        assert!(res.medoids[1 - first] >= n_per);
    }

    #[test]
    fn rejects_more_clusters_than_points() {
        let points = ndarray::array![[0.0], [1.0]];
        assert!(kmeans(&points.view(), 3, 1, 0).is_err());
    }

    #[test]
    fn restart_winner_has_minimal_wcss() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let points = Array2::from_shape_fn((30, 3), |_| rng.random_range(-1.0..1.0));
        let multi = kmeans(&points.view(), 4, 12, 3).unwrap();
        for r in 0..12u64 {
            let single = lloyd(&points.view(), 4, 3, r);
            assert!(multi.wcss <= single.2 + 1e-9);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let points = Array2::from_shape_fn((25, 2), |_| rng.random_range(0.0..10.0));
        let a = kmeans(&points.view(), 3, 5, 7).unwrap();
        let b = kmeans(&points.view(), 3, 5, 7).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.wcss, b.wcss);
    }
}
