//! Seeded k-means: k-means++ initialization, Lloyd iterations with a fixed
//! cap, and farthest-point reseeding of empty clusters. Shared by product
//! quantization (per subspace) and query clustering.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{ctx, stream_rng};

#[derive(Debug, Clone)]
pub struct KMeansOutput {
    /// `k` centroids, each of the input dimension.
    pub centroids: Vec<Vec<f64>>,
    /// Index of the nearest centroid per input point, against the final
    /// centroids. Ties go to the lowest centroid index.
    pub assignments: Vec<usize>,
    /// Total squared distance to assigned centroids, recorded once after
    /// initialization and once per Lloyd iteration. Non-increasing.
    pub distortion_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    (best, best_d)
}

/// Means computed relative to the cluster's first member, so a cluster of
/// identical points reproduces the point bit-exactly.
fn cluster_mean(points: &[&[f64]], members: &[usize], dim: usize) -> Vec<f64> {
    let first = points[members[0]];
    let mut acc = vec![0.0f64; dim];
    for &m in members {
        for (a, (x, r)) in acc.iter_mut().zip(points[m].iter().zip(first)) {
            *a += x - r;
        }
    }
    let n = members.len() as f64;
    for (a, r) in acc.iter_mut().zip(first) {
        *a = *a / n + r;
    }
    acc
}

/// Run k-means. Allows `k > points.len()`, in which case some centroids end
/// up duplicated; callers that require distinct clusters validate upstream.
pub fn run(points: &[&[f64]], k: usize, iters: usize, seed: u64) -> Result<KMeansOutput> {
    if points.is_empty() {
        return Err(Error::EmptyInput("kmeans points"));
    }
    if k == 0 {
        return Err(Error::arg("kmeans requires k >= 1"));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: 0 });
    }

    let mut rng = stream_rng(seed, ctx::KMEANS, 0);
    let mut centroids = plus_plus_init(points, k, &mut rng);

    let mut assignments = assign(points, &centroids);
    let mut trace = vec![distortion(points, &centroids, &assignments)];

    for _ in 0..iters {
        update_centroids(points, &assignments, &mut centroids, dim);
        let next = assign(points, &centroids);
        trace.push(distortion(points, &centroids, &next));
        let converged = next == assignments;
        assignments = next;
        if converged {
            break;
        }
    }

    Ok(KMeansOutput { centroids, assignments, distortion_trace: trace })
}

fn plus_plus_init(points: &[&[f64]], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..n)].to_vec());

    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let chosen = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            // Every point is already a centroid; duplicates are fine.
            0
        };
        let c = points[chosen].to_vec();
        for (slot, p) in d2.iter_mut().zip(points) {
            let d = sq_dist(p, &c);
            if d < *slot {
                *slot = d;
            }
        }
        centroids.push(c);
    }
    centroids
}

fn assign(points: &[&[f64]], centroids: &[Vec<f64>]) -> Vec<usize> {
    points
        .par_iter()
        .map(|p| nearest(p, centroids).0)
        .collect()
}

fn distortion(points: &[&[f64]], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum()
}

fn update_centroids(
    points: &[&[f64]],
    assignments: &[usize],
    centroids: &mut [Vec<f64>],
    dim: usize,
) {
    let k = centroids.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &a) in assignments.iter().enumerate() {
        members[a].push(i);
    }
    for (c, mem) in centroids.iter_mut().zip(&members) {
        if !mem.is_empty() {
            *c = cluster_mean(points, mem, dim);
        }
    }
    // Reseed empty clusters from the farthest points, highest distance first.
    let empty: Vec<usize> = members
        .iter()
        .enumerate()
        .filter(|(_, m)| m.is_empty())
        .map(|(i, _)| i)
        .collect();
    if empty.is_empty() {
        return;
    }
    let mut by_distance: Vec<(f64, usize)> = points
        .iter()
        .zip(assignments)
        .enumerate()
        .map(|(i, (p, &a))| (sq_dist(p, &centroids[a]), i))
        .collect();
    by_distance.sort_by(|(da, ia), (db, ib)| db.total_cmp(da).then(ia.cmp(ib)));
    for (slot, (_, point_idx)) in empty.into_iter().zip(by_distance) {
        centroids[slot] = points[point_idx].to_vec();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn owned(points: &[Vec<f64>]) -> Vec<&[f64]> {
        points.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn distortion_trace_is_monotone() {
        let mut rng = stream_rng(5, ctx::SAMPLE, 1);
        let points: Vec<Vec<f64>> = (0..200)
            .map(|_| crate::rng::normal_vector(&mut rng, 8, 1.0))
            .collect();
        let out = run(&owned(&points), 10, 25, 7).unwrap();
        for w in out.distortion_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "distortion increased: {:?}", w);
        }
    }

    #[test]
    fn k_equal_n_reaches_zero_distortion() {
        let points: Vec<Vec<f64>> = (0..16)
            .map(|i| vec![i as f64, (i * i) as f64])
            .collect();
        let out = run(&owned(&points), 16, 30, 3).unwrap();
        let last = *out.distortion_trace.last().unwrap();
        assert!(last == 0.0, "expected exact cover, distortion {last}");
    }

    #[test]
    fn k_one_yields_global_mean() {
        let points = vec![vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 4.0]];
        let out = run(&owned(&points), 1, 5, 0).unwrap();
        assert!((out.centroids[0][0] - 3.0).abs() < 1e-12);
        assert!((out.centroids[0][1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_iters_returns_plus_plus_seeds() {
        let points = vec![vec![0.0], vec![1.0], vec![4.0], vec![9.0]];
        let refs = owned(&points);
        let out = run(&refs, 2, 0, 11).unwrap();
        // With zero iterations every centroid must be one of the points.
        for c in &out.centroids {
            assert!(points.iter().any(|p| p == c));
        }
        assert_eq!(out.distortion_trace.len(), 1);
    }

    #[test]
    fn identical_points_reproduce_exactly() {
        let x = vec![0.1 + 0.2, 0.3333333333333333, -1.7];
        let points = vec![x.clone(), x.clone(), x.clone()];
        let out = run(&owned(&points), 1, 4, 2).unwrap();
        assert_eq!(out.centroids[0], x, "mean of identical points must be exact");
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = stream_rng(9, ctx::SAMPLE, 2);
        let points: Vec<Vec<f64>> = (0..64)
            .map(|_| crate::rng::normal_vector(&mut rng, 4, 1.0))
            .collect();
        let a = run(&owned(&points), 8, 20, 123).unwrap();
        let b = run(&owned(&points), 8, 20, 123).unwrap();
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.assignments, b.assignments);
    }
}
