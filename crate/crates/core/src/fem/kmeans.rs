//! Lloyd's k-means on coefficient rows, used only to initialize posteriors.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::{cast, Scalar};

pub struct KMeansResult<T: Scalar> {
    pub labels: Vec<usize>,
    pub inertia: T,
}

/// Runs Lloyd's algorithm `restarts` times with Forgy seeding and keeps the
/// labelling with the smallest inertia. Deterministic for a given seed.
pub fn lloyd_best_of<T: Scalar>(
    data: &DMatrix<T>,
    k: usize,
    restarts: usize,
    max_iter: usize,
    seed: u64,
) -> KMeansResult<T> {
    let mut best: Option<KMeansResult<T>> = None;
    for r in 0..restarts {
        let res = lloyd_once(data, k, max_iter, seed.wrapping_add(r as u64));
        if best.as_ref().map_or(true, |b| res.inertia < b.inertia) {
            best = Some(res);
        }
    }
    best.expect("at least one restart")
}

fn lloyd_once<T: Scalar>(data: &DMatrix<T>, k: usize, max_iter: usize, seed: u64) -> KMeansResult<T> {
    let n = data.nrows();
    let p = data.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut centroids: Vec<Vec<T>> = order[..k]
        .iter()
        .map(|&i| (0..p).map(|j| data[(i, j)]).collect())
        .collect();
    let mut labels = vec![0usize; n];

    let sq_dist = |i: usize, c: &[T]| -> T {
        let mut acc = T::zero();
        for j in 0..p {
            let diff = data[(i, j)] - c[j];
            acc += diff * diff;
        }
        acc
    };

    for _ in 0..max_iter {
        let mut changed = false;
        for i in 0..n {
            let mut best_c = 0usize;
            let mut best_d = sq_dist(i, &centroids[0]);
            for (c, centroid) in centroids.iter().enumerate().skip(1) {
                let d = sq_dist(i, centroid);
                if d < best_d {
                    best_d = d;
                    best_c = c;
                }
            }
            if labels[i] != best_c {
                labels[i] = best_c;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![T::zero(); p]; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for j in 0..p {
                sums[labels[i]][j] += data[(i, j)];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // reseed an empty cluster at the point farthest from its centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(a, &centroids[labels[a]])
                            .partial_cmp(&sq_dist(b, &centroids[labels[b]]))
                            .unwrap()
                    })
                    .unwrap();
                centroids[c] = (0..p).map(|j| data[(far, j)]).collect();
                labels[far] = c;
                changed = true;
            } else {
                let inv = T::one() / cast::<T>(counts[c] as f64);
                for j in 0..p {
                    centroids[c][j] = sums[c][j] * inv;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let inertia = (0..n).map(|i| sq_dist(i, &centroids[labels[i]])).sum();
    KMeansResult { labels, inertia }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_two_blobs() {
        let mut data = DMatrix::<f64>::zeros(10, 2);
        for i in 0..5 {
            data[(i, 0)] = 0.1 * i as f64;
            data[(i, 1)] = 0.05 * i as f64;
        }
        for i in 5..10 {
            data[(i, 0)] = 10.0 + 0.1 * i as f64;
            data[(i, 1)] = 10.0 - 0.05 * i as f64;
        }
        let res = lloyd_best_of(&data, 2, 20, 100, 42);
        let first = res.labels[0];
        assert!(res.labels[..5].iter().all(|&l| l == first));
        assert!(res.labels[5..].iter().all(|&l| l != first));
    }

    #[test]
    fn deterministic_per_seed() {
        let data = DMatrix::<f64>::from_fn(30, 3, |i, j| ((i * 7 + j * 13) % 17) as f64);
        let a = lloyd_best_of(&data, 4, 20, 100, 9);
        let b = lloyd_best_of(&data, 4, 20, 100, 9);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.inertia, b.inertia);
    }
}
