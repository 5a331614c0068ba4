//! Agglomerative hierarchical clustering with the Ward (ward.D2) criterion,
//! used as a deterministic posterior initialization. Implemented with the
//! nearest-neighbor chain algorithm over a Lance-Williams distance update,
//! O(n^2) time and memory.

use nalgebra::DMatrix;

use crate::scalar::Scalar;

/// Cuts the Ward dendrogram of the rows of `data` into `k` clusters.
/// Returns one label in `0..k` per row; labels are assigned in order of
/// first appearance, so the result is deterministic.
pub fn ward_labels<T: Scalar>(data: &DMatrix<T>, k: usize) -> Vec<usize> {
    let n = data.nrows();
    assert!(k >= 1 && k <= n);
    if k == n {
        return (0..n).collect();
    }

    // squared Euclidean distances, as f64 for the merge bookkeeping
    let mut dist = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = 0.0;
            for c in 0..data.ncols() {
                let diff = (data[(i, c)] - data[(j, c)]).to_f64().unwrap_or(0.0);
                acc += diff * diff;
            }
            dist[i][j] = acc;
            dist[j][i] = acc;
        }
    }

    let mut active: Vec<bool> = vec![true; n];
    let mut size: Vec<f64> = vec![1.0; n];
    let mut parent: Vec<usize> = (0..n).collect();

    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }

    let mut merges = 0usize;
    let target_merges = n - k;
    let mut chain: Vec<usize> = Vec::with_capacity(n);
    while merges < target_merges {
        if chain.is_empty() {
            let start = (0..n).find(|&i| active[i]).expect("an active cluster");
            chain.push(start);
        }
        loop {
            let top = *chain.last().unwrap();
            // nearest active neighbor of `top`
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for j in 0..n {
                if j != top && active[j] && dist[top][j] < best_d {
                    best_d = dist[top][j];
                    best = j;
                }
            }
            let prev = if chain.len() >= 2 {
                Some(chain[chain.len() - 2])
            } else {
                None
            };
            if prev == Some(best) || (prev.is_some() && dist[top][prev.unwrap()] <= best_d) {
                // reciprocal nearest neighbors: merge top and prev
                let a = top;
                let b = prev.unwrap();
                chain.pop();
                chain.pop();
                let (keep, drop) = if a < b { (a, b) } else { (b, a) };
                let sa = size[keep];
                let sb = size[drop];
                for j in 0..n {
                    if j == keep || j == drop || !active[j] {
                        continue;
                    }
                    let sj = size[j];
                    // Lance-Williams update for ward.D2 on squared distances
                    let num = (sa + sj) * dist[keep][j] + (sb + sj) * dist[drop][j]
                        - sj * dist[keep][drop];
                    let upd = num / (sa + sb + sj);
                    dist[keep][j] = upd;
                    dist[j][keep] = upd;
                }
                active[drop] = false;
                size[keep] = sa + sb;
                parent[drop] = keep;
                merges += 1;
                break;
            } else {
                chain.push(best);
            }
        }
    }

    // relabel roots in order of first appearance
    let mut label_of_root: std::collections::HashMap<usize, usize> =
        std::collections::HashMap::new();
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let root = find(&mut parent, i);
        let next = label_of_root.len();
        let lab = *label_of_root.entry(root).or_insert(next);
        labels.push(lab);
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_obvious_groups() {
        let mut data = DMatrix::<f64>::zeros(9, 2);
        for i in 0..3 {
            data[(i, 0)] = 0.0 + 0.01 * i as f64;
        }
        for i in 3..6 {
            data[(i, 0)] = 5.0 + 0.01 * i as f64;
        }
        for i in 6..9 {
            data[(i, 0)] = 10.0 + 0.01 * i as f64;
        }
        let labels = ward_labels(&data, 3);
        assert_eq!(labels[0], labels[1]);
        assert_eq!(labels[1], labels[2]);
        assert_eq!(labels[3], labels[4]);
        assert_eq!(labels[4], labels[5]);
        assert_eq!(labels[6], labels[7]);
        assert_eq!(labels[7], labels[8]);
        let distinct: std::collections::HashSet<usize> = labels.iter().copied().collect();
        assert_eq!(distinct.len(), 3);
    }

    #[test]
    fn k_equals_n_is_identity() {
        let data = DMatrix::<f64>::from_fn(5, 2, |i, j| (i * 2 + j) as f64);
        assert_eq!(ward_labels(&data, 5), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn deterministic() {
        let data = DMatrix::<f64>::from_fn(40, 3, |i, j| ((i * 7 + j * 13) % 23) as f64);
        assert_eq!(ward_labels(&data, 6), ward_labels(&data, 6));
    }

    #[test]
    fn every_cluster_nonempty() {
        let data = DMatrix::<f64>::from_fn(30, 2, |i, j| ((i * 31 + j * 17) % 19) as f64 * 0.37);
        for k in 2..8 {
            let labels = ward_labels(&data, k);
            let distinct: std::collections::HashSet<usize> = labels.iter().copied().collect();
            assert_eq!(distinct.len(), k, "k={k}");
            assert!(labels.iter().all(|&l| l < k));
        }
    }
}
