//! Linear assignment by the Hungarian algorithm with potentials, used to
//! match predicted cluster labels against ground truth when exhaustive
//! permutation search becomes too expensive.

/// Minimum-cost perfect matching on a square integer cost matrix.
///
/// Returns the column assigned to each row and the total cost. Runs in
/// O(n^3).
pub fn min_cost_assignment(cost: &[Vec<i64>]) -> (Vec<usize>, i64) {
    let n = cost.len();
    assert!(cost.iter().all(|row| row.len() == n), "cost matrix must be square");
    if n == 0 {
        return (Vec::new(), 0);
    }
    // 1-based potentials; p[j] = row matched to column j, 0 = unmatched
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    let total = (0..n).map(|i| cost[i][assignment[i]]).sum();
    (assignment, total)
}

/// Maximum-profit variant: negates the profits and solves the minimization.
pub fn max_profit_assignment(profit: &[Vec<i64>]) -> (Vec<usize>, i64) {
    let neg: Vec<Vec<i64>> = profit
        .iter()
        .map(|row| row.iter().map(|&c| -c).collect())
        .collect();
    let (assignment, total) = min_cost_assignment(&neg);
    (assignment, -total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn solves_textbook_instance() {
        let cost = vec![
            vec![4, 1, 3],
            vec![2, 0, 5],
            vec![3, 2, 2],
        ];
        let (assign, total) = min_cost_assignment(&cost);
        assert_eq!(total, 5);
        assert_eq!(assign, vec![1, 0, 2]);
    }

    #[test]
    fn identity_is_optimal_on_diagonal_dominant_matrix() {
        let n = 6;
        let cost: Vec<Vec<i64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0 } else { 100 }).collect())
            .collect();
        let (assign, total) = min_cost_assignment(&cost);
        assert_eq!(total, 0);
        assert_eq!(assign, (0..n).collect::<Vec<_>>());
    }

    fn brute_force_min(cost: &[Vec<i64>]) -> i64 {
        let n = cost.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = i64::MAX;
        permute(&mut perm, 0, &mut |p| {
            let total: i64 = (0..n).map(|i| cost[i][p[i]]).sum();
            if total < best {
                best = total;
            }
        });
        best
    }

    fn permute<F: FnMut(&[usize])>(items: &mut Vec<usize>, start: usize, visit: &mut F) {
        if start == items.len() {
            visit(items);
            return;
        }
        for i in start..items.len() {
            items.swap(start, i);
            permute(items, start + 1, visit);
            items.swap(start, i);
        }
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.gen_range(1..=6);
            let cost: Vec<Vec<i64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.gen_range(-50..50)).collect())
                .collect();
            let (_, total) = min_cost_assignment(&cost);
            assert_eq!(total, brute_force_min(&cost));
        }
    }
}
