//! Shared test oracles, independent of the library's implementation paths.

use nalgebra::{DMatrix, DVector};

/// Dominant eigenpair of the pencil (Gamma' T T' Gamma W, Gamma' Gamma W) by
/// power iteration on the explicitly inverted pencil. Returns `None` when
/// the iteration has not settled, which callers treat as "resample".
pub fn gep_oracle_top(
    gamma: &DMatrix<f64>,
    tmat: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Option<(f64, DVector<f64>)> {
    let gt = gamma.tr_mul(tmat);
    let a = &gt * gt.transpose() * w;
    let mut s = gamma.tr_mul(gamma) * w;
    let p = s.nrows();
    let ridge = 1e-8 * s.trace() / p as f64;
    for i in 0..p {
        s[(i, i)] += ridge;
    }
    let m = s.try_inverse()? * a;
    let mut v = DVector::from_fn(p, |i, _| 1.0 + (i as f64) * 0.01);
    v /= v.norm();
    let mut eta = 0.0;
    let mut settled = false;
    for _ in 0..200_000 {
        let next = &m * &v;
        let norm = next.norm();
        if norm <= 1e-300 {
            return None;
        }
        let next = next / norm;
        let delta = (&next - &v).norm().min((&next + &v).norm());
        v = next;
        eta = (&m * &v).dot(&v);
        if delta < 1e-13 {
            settled = true;
            break;
        }
    }
    if !settled {
        return None;
    }
    // residual certificate on the original pencil
    let gt = gamma.tr_mul(tmat);
    let b = &gt * gt.transpose() * w;
    let s0 = gamma.tr_mul(gamma) * w;
    let resid = (&b * &v - (&s0 * &v) * eta).norm();
    let scale = b.norm().max(1.0);
    if resid > 1e-8 * scale {
        return None;
    }
    Some((eta, v))
}

/// Dense multivariate-normal mixture log-densities: full covariance
/// `U Sigma_k U' + beta_k (I - U U')`, mean `m_k`, evaluated by Cholesky.
pub fn dense_mixture_log_densities(
    gamma: &DVector<f64>,
    pi: &[f64],
    centers: &[DVector<f64>],
    sigmas: &[DMatrix<f64>],
    betas: &[f64],
    u: &DMatrix<f64>,
) -> Vec<f64> {
    let p = gamma.len();
    let eye = DMatrix::<f64>::identity(p, p);
    let proj = u * u.transpose();
    (0..pi.len())
        .map(|k| {
            let cov = u * &sigmas[k] * u.transpose() + betas[k] * (&eye - &proj);
            let chol = cov.cholesky().expect("dense covariance PD");
            let diff = gamma - &centers[k];
            let solved = chol.solve(&diff);
            let log_det: f64 = 2.0 * (0..p).map(|i| chol.l()[(i, i)].ln()).sum::<f64>();
            pi[k].ln()
                - 0.5 * (diff.dot(&solved) + log_det + p as f64 * (2.0 * std::f64::consts::PI).ln())
        })
        .collect()
}

/// Exhaustive best-permutation label match, the reference for the
/// assignment-solver accuracy path.
pub fn exhaustive_accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let k = pred.iter().chain(truth.iter()).max().map_or(1, |&m| m + 1);
    let mut table = vec![vec![0usize; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        table[p][t] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0usize;
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
    permute(&mut perm, 0, &mut |p| {
        let matched: usize = (0..k).map(|row| table[row][p[row]]).sum();
        best = best.max(matched);
    });
    best as f64 / pred.len() as f64 * 100.0
}
