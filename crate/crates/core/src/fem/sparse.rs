//! Sparse discriminative-basis selection: the constrained Fisher criterion
//! rewritten as an l1-penalized regression of the dense-subspace projection
//! scores onto the coefficient columns, solved by coordinate descent along a
//! descending penalty path.

use nalgebra::{DMatrix, DVector};

use crate::basis::CoefficientMatrix;
use crate::error::{Error, Result};
use crate::fem::{f_step, DiscriminativeSubspace, PosteriorMatrix};
use crate::scalar::{cast, Scalar};

const MAX_SWEEPS: usize = 1000;
const CD_TOL: f64 = 1e-7;

/// Sparse variant of the F-step.
///
/// Starts from the dense solution, regresses each direction's projection
/// scores onto the (standardized) coefficient columns under an l1 penalty,
/// and returns the re-normalized sparse loadings ordered by their Fisher
/// ratio. With `lambda = 0` the solution spans the dense subspace.
///
/// Directions are kept un-mixed so the exact zero pattern of the lasso
/// solutions survives into the loading matrix.
pub fn sparse_f_step<T: Scalar>(
    coeffs: &CoefficientMatrix<T>,
    w_gram: &DMatrix<T>,
    post: &PosteriorMatrix<T>,
    d: usize,
    lambda: T,
) -> Result<DiscriminativeSubspace<T>> {
    if lambda < T::zero() {
        return Err(Error::InvalidArgument("lambda must be >= 0".into()));
    }
    let dense = f_step(coeffs, w_gram, post, d)?;
    let gamma = coeffs.gamma();
    let (n, p) = gamma.shape();
    let nf = cast::<T>(n as f64);

    // design matrix: X = Gamma W, so the unpenalized solution is exactly the
    // dense loading vector and the zero penalty reproduces the dense subspace
    let x = if super::is_identity(w_gram) {
        gamma.clone()
    } else {
        gamma * w_gram
    };
    let scores = &x * &dense.u; // n x d

    // column standardization; zero-variance columns are excluded outright
    let mut scale = vec![T::zero(); p];
    let mut xs = x.clone();
    for j in 0..p {
        let mut ssq = T::zero();
        for i in 0..n {
            ssq += x[(i, j)] * x[(i, j)];
        }
        let rms = (ssq / nf).sqrt();
        scale[j] = rms;
        if rms > T::zero() {
            for i in 0..n {
                xs[(i, j)] /= rms;
            }
        }
    }

    let tmat = post.scaled();
    let mut u = DMatrix::<T>::zeros(p, d);
    let mut etas = DVector::<T>::zeros(d);
    for dir in 0..d {
        let s = scores.column(dir).into_owned();
        let nu_std = lasso_path(&xs, &scale, &s, lambda, dir)?;
        let mut nu = DVector::<T>::zeros(p);
        let mut any = false;
        for j in 0..p {
            if scale[j] > T::zero() && nu_std[j] != T::zero() {
                nu[j] = nu_std[j] / scale[j];
                any = true;
            }
        }
        if !any {
            return Err(Error::SparseDirectionZero {
                direction: dir,
                lambda: lambda.to_f64().unwrap_or(f64::NAN),
            });
        }
        // normalize like the dense F-step and compute the Fisher ratio
        let proj = &x * &nu;
        let quad = proj.norm_squared() / nf;
        if quad <= T::zero() {
            return Err(Error::SparseDirectionZero {
                direction: dir,
                lambda: lambda.to_f64().unwrap_or(f64::NAN),
            });
        }
        let inv = T::one() / quad.sqrt();
        let between = tmat.tr_mul(&proj).norm_squared();
        etas[dir] = between / proj.norm_squared();
        for j in 0..p {
            u[(j, dir)] = nu[j] * inv;
        }
    }

    // order directions by decreasing Fisher ratio
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| etas[b].partial_cmp(&etas[a]).unwrap());
    let mut u_sorted = DMatrix::<T>::zeros(p, d);
    let mut etas_sorted = DVector::<T>::zeros(d);
    for (new_col, &old_col) in order.iter().enumerate() {
        etas_sorted[new_col] = etas[old_col];
        for j in 0..p {
            u_sorted[(j, new_col)] = u[(j, old_col)];
        }
    }

    Ok(DiscriminativeSubspace {
        u: u_sorted,
        eigenvalues: etas_sorted,
        sparse: true,
        lambda,
    })
}

/// Coordinate-descent lasso for one direction, warm-started along a
/// geometric penalty path from just under lambda_max down to the target.
fn lasso_path<T: Scalar>(
    xs: &DMatrix<T>,
    scale: &[T],
    s: &DVector<T>,
    lambda: T,
    direction: usize,
) -> Result<DVector<T>> {
    let (n, p) = xs.shape();
    let nf = cast::<T>(n as f64);

    let mut lam_max = T::zero();
    for j in 0..p {
        if scale[j] == T::zero() {
            continue;
        }
        let mut dot = T::zero();
        for i in 0..n {
            dot += xs[(i, j)] * s[i];
        }
        lam_max = lam_max.max((dot / nf).abs());
    }
    if lambda >= lam_max {
        return Err(Error::SparseDirectionZero {
            direction,
            lambda: lambda.to_f64().unwrap_or(f64::NAN),
        });
    }

    let mut path = Vec::new();
    let start = lam_max * cast::<T>(0.95);
    let floor = (lam_max * cast::<T>(1e-3)).max(lambda);
    if start > floor {
        let steps = 12usize;
        let ratio = (floor / start).powf(T::one() / cast::<T>((steps - 1) as f64));
        let mut cur = start;
        for _ in 0..steps {
            path.push(cur);
            cur *= ratio;
        }
    }
    path.push(lambda);

    let mut nu = DVector::<T>::zeros(p);
    let mut resid = s.clone();
    for lam in path {
        coordinate_descent(xs, scale, &mut nu, &mut resid, lam, nf);
    }
    Ok(nu)
}

fn coordinate_descent<T: Scalar>(
    xs: &DMatrix<T>,
    scale: &[T],
    nu: &mut DVector<T>,
    resid: &mut DVector<T>,
    lambda: T,
    nf: T,
) {
    let (n, p) = xs.shape();
    let tol = cast::<T>(CD_TOL);
    for _ in 0..MAX_SWEEPS {
        let mut max_delta = T::zero();
        let mut max_coef = T::one();
        for j in 0..p {
            if scale[j] == T::zero() {
                continue;
            }
            let mut dot = T::zero();
            for i in 0..n {
                dot += xs[(i, j)] * resid[i];
            }
            // standardized columns have unit mean square, so the curvature is 1
            let rho = dot / nf + nu[j];
            let new = soft_threshold(rho, lambda);
            let delta = new - nu[j];
            if delta != T::zero() {
                for i in 0..n {
                    resid[i] -= xs[(i, j)] * delta;
                }
                nu[j] = new;
            }
            max_delta = max_delta.max(delta.abs());
            max_coef = max_coef.max(new.abs());
        }
        if max_delta < tol * max_coef {
            break;
        }
    }
}

fn soft_threshold<T: Scalar>(z: T, lambda: T) -> T {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        T::zero()
    }
}
