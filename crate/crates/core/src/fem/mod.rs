//! The FunFEM inference algorithm: F-step discriminative-subspace estimation
//! through a generalized eigenproblem, M-step conditional maximization,
//! E-step posterior update, and the alternating fit loop with restarts.

mod hclust;
mod kmeans;
mod sparse;

pub use sparse::sparse_f_step;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basis::CoefficientMatrix;
use crate::error::{Error, Result};
use crate::model::{ClusterDensityCtx, DfmModelSpec, DfmParams};
use crate::scalar::{cast, Scalar};

/// Posterior cluster responsibilities: an n x K row-stochastic matrix plus
/// the soft cluster counts `n_k` (its column sums).
#[derive(Debug, Clone)]
pub struct PosteriorMatrix<T: Scalar> {
    t: DMatrix<T>,
    n_k: DVector<T>,
}

impl<T: Scalar> PosteriorMatrix<T> {
    /// Validates that rows are probability vectors and computes soft counts.
    pub fn from_matrix(t: DMatrix<T>) -> Result<Self> {
        let (n, k) = t.shape();
        if n == 0 || k == 0 {
            return Err(Error::InvalidPosteriors("empty posterior matrix".into()));
        }
        let tol = cast::<T>(1e-8);
        for i in 0..n {
            let mut sum = T::zero();
            for j in 0..k {
                let v = t[(i, j)];
                if v < -tol || v > T::one() + tol {
                    return Err(Error::InvalidPosteriors(format!(
                        "entry ({i},{j}) = {v} outside [0,1]"
                    )));
                }
                sum += v;
            }
            if (sum - T::one()).abs() > tol {
                return Err(Error::InvalidPosteriors(format!(
                    "row {i} sums to {sum}, expected 1"
                )));
            }
        }
        let n_k = column_sums(&t);
        Ok(Self { t, n_k })
    }

    /// Hard 0/1 posteriors from integer labels in `0..k`.
    pub fn from_hard(labels: &[usize], k: usize) -> Result<Self> {
        if labels.iter().any(|&l| l >= k) {
            return Err(Error::InvalidPosteriors(format!(
                "label out of range for K={k}"
            )));
        }
        let mut t = DMatrix::<T>::zeros(labels.len(), k);
        for (i, &l) in labels.iter().enumerate() {
            t[(i, l)] = T::one();
        }
        let n_k = column_sums(&t);
        Ok(Self { t, n_k })
    }

    pub fn n(&self) -> usize {
        self.t.nrows()
    }

    pub fn k(&self) -> usize {
        self.t.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.t
    }

    pub fn counts(&self) -> &DVector<T> {
        &self.n_k
    }

    /// The scaled matrix with entries t_ik / sqrt(n_k) whose Gram matrix is
    /// the between-cluster operator.
    pub fn scaled(&self) -> DMatrix<T> {
        let mut s = self.t.clone();
        for k in 0..self.k() {
            let nk = self.n_k[k];
            let inv = if nk > T::zero() {
                T::one() / nk.sqrt()
            } else {
                T::zero()
            };
            for i in 0..self.n() {
                s[(i, k)] *= inv;
            }
        }
        s
    }

    /// Row-wise argmax.
    pub fn hard_assignments(&self) -> Vec<usize> {
        (0..self.n())
            .map(|i| {
                let mut best = 0usize;
                for k in 1..self.k() {
                    if self.t[(i, k)] > self.t[(i, best)] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

fn column_sums<T: Scalar>(m: &DMatrix<T>) -> DVector<T> {
    let mut out = DVector::<T>::zeros(m.ncols());
    for j in 0..m.ncols() {
        let mut s = T::zero();
        for i in 0..m.nrows() {
            s += m[(i, j)];
        }
        out[j] = s;
    }
    out
}

/// Orientation of the discriminative subspace: p x d loadings with their
/// Fisher-ratio eigenvalues in non-increasing order.
#[derive(Debug, Clone)]
pub struct DiscriminativeSubspace<T: Scalar> {
    pub u: DMatrix<T>,
    pub eigenvalues: DVector<T>,
    pub sparse: bool,
    /// Penalty used to obtain the loadings; zero for the dense F-step.
    pub lambda: T,
}

impl<T: Scalar> DiscriminativeSubspace<T> {
    pub fn d(&self) -> usize {
        self.u.ncols()
    }

    /// Fraction of exactly-zero entries in the loading matrix.
    pub fn zero_fraction(&self) -> f64 {
        let zeros = self.u.iter().filter(|v| **v == T::zero()).count();
        zeros as f64 / (self.u.nrows() * self.u.ncols()) as f64
    }

    /// Basis functions carrying at least one nonzero loading.
    pub fn active_rows(&self) -> Vec<usize> {
        (0..self.u.nrows())
            .filter(|&i| (0..self.u.ncols()).any(|j| self.u[(i, j)] != T::zero()))
            .collect()
    }
}

/// Result of one [`fit`] call: parameters, posteriors, subspace and the
/// log-likelihood trace of the winning restart.
#[derive(Debug, Clone)]
pub struct FittedModel<T: Scalar> {
    pub params: DfmParams<T>,
    pub posteriors: PosteriorMatrix<T>,
    pub subspace: DiscriminativeSubspace<T>,
    pub loglik_trace: Vec<T>,
    pub converged: bool,
    pub n_iter: usize,
    pub model: DfmModelSpec,
}

impl<T: Scalar> FittedModel<T> {
    pub fn loglik(&self) -> T {
        *self.loglik_trace.last().expect("non-empty trace")
    }

    pub fn hard_assignments(&self) -> Vec<usize> {
        self.posteriors.hard_assignments()
    }
}

/// How to produce the initial posterior matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStrategy {
    /// Hard posteriors from Lloyd's algorithm on the coefficient rows
    /// (20 restarts, best inertia).
    KMeans,
    /// Rows drawn from a flat Dirichlet.
    RandomPosterior,
    /// Hard posteriors from Ward-linkage hierarchical clustering;
    /// deterministic, ignores the seed.
    Hclust,
}

/// Options controlling the alternating fit.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Relative log-likelihood change below which the loop stops.
    pub tol: f64,
    pub init: InitStrategy,
    pub seed: u64,
    pub n_restarts: usize,
    /// Expert override for the subspace dimension; defaults to K - 1.
    pub d_override: Option<usize>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-6,
            init: InitStrategy::KMeans,
            seed: 0,
            n_restarts: 5,
            d_override: None,
        }
    }
}

/// Builds the initial posterior matrix. Deterministic for a given seed.
pub fn initialize<T: Scalar>(
    coeffs: &CoefficientMatrix<T>,
    k: usize,
    strategy: InitStrategy,
    seed: u64,
) -> Result<PosteriorMatrix<T>> {
    let n = coeffs.n();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need K >= 2, got K={k}")));
    }
    if n < k {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} curves into K={k} clusters"
        )));
    }
    match strategy {
        InitStrategy::KMeans => {
            let res = kmeans::lloyd_best_of(coeffs.gamma(), k, 20, 100, seed);
            PosteriorMatrix::from_hard(&res.labels, k)
        }
        InitStrategy::Hclust => {
            let labels = hclust::ward_labels(coeffs.gamma(), k);
            PosteriorMatrix::from_hard(&labels, k)
        }
        InitStrategy::RandomPosterior => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut t = DMatrix::<T>::zeros(n, k);
            for i in 0..n {
                let mut sum = T::zero();
                for j in 0..k {
                    // flat Dirichlet via normalized unit exponentials
                    let e: f64 = -(1.0 - rng.gen::<f64>()).ln();
                    let v = cast::<T>(e);
                    t[(i, j)] = v;
                    sum += v;
                }
                for j in 0..k {
                    t[(i, j)] /= sum;
                }
            }
            PosteriorMatrix::from_matrix(t)
        }
    }
}

struct Pencil<T: Scalar> {
    /// Between-cluster operator Gamma' T T' Gamma.
    a: DMatrix<T>,
    /// Cholesky of Gamma' Gamma + ridge I.
    chol: Cholesky<T, Dyn>,
}

fn build_pencil<T: Scalar>(
    gamma: &DMatrix<T>,
    tmat: &DMatrix<T>,
    ridge: T,
) -> Result<Pencil<T>> {
    let gt = gamma.tr_mul(tmat); // p x K
    let a = &gt * gt.transpose();
    let mut m = gamma.tr_mul(gamma);
    for i in 0..m.nrows() {
        m[(i, i)] += ridge;
    }
    let chol = match m.clone().cholesky() {
        Some(c) => c,
        None => {
            // one ridge escalation before giving up
            let bigger = ridge * cast::<T>(1e4) + cast::<T>(1e-12);
            for i in 0..m.nrows() {
                m[(i, i)] += bigger;
            }
            m.cholesky().ok_or(Error::SingularPencil)?
        }
    };
    Ok(Pencil { a, chol })
}

/// Top eigenpair of the symmetric-definite pencil (A, M) via the Cholesky
/// reduction L^-1 A L^-T.
fn top_generalized_eigenpair<T: Scalar>(pencil: &Pencil<T>) -> Result<(T, DVector<T>)> {
    let l = pencil.chol.l();
    let li_a = l
        .solve_lower_triangular(&pencil.a)
        .ok_or(Error::SingularPencil)?;
    let li_a_t = li_a.transpose();
    let mut b = l
        .solve_lower_triangular(&li_a_t)
        .ok_or(Error::SingularPencil)?;
    // enforce exact symmetry before the symmetric eigensolver
    let half = cast::<T>(0.5);
    for i in 0..b.nrows() {
        for j in 0..i {
            let avg = (b[(i, j)] + b[(j, i)]) * half;
            b[(i, j)] = avg;
            b[(j, i)] = avg;
        }
    }
    let eig = b
        .try_symmetric_eigen(cast::<T>(1e-13), 500)
        .ok_or(Error::EigenFailure)?;
    let mut best = 0usize;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    let eta = eig.eigenvalues[best];
    let y = eig.eigenvectors.column(best).into_owned();
    let w = l
        .transpose()
        .solve_upper_triangular(&y)
        .ok_or(Error::SingularPencil)?;
    Ok((eta, w))
}

/// F-step: estimates the discriminative subspace given posteriors by solving
/// the generalized eigenproblem Gamma' T T' Gamma W nu = eta Gamma' Gamma W nu,
/// taking further directions in the complementary space by deflation.
///
/// Each direction is scaled to unit projected variance,
/// |Gamma W nu|^2 / n = 1; the eigenvalues are the Fisher ratios, in [0, 1]
/// up to roundoff.
pub fn f_step<T: Scalar>(
    coeffs: &CoefficientMatrix<T>,
    w_gram: &DMatrix<T>,
    post: &PosteriorMatrix<T>,
    d: usize,
) -> Result<DiscriminativeSubspace<T>> {
    let gamma = coeffs.gamma();
    let (n, p) = gamma.shape();
    let k = post.k();
    if post.n() != n {
        return Err(Error::InvalidArgument(
            "posterior rows must match coefficient rows".into(),
        ));
    }
    if !coeffs.is_centered() {
        return Err(Error::InvalidArgument(
            "coefficients must be centered before the F-step".into(),
        ));
    }
    if d == 0 || d > k.saturating_sub(1) || d >= p {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= d <= K-1 and d < p, got d={d}, K={k}, p={p}"
        )));
    }
    if w_gram.nrows() != p || w_gram.ncols() != p {
        return Err(Error::InvalidArgument("gram matrix must be p x p".into()));
    }

    let identity_w = is_identity(w_gram);
    let w_chol = if identity_w {
        None
    } else {
        Some(
            w_gram
                .clone()
                .cholesky()
                .ok_or_else(|| Error::InvalidArgument("gram matrix must be SPD".into()))?,
        )
    };

    let tmat = post.scaled();
    let nf = cast::<T>(n as f64);
    let gtg = gamma.tr_mul(gamma);
    let trace_sw = if identity_w {
        gtg.trace()
    } else {
        (&gtg * w_gram).trace()
    };
    let ridge = cast::<T>(1e-8) * trace_sw / cast::<T>(p as f64);
    let scale = trace_sw / (nf * cast::<T>(p as f64));

    let mut g_def = gamma.clone();
    let mut u = DMatrix::<T>::zeros(p, d);
    let mut etas = DVector::<T>::zeros(d);
    for j in 0..d {
        let pencil = build_pencil(&g_def, &tmat, ridge)?;
        let (eta, w_vec) = top_generalized_eigenpair(&pencil)?;
        if eta < -cast::<T>(1e-8) || eta > T::one() + cast::<T>(1e-6) {
            return Err(Error::EigenFailure);
        }
        let nu = match &w_chol {
            None => w_vec,
            Some(chol) => chol.solve(&w_vec),
        };
        // normalize in the total-covariance inner product, on the original data
        let w_nu = if identity_w {
            nu.clone()
        } else {
            w_gram * &nu
        };
        let quad = (gamma * &w_nu).norm_squared() / nf;
        if quad <= cast::<T>(1e-12) * scale.max(T::one()) {
            return Err(Error::SingularPencil);
        }
        let inv_sqrt = T::one() / quad.sqrt();
        for i in 0..p {
            u[(i, j)] = nu[i] * inv_sqrt;
        }
        etas[j] = eta.max(T::zero());

        if j + 1 < d {
            // deflate: project the columns of Gamma onto the orthogonal
            // complement of the scores along this direction
            let mut s = &g_def * &w_nu;
            let norm = s.norm();
            if norm <= T::default_epsilon().sqrt() {
                return Err(Error::SingularPencil);
            }
            s /= norm;
            let st_g = s.tr_mul(&g_def); // 1 x p
            g_def -= &s * st_g;
        }
    }

    Ok(DiscriminativeSubspace {
        u,
        eigenvalues: etas,
        sparse: false,
        lambda: T::zero(),
    })
}

pub(crate) fn is_identity<T: Scalar>(m: &DMatrix<T>) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let expect = if i == j { T::one() } else { T::zero() };
            if m[(i, j)] != expect {
                return false;
            }
        }
    }
    true
}

/// M-step: updates proportions, cluster centers, within-subspace covariances
/// and noise variances, given the orientation.
///
/// Per-cluster structures come from the Bessel-corrected within-cluster
/// scatter `C_k`; the `common` structures come from the total covariance of
/// the whole sample, so they stay fixed across posteriors given the
/// orientation. Soft counts at or below one signal a restart.
pub fn m_step<T: Scalar>(
    coeffs: &CoefficientMatrix<T>,
    post: &PosteriorMatrix<T>,
    subspace: &DiscriminativeSubspace<T>,
    model: DfmModelSpec,
) -> Result<DfmParams<T>> {
    let gamma = coeffs.gamma();
    let (n, p) = gamma.shape();
    let k = post.k();
    let d = subspace.d();
    let nf = cast::<T>(n as f64);

    let n_k = post.counts();
    for kk in 0..k {
        if n_k[kk] <= T::one() + cast::<T>(1e-9) {
            return Err(Error::EmptyCluster {
                k: kk,
                n_k: n_k[kk].to_f64().unwrap_or(0.0),
            });
        }
    }

    let pi = DVector::from_fn(k, |kk, _| n_k[kk] / nf);

    // orthonormalize the loadings for the parameter space: the F-step scales
    // directions in the covariance inner product, the model wants U'U = I
    let u = orthonormalize_columns(&subspace.u)?;

    let y = gamma * &u; // n x d projections
    let row_sq: Vec<T> = (0..n)
        .map(|i| {
            let mut acc = T::zero();
            for j in 0..p {
                acc += gamma[(i, j)] * gamma[(i, j)];
            }
            acc
        })
        .collect();

    let tm = post.matrix();
    let mut mu = Vec::with_capacity(k);
    let mut centers = Vec::with_capacity(k);
    let mut sigmas = Vec::with_capacity(k);
    let mut betas = Vec::with_capacity(k);
    let pd = cast::<T>((p - d) as f64);
    for kk in 0..k {
        let inv_nk = T::one() / n_k[kk];
        // full coefficient-space cluster center and its projection
        let mut center = DVector::<T>::zeros(p);
        for i in 0..n {
            let w = tm[(i, kk)];
            if w == T::zero() {
                continue;
            }
            for j in 0..p {
                center[j] += w * gamma[(i, j)];
            }
        }
        center *= inv_nk;
        let mu_k = u.tr_mul(&center);

        // within-cluster scatter C_k around the center, split into the
        // projected d x d block and its total trace
        let mut sig = DMatrix::<T>::zeros(d, d);
        let mut trace_ck = T::zero();
        for i in 0..n {
            let w = tm[(i, kk)];
            if w == T::zero() {
                continue;
            }
            trace_ck += w * row_sq[i];
            for a in 0..d {
                let da = y[(i, a)] - mu_k[a];
                let wda = w * da;
                for b in a..d {
                    sig[(a, b)] += wda * (y[(i, b)] - mu_k[b]);
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                let v = sig[(a, b)] * inv_nk;
                sig[(a, b)] = v;
                sig[(b, a)] = v;
            }
        }
        // trace(C_k) = weighted mean of |gamma|^2 minus |center|^2
        let trace_total = trace_ck * inv_nk - center.norm_squared();
        let beta_k = (trace_total - sig.trace()) / pd;
        mu.push(mu_k);
        centers.push(center);
        sigmas.push(sig);
        betas.push(beta_k);
    }

    // total covariance of the whole sample, feeding the `common` structures
    let inv_n1 = T::one() / (nf - T::one());
    let mut col_mean_y = DVector::<T>::zeros(d);
    for i in 0..n {
        for a in 0..d {
            col_mean_y[a] += y[(i, a)];
        }
    }
    col_mean_y /= nf;
    let mut sig_tot = DMatrix::<T>::zeros(d, d);
    let mut trace_tot = T::zero();
    let mut mean_sq = T::zero();
    for j in 0..p {
        let mut cm = T::zero();
        for i in 0..n {
            cm += gamma[(i, j)];
        }
        cm /= nf;
        mean_sq += cm * cm;
    }
    for i in 0..n {
        trace_tot += row_sq[i];
        for a in 0..d {
            let da = y[(i, a)] - col_mean_y[a];
            for b in a..d {
                sig_tot[(a, b)] += da * (y[(i, b)] - col_mean_y[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = sig_tot[(a, b)] * inv_n1;
            sig_tot[(a, b)] = v;
            sig_tot[(b, a)] = v;
        }
    }
    let trace_total_cov = (trace_tot - nf * mean_sq) * inv_n1;
    let beta_tot = (trace_total_cov - sig_tot.trace()) / pd;

    let (sigma, beta) = apply_structure(&sigmas, &betas, &sig_tot, beta_tot, model);

    // floor degenerate noise variances rather than failing outright
    let floor = cast::<T>(1e-8);
    let mut beta_floored = false;
    let beta = match beta {
        crate::model::BetaSet::PerCluster(v) => crate::model::BetaSet::PerCluster(
            v.into_iter()
                .map(|b| {
                    if b < floor {
                        beta_floored = true;
                        floor
                    } else {
                        b
                    }
                })
                .collect(),
        ),
        crate::model::BetaSet::Common(b) => {
            if b < floor {
                beta_floored = true;
                crate::model::BetaSet::Common(floor)
            } else {
                crate::model::BetaSet::Common(b)
            }
        }
    };

    Ok(DfmParams {
        k,
        d,
        p,
        pi,
        mu,
        center: centers,
        sigma,
        beta,
        u,
        beta_floored,
    })
}

/// Applies the model's covariance structure: per-cluster variants read the
/// within-cluster scatter, `common` variants read the total covariance.
fn apply_structure<T: Scalar>(
    sigmas_within: &[DMatrix<T>],
    betas_within: &[T],
    sigma_total: &DMatrix<T>,
    beta_total: T,
    model: DfmModelSpec,
) -> (crate::model::SigmaSet<T>, crate::model::BetaSet<T>) {
    use crate::model::{BetaSet, BetaStructure, SigmaSet, SigmaStructure};
    let d = sigma_total.nrows();
    let diagonalize = |m: &DMatrix<T>| -> DMatrix<T> {
        DMatrix::from_fn(d, d, |i, j| if i == j { m[(i, j)] } else { T::zero() })
    };
    let spherize = |m: &DMatrix<T>| -> DMatrix<T> {
        DMatrix::from_diagonal_element(d, d, m.trace() / cast::<T>(d as f64))
    };
    let sigma = match model.sigma {
        SigmaStructure::Full => SigmaSet::PerCluster(sigmas_within.to_vec()),
        SigmaStructure::Diagonal => {
            SigmaSet::PerCluster(sigmas_within.iter().map(diagonalize).collect())
        }
        SigmaStructure::Spherical => {
            SigmaSet::PerCluster(sigmas_within.iter().map(spherize).collect())
        }
        SigmaStructure::CommonFull => SigmaSet::Common(sigma_total.clone()),
        SigmaStructure::CommonDiagonal => SigmaSet::Common(diagonalize(sigma_total)),
        SigmaStructure::CommonSpherical => SigmaSet::Common(spherize(sigma_total)),
    };
    let beta = match model.beta {
        BetaStructure::PerCluster => BetaSet::PerCluster(betas_within.to_vec()),
        BetaStructure::Common => BetaSet::Common(beta_total),
    };
    (sigma, beta)
}

/// Gram-Schmidt orthonormalization of the loading columns.
fn orthonormalize_columns<T: Scalar>(u: &DMatrix<T>) -> Result<DMatrix<T>> {
    let (p, d) = u.shape();
    let mut q = u.clone();
    for j in 0..d {
        for prev in 0..j {
            let mut dot = T::zero();
            for i in 0..p {
                dot += q[(i, prev)] * q[(i, j)];
            }
            for i in 0..p {
                let adj = dot * q[(i, prev)];
                q[(i, j)] -= adj;
            }
        }
        let mut norm = T::zero();
        for i in 0..p {
            norm += q[(i, j)] * q[(i, j)];
        }
        let norm = norm.sqrt();
        if norm <= T::default_epsilon().sqrt() {
            return Err(Error::SingularPencil);
        }
        for i in 0..p {
            q[(i, j)] /= norm;
        }
    }
    Ok(q)
}

/// E-step: Bayes update of the responsibilities with log-sum-exp
/// stabilization. Returns the posteriors and the observed log-likelihood.
pub fn e_step<T: Scalar>(
    coeffs: &CoefficientMatrix<T>,
    params: &DfmParams<T>,
) -> Result<(PosteriorMatrix<T>, T)> {
    let gamma = coeffs.gamma();
    let (n, p) = gamma.shape();
    if p != params.p {
        return Err(Error::InvalidArgument(format!(
            "coefficients have p={p} but the model has p={}",
            params.p
        )));
    }
    let ctx = ClusterDensityCtx::new(params)?;
    let k = params.k;
    let y = gamma * &params.u;
    // per-cluster dot products gamma_i . m_k in one pass
    let mut center_mat = DMatrix::<T>::zeros(p, k);
    for kk in 0..k {
        for j in 0..p {
            center_mat[(j, kk)] = params.center[kk][j];
        }
    }
    let dots = gamma * center_mat; // n x K
    let mut t = DMatrix::<T>::zeros(n, k);
    let mut loglik = T::zero();
    let mut yrow = DVector::<T>::zeros(params.d);
    let mut dot_row = vec![T::zero(); k];
    for i in 0..n {
        let mut gsq = T::zero();
        for j in 0..p {
            gsq += gamma[(i, j)] * gamma[(i, j)];
        }
        for j in 0..params.d {
            yrow[j] = y[(i, j)];
        }
        for kk in 0..k {
            dot_row[kk] = dots[(i, kk)];
        }
        let ld = ctx.log_densities_from_projection(&yrow, gsq, &dot_row);
        let max = ld.iter().fold(ld[0], |acc, &v| acc.max(v));
        let mut sum = T::zero();
        for kk in 0..k {
            sum += (ld[kk] - max).exp();
        }
        let lse = max + sum.ln();
        loglik += lse;
        for kk in 0..k {
            t[(i, kk)] = (ld[kk] - lse).exp();
        }
        // exact renormalization against accumulated rounding
        let mut row_sum = T::zero();
        for kk in 0..k {
            row_sum += t[(i, kk)];
        }
        for kk in 0..k {
            t[(i, kk)] /= row_sum;
        }
    }
    let post = PosteriorMatrix::from_matrix(t)?;
    Ok((post, loglik))
}

/// Fits one DFM model with K clusters by alternating F, M and E steps until
/// the relative log-likelihood change drops below `tol` or `max_iter` is
/// reached. Runs `n_restarts` initializations (seeds `seed`, `seed+1`, ...)
/// and keeps the restart with the highest final log-likelihood.
pub fn fit<T: Scalar>(
    coeffs: &CoefficientMatrix<T>,
    w_gram: &DMatrix<T>,
    k: usize,
    model: DfmModelSpec,
    opts: &FitOptions,
) -> Result<FittedModel<T>> {
    let n = coeffs.n();
    let p = coeffs.p();
    if !coeffs.is_centered() {
        return Err(Error::InvalidArgument(
            "fit requires centered coefficients".into(),
        ));
    }
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need K >= 2, got K={k}")));
    }
    if n < k {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} curves into K={k} clusters"
        )));
    }
    let d = opts.d_override.unwrap_or(k - 1);
    if d == 0 || d > k - 1 || d >= p {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= d <= K-1 and d < p, got d={d}, K={k}, p={p}"
        )));
    }

    let mut best: Option<FittedModel<T>> = None;
    let mut last_failure = String::from("no restart attempted");
    for r in 0..opts.n_restarts.max(1) {
        let restart_seed = opts.seed.wrapping_add(r as u64);
        match fit_once(coeffs, w_gram, k, d, model, opts, restart_seed) {
            Ok(candidate) => {
                let better = best
                    .as_ref()
                    .map_or(true, |b| candidate.loglik() > b.loglik());
                if better {
                    best = Some(candidate);
                }
            }
            Err(e) => last_failure = e.to_string(),
        }
    }
    best.ok_or(Error::AllRestartsFailed {
        attempts: opts.n_restarts.max(1),
        k,
        last_failure,
    })
}

fn fit_once<T: Scalar>(
    coeffs: &CoefficientMatrix<T>,
    w_gram: &DMatrix<T>,
    k: usize,
    d: usize,
    model: DfmModelSpec,
    opts: &FitOptions,
    seed: u64,
) -> Result<FittedModel<T>> {
    let mut post = initialize(coeffs, k, opts.init, seed)?;
    let tol = cast::<T>(opts.tol);
    let mut trace = Vec::with_capacity(opts.max_iter);
    let mut prev_ll: Option<T> = None;
    let mut converged = false;
    let mut state: Option<(DfmParams<T>, DiscriminativeSubspace<T>)> = None;
    let mut n_iter = 0usize;

    for _ in 0..opts.max_iter {
        n_iter += 1;
        let subspace = f_step(coeffs, w_gram, &post, d)?;
        let params = m_step(coeffs, &post, &subspace, model)?;
        let (new_post, ll) = e_step(coeffs, &params)?;
        post = new_post;
        trace.push(ll);
        state = Some((params, subspace));
        if let Some(prev) = prev_ll {
            if (ll - prev).abs() < tol * ll.abs().max(T::one()) {
                converged = true;
                break;
            }
        }
        prev_ll = Some(ll);
    }

    let (params, subspace) = state.expect("max_iter >= 1");
    if trace.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "log-likelihood trace contains non-finite values".into(),
        ));
    }
    Ok(FittedModel {
        params,
        posteriors: post,
        subspace,
        loglik_trace: trace,
        converged,
        n_iter,
        model,
    })
}

/// Discriminative coordinates Gamma W U used for visualization.
pub fn project<T: Scalar>(
    coeffs: &CoefficientMatrix<T>,
    subspace: &DiscriminativeSubspace<T>,
    w_gram: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    let gamma = coeffs.gamma();
    let p = gamma.ncols();
    if subspace.u.nrows() != p || w_gram.nrows() != p || w_gram.ncols() != p {
        return Err(Error::InvalidArgument(
            "projection dimensions do not agree".into(),
        ));
    }
    if is_identity(w_gram) {
        Ok(gamma * &subspace.u)
    } else {
        Ok(gamma * (w_gram * &subspace.u))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisSpec;
    use crate::model::{BetaSet, BetaStructure, SigmaSet, SigmaStructure};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Any valid basis with the right p; the tests below work directly on the
    /// coefficient matrix with an explicit gram matrix.
    fn carrier_basis(p: usize) -> BasisSpec<f64> {
        BasisSpec::bspline_uniform(p.min(4), 0.0, 1.0, p).unwrap()
    }

    fn blob_coeffs(n_per: usize, p: usize, gap: f64, seed: u64) -> CoefficientMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 2 * n_per;
        let mut gamma = DMatrix::<f64>::zeros(n, p);
        for i in 0..n {
            let center = if i < n_per { -gap } else { gap };
            for j in 0..p {
                let offset = if j == 0 { center } else { 0.3 * center };
                gamma[(i, j)] = offset + rng.gen::<f64>() - 0.5;
            }
        }
        CoefficientMatrix::from_gamma(gamma, carrier_basis(p))
            .unwrap()
            .center()
    }

    #[test]
    fn initialize_kmeans_recovers_separated_clouds() {
        let coeffs = blob_coeffs(20, 5, 6.0, 2);
        let post = initialize(&coeffs, 2, InitStrategy::KMeans, 42).unwrap();
        let labels = post.hard_assignments();
        let first = labels[0];
        assert!(labels[..20].iter().all(|&l| l == first));
        assert!(labels[20..].iter().all(|&l| l != first));
    }

    #[test]
    fn initialize_random_rows_sum_to_one() {
        let coeffs = blob_coeffs(10, 4, 1.0, 3);
        let post = initialize(&coeffs, 3, InitStrategy::RandomPosterior, 7).unwrap();
        for i in 0..post.n() {
            let sum: f64 = (0..3).map(|k| post.matrix()[(i, k)]).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn initialize_is_deterministic_per_seed() {
        let coeffs = blob_coeffs(15, 4, 2.0, 5);
        for strategy in [InitStrategy::KMeans, InitStrategy::RandomPosterior] {
            let a = initialize(&coeffs, 3, strategy, 11).unwrap();
            let b = initialize(&coeffs, 3, strategy, 11).unwrap();
            assert_eq!(a.matrix(), b.matrix());
        }
    }

    #[test]
    fn initialize_rejects_more_clusters_than_curves() {
        let coeffs = blob_coeffs(2, 4, 2.0, 5);
        assert!(initialize(&coeffs, 5, InitStrategy::KMeans, 1).is_err());
    }

    /// Power-iteration oracle for the dominant eigenpair of the pencil
    /// (Gamma' T T' Gamma W, Gamma' Gamma W), fully independent of the
    /// Cholesky reduction used by the implementation.
    fn dense_gep_oracle(
        gamma: &DMatrix<f64>,
        tmat: &DMatrix<f64>,
        w: &DMatrix<f64>,
    ) -> (f64, DVector<f64>) {
        let gt = gamma.tr_mul(tmat);
        let a = &gt * gt.transpose() * w;
        let mut s = gamma.tr_mul(gamma) * w;
        let p = s.nrows();
        let ridge = 1e-8 * s.trace() / p as f64;
        for i in 0..p {
            s[(i, i)] += ridge;
        }
        let m = s.try_inverse().expect("oracle pencil invertible") * a;
        let mut v = DVector::from_element(p, 1.0 / (p as f64).sqrt());
        let mut eta = 0.0;
        for _ in 0..200_000 {
            let next = &m * &v;
            let norm = next.norm();
            assert!(norm > 0.0, "oracle collapsed");
            let next = next / norm;
            let delta = (&next - &v).norm().min((&next + &v).norm());
            v = next;
            eta = (&m * &v).dot(&v);
            if delta < 1e-13 {
                break;
            }
        }
        (eta, v)
    }

    #[test]
    fn f_step_matches_power_iteration_oracle() {
        let coeffs = blob_coeffs(25, 5, 3.0, 8);
        let w = DMatrix::<f64>::identity(5, 5);
        let post = initialize(&coeffs, 2, InitStrategy::KMeans, 4).unwrap();
        let sub = f_step(&coeffs, &w, &post, 1).unwrap();
        let (eta, v) = dense_gep_oracle(coeffs.gamma(), &post.scaled(), &w);
        assert!(
            (sub.eigenvalues[0] - eta).abs() < 1e-6,
            "eigenvalue {} vs oracle {eta}",
            sub.eigenvalues[0]
        );
        let nu = sub.u.column(0).into_owned();
        let cos = nu.dot(&v).abs() / (nu.norm() * v.norm());
        assert!(cos > 1.0 - 1e-6, "direction misaligned: cos={cos}");
    }

    #[test]
    fn uniform_posteriors_give_zero_leading_eigenvalue() {
        let coeffs = blob_coeffs(20, 5, 3.0, 9);
        let w = DMatrix::<f64>::identity(5, 5);
        let k = 3;
        let t = DMatrix::from_element(coeffs.n(), k, 1.0 / k as f64);
        let post = PosteriorMatrix::from_matrix(t).unwrap();
        let sub = f_step(&coeffs, &w, &post, 1).unwrap();
        assert!(
            sub.eigenvalues[0].abs() < 1e-8,
            "no group structure should give eta ~ 0, got {}",
            sub.eigenvalues[0]
        );
    }

    #[test]
    fn f_step_eigenvalues_invariant_under_cluster_relabeling() {
        let coeffs = blob_coeffs(18, 6, 2.5, 10);
        let w = DMatrix::<f64>::identity(6, 6);
        let post = initialize(&coeffs, 3, InitStrategy::RandomPosterior, 21).unwrap();
        let sub = f_step(&coeffs, &w, &post, 2).unwrap();
        // permute posterior columns
        let t = post.matrix();
        let perm = [2usize, 0, 1];
        let tp = DMatrix::from_fn(t.nrows(), 3, |i, j| t[(i, perm[j])]);
        let post_p = PosteriorMatrix::from_matrix(tp).unwrap();
        let sub_p = f_step(&coeffs, &w, &post_p, 2).unwrap();
        for j in 0..2 {
            assert!(
                (sub.eigenvalues[j] - sub_p.eigenvalues[j]).abs() < 1e-10,
                "eigenvalue {j} changed under relabeling"
            );
        }
    }

    #[test]
    fn f_step_subspace_invariant_under_global_scaling() {
        let coeffs = blob_coeffs(18, 6, 2.5, 12);
        let w = DMatrix::<f64>::identity(6, 6);
        let post = initialize(&coeffs, 3, InitStrategy::KMeans, 2).unwrap();
        let sub = f_step(&coeffs, &w, &post, 2).unwrap();
        let scaled_gamma = coeffs.gamma() * 3.7;
        let basis = carrier_basis(6);
        let scaled = CoefficientMatrix::from_gamma(scaled_gamma, basis)
            .unwrap()
            .center();
        let sub_s = f_step(&scaled, &w, &post, 2).unwrap();
        // principal angles between spans
        let qa = sub.u.clone().qr().q();
        let qb = sub_s.u.clone().qr().q();
        let svd = qa.tr_mul(&qb).svd(false, false);
        for sv in svd.singular_values.iter() {
            assert!(
                sv.clamp(-1.0, 1.0).acos() < 1e-6,
                "principal angle too large under scaling"
            );
        }
    }

    #[test]
    fn f_step_eigenvalues_within_unit_interval_and_sorted() {
        let coeffs = blob_coeffs(30, 7, 2.0, 14);
        let w = DMatrix::<f64>::identity(7, 7);
        let post = initialize(&coeffs, 4, InitStrategy::RandomPosterior, 3).unwrap();
        let sub = f_step(&coeffs, &w, &post, 3).unwrap();
        for j in 0..3 {
            assert!(sub.eigenvalues[j] >= 0.0);
            assert!(sub.eigenvalues[j] <= 1.0 + 1e-8);
            if j > 0 {
                assert!(
                    sub.eigenvalues[j] <= sub.eigenvalues[j - 1] + 1e-8,
                    "eigenvalues must be non-increasing"
                );
            }
        }
    }

    #[test]
    fn f_step_requires_centered_coefficients() {
        let basis = BasisSpec::fourier(5, 0.0, 1.0).unwrap();
        let gamma = DMatrix::<f64>::from_fn(10, 5, |i, j| (i + j) as f64);
        let coeffs = CoefficientMatrix::from_gamma(gamma, basis).unwrap();
        let w = DMatrix::<f64>::identity(5, 5);
        let post = PosteriorMatrix::from_hard(&[0, 0, 0, 0, 0, 1, 1, 1, 1, 1], 2).unwrap();
        assert!(f_step(&coeffs, &w, &post, 1).is_err());
    }

    fn model_full() -> DfmModelSpec {
        DfmModelSpec::new(SigmaStructure::Full, BetaStructure::PerCluster)
    }

    #[test]
    fn m_step_single_cluster_degenerate_case() {
        let coeffs = blob_coeffs(12, 4, 1.0, 6);
        let post = PosteriorMatrix::from_hard(&vec![0usize; coeffs.n()], 1).unwrap();
        let mut u = DMatrix::<f64>::zeros(4, 1);
        u[(0, 0)] = 1.0;
        let subspace = DiscriminativeSubspace {
            u,
            eigenvalues: DVector::from_element(1, 1.0),
            sparse: false,
            lambda: 0.0,
        };
        let params = m_step(&coeffs, &post, &subspace, model_full()).unwrap();
        assert_eq!(params.k, 1);
        assert!((params.pi[0] - 1.0).abs() < 1e-15);
        // centered coefficients have zero weighted mean
        assert!(params.mu[0][0].abs() < 1e-10);
    }

    #[test]
    fn m_step_proportions_sum_to_one() {
        let coeffs = blob_coeffs(15, 5, 2.0, 7);
        let post = initialize(&coeffs, 3, InitStrategy::RandomPosterior, 5).unwrap();
        let sub = f_step(
            &coeffs,
            &DMatrix::<f64>::identity(5, 5),
            &post,
            2,
        )
        .unwrap();
        let params = m_step(&coeffs, &post, &sub, model_full()).unwrap();
        let total: f64 = (0..3).map(|k| params.pi[k]).sum();
        assert!((total - 1.0).abs() < 1e-12);
        params.validate().unwrap();
    }

    #[test]
    fn m_step_beta_matches_direct_formula() {
        // p=4, d=1, hard posteriors: recompute both noise-variance flavors
        // from dense covariances with plain arithmetic
        let coeffs = blob_coeffs(10, 4, 2.0, 8);
        let n = coeffs.n();
        let labels: Vec<usize> = (0..n).map(|i| usize::from(i >= 10)).collect();
        let post = PosteriorMatrix::from_hard(&labels, 2).unwrap();
        let sub = f_step(&coeffs, &DMatrix::<f64>::identity(4, 4), &post, 1).unwrap();
        let gamma = coeffs.gamma();

        // common beta: complement share of the total covariance
        let model = DfmModelSpec::new(SigmaStructure::Full, BetaStructure::Common);
        let params = m_step(&coeffs, &post, &sub, model).unwrap();
        let u = &params.u;
        let mut grand = DVector::<f64>::zeros(4);
        for i in 0..n {
            for j in 0..4 {
                grand[j] += gamma[(i, j)];
            }
        }
        grand /= n as f64;
        let mut total = DMatrix::<f64>::zeros(4, 4);
        for i in 0..n {
            let diff = DVector::from_fn(4, |j, _| gamma[(i, j)] - grand[j]);
            total += &diff * diff.transpose();
        }
        total /= (n - 1) as f64; // the total covariance stays Bessel-corrected
        let ucu = (u.tr_mul(&total) * u)[(0, 0)];
        let beta_expect = (total.trace() - ucu) / (4.0 - 1.0);
        assert!(
            (params.beta.get(0) - beta_expect).abs() < 1e-10,
            "common beta {} vs direct {}",
            params.beta.get(0),
            beta_expect
        );

        // per-cluster beta: complement share of the within-cluster covariance
        let model = DfmModelSpec::new(SigmaStructure::Full, BetaStructure::PerCluster);
        let params = m_step(&coeffs, &post, &sub, model).unwrap();
        let u = &params.u;
        for k in 0..2 {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == k).collect();
            let nk = members.len() as f64;
            let mut mean = DVector::<f64>::zeros(4);
            for &i in &members {
                for j in 0..4 {
                    mean[j] += gamma[(i, j)];
                }
            }
            mean /= nk;
            let mut ck = DMatrix::<f64>::zeros(4, 4);
            for &i in &members {
                let diff = DVector::from_fn(4, |j, _| gamma[(i, j)] - mean[j]);
                ck += &diff * diff.transpose();
            }
            ck /= nk;
            let ucu = (u.tr_mul(&ck) * u)[(0, 0)];
            let beta_expect = (ck.trace() - ucu) / (4.0 - 1.0);
            assert!(
                (params.beta.get(k) - beta_expect).abs() < 1e-10,
                "cluster {k} beta {} vs direct {}",
                params.beta.get(k),
                beta_expect
            );
        }
    }

    #[test]
    fn m_step_flags_empty_cluster() {
        let coeffs = blob_coeffs(10, 4, 2.0, 9);
        let n = coeffs.n();
        let mut t = DMatrix::<f64>::zeros(n, 2);
        for i in 0..n {
            t[(i, 0)] = 1.0; // cluster 1 gets nothing
        }
        let post = PosteriorMatrix::from_matrix(t).unwrap();
        let mut u = DMatrix::<f64>::zeros(4, 1);
        u[(0, 0)] = 1.0;
        let subspace = DiscriminativeSubspace {
            u,
            eigenvalues: DVector::from_element(1, 0.5),
            sparse: false,
            lambda: 0.0,
        };
        match m_step(&coeffs, &post, &subspace, model_full()) {
            Err(Error::EmptyCluster { k: 1, .. }) => {}
            other => panic!("expected EmptyCluster, got {other:?}"),
        }
    }

    fn params_for_estep(p: usize, k: usize, d: usize, seed: u64) -> DfmParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = DMatrix::<f64>::from_fn(p, d, |_, _| rng.gen::<f64>() - 0.5);
        let u = raw.qr().q();
        let mut pi: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 0.3).collect();
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|x| *x /= total);
        let centers: Vec<DVector<f64>> = (0..k)
            .map(|_| DVector::from_fn(p, |_, _| 2.0 * rng.gen::<f64>() - 1.0))
            .collect();
        DfmParams {
            k,
            d,
            p,
            pi: DVector::from_vec(pi),
            mu: centers.iter().map(|c| u.tr_mul(c)).collect(),
            center: centers,
            sigma: SigmaSet::PerCluster(
                (0..k)
                    .map(|_| {
                        let a = DMatrix::<f64>::from_fn(d, d, |_, _| rng.gen::<f64>() - 0.5);
                        &a * a.transpose() + DMatrix::identity(d, d) * 0.5
                    })
                    .collect(),
            ),
            beta: BetaSet::PerCluster((0..k).map(|_| 0.4 + rng.gen::<f64>()).collect()),
            u,
            beta_floored: false,
        }
    }

    #[test]
    fn e_step_single_cluster_gives_unit_responsibilities() {
        let coeffs = blob_coeffs(8, 4, 1.0, 3);
        let params = params_for_estep(4, 1, 1, 4);
        let (post, _) = e_step(&coeffs, &params).unwrap();
        for i in 0..post.n() {
            assert_eq!(post.matrix()[(i, 0)], 1.0);
        }
    }

    #[test]
    fn e_step_symmetric_clusters_split_even() {
        let p = 4;
        let basis = carrier_basis(p);
        let gamma = DMatrix::<f64>::zeros(3, p); // points at the origin
        let coeffs = CoefficientMatrix::from_gamma(gamma, basis).unwrap().center();
        let mut u = DMatrix::<f64>::zeros(p, 1);
        u[(0, 0)] = 1.0;
        let params = DfmParams {
            k: 2,
            d: 1,
            p,
            pi: DVector::from_vec(vec![0.5, 0.5]),
            mu: vec![DVector::from_element(1, -1.5), DVector::from_element(1, 1.5)],
            center: vec![
                DVector::from_fn(p, |j, _| if j == 0 { -1.5 } else { 0.0 }),
                DVector::from_fn(p, |j, _| if j == 0 { 1.5 } else { 0.0 }),
            ],
            sigma: SigmaSet::Common(DMatrix::from_element(1, 1, 0.7)),
            beta: BetaSet::Common(0.4),
            u,
            beta_floored: false,
        };
        let (post, _) = e_step(&coeffs, &params).unwrap();
        for i in 0..post.n() {
            assert!((post.matrix()[(i, 0)] - 0.5).abs() < 1e-12);
            assert!((post.matrix()[(i, 1)] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn e_step_loglik_matches_dense_mixture_oracle() {
        let coeffs = blob_coeffs(12, 4, 1.5, 5);
        let params = params_for_estep(4, 3, 2, 6);
        let (_, loglik) = e_step(&coeffs, &params).unwrap();

        // dense oracle: full covariance per cluster, log-sum-exp by hand
        let p = 4;
        let eye = DMatrix::<f64>::identity(p, p);
        let mut oracle = 0.0;
        for i in 0..coeffs.n() {
            let gamma_i = DVector::from_fn(p, |j, _| coeffs.gamma()[(i, j)]);
            let lps: Vec<f64> = (0..params.k)
                .map(|k| {
                    let u = &params.u;
                    let cov = u * params.sigma.get(k) * u.transpose()
                        + params.beta.get(k) * (&eye - u * u.transpose());
                    let mean = params.center[k].clone();
                    let chol = cov.cholesky().unwrap();
                    let diff = &gamma_i - mean;
                    let solved = chol.solve(&diff);
                    let log_det: f64 = 2.0 * (0..p).map(|r| chol.l()[(r, r)].ln()).sum::<f64>();
                    params.pi[k].ln()
                        - 0.5
                            * (diff.dot(&solved)
                                + log_det
                                + p as f64 * (2.0 * std::f64::consts::PI).ln())
                })
                .collect();
            let max = lps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            oracle += max + lps.iter().map(|lp| (lp - max).exp()).sum::<f64>().ln();
        }
        assert!(
            (loglik - oracle).abs() < 1e-8,
            "loglik {loglik} vs oracle {oracle}"
        );
    }

    #[test]
    fn e_step_rows_sum_to_one() {
        let coeffs = blob_coeffs(20, 5, 2.0, 7);
        let params = params_for_estep(5, 3, 2, 8);
        let (post, _) = e_step(&coeffs, &params).unwrap();
        for i in 0..post.n() {
            let sum: f64 = (0..3).map(|k| post.matrix()[(i, k)]).sum();
            assert!((sum - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn m_plus_e_pass_is_likelihood_monotone_with_fixed_orientation() {
        // exact EM monotonicity holds for the models whose M-step is the
        // conditional maximizer: per-cluster structures with free noise.
        // The common structures read the total covariance and carry no
        // such guarantee
        let coeffs = blob_coeffs(25, 5, 1.2, 11);
        let w = DMatrix::<f64>::identity(5, 5);
        let monotone: Vec<DfmModelSpec> = crate::model::DfmModelSpec::all()
            .into_iter()
            .filter(|m| {
                matches!(
                    m.sigma,
                    SigmaStructure::Full | SigmaStructure::Diagonal | SigmaStructure::Spherical
                ) && m.beta == BetaStructure::PerCluster
            })
            .collect();
        for model in monotone {
            let post0 = initialize(&coeffs, 2, InitStrategy::RandomPosterior, 13).unwrap();
            let sub = f_step(&coeffs, &w, &post0, 1).unwrap();
            let params_a = m_step(&coeffs, &post0, &sub, model).unwrap();
            let (post1, ll_a) = e_step(&coeffs, &params_a).unwrap();
            let params_b = m_step(&coeffs, &post1, &sub, model).unwrap();
            let (_, ll_b) = e_step(&coeffs, &params_b).unwrap();
            assert!(
                ll_b >= ll_a - 1e-8,
                "{}: M+E pass decreased loglik {ll_a} -> {ll_b}",
                model.name()
            );
        }
    }

    #[test]
    fn fit_separable_blobs_is_perfect_and_deterministic() {
        let coeffs = blob_coeffs(25, 5, 6.0, 15);
        let w = DMatrix::<f64>::identity(5, 5);
        let opts = FitOptions {
            seed: 3,
            n_restarts: 2,
            ..FitOptions::default()
        };
        let fitted = fit(&coeffs, &w, 2, model_full(), &opts).unwrap();
        let labels = fitted.hard_assignments();
        let truth: Vec<usize> = (0..50).map(|i| usize::from(i >= 25)).collect();
        let acc = crate::sim::clustering_accuracy(&labels, &truth).unwrap();
        assert_eq!(acc, 100.0, "separable blobs must be clustered perfectly");
        assert!(fitted.converged);

        let again = fit(&coeffs, &w, 2, model_full(), &opts).unwrap();
        assert_eq!(fitted.hard_assignments(), again.hard_assignments());
        assert_eq!(fitted.loglik(), again.loglik());
    }

    #[test]
    fn fit_assignments_invariant_under_pre_centering_shift() {
        let base = blob_coeffs(20, 5, 4.0, 16);
        // re-create the raw uncentered gamma, add a constant vector, recenter
        let basis = BasisSpec::fourier(5, 0.0, 1.0).unwrap();
        let mut shifted = base.gamma().clone();
        for i in 0..shifted.nrows() {
            for j in 0..shifted.ncols() {
                shifted[(i, j)] += 11.0 * (j as f64 + 1.0);
            }
        }
        let shifted = CoefficientMatrix::from_gamma(shifted, basis).unwrap().center();
        let w = DMatrix::<f64>::identity(5, 5);
        let opts = FitOptions {
            seed: 8,
            n_restarts: 2,
            ..FitOptions::default()
        };
        let a = fit(&base, &w, 2, model_full(), &opts).unwrap();
        let b = fit(&shifted, &w, 2, model_full(), &opts).unwrap();
        assert_eq!(a.hard_assignments(), b.hard_assignments());
    }

    #[test]
    fn fit_reports_all_restarts_failed() {
        // two identical points cannot support K=2 with 3 restarts
        let basis = BasisSpec::fourier(3, 0.0, 1.0).unwrap();
        let gamma = DMatrix::<f64>::zeros(2, 3);
        let coeffs = CoefficientMatrix::from_gamma(gamma, basis).unwrap().center();
        let w = DMatrix::<f64>::identity(3, 3);
        let opts = FitOptions {
            n_restarts: 3,
            ..FitOptions::default()
        };
        match fit(&coeffs, &w, 2, model_full(), &opts) {
            Err(Error::AllRestartsFailed { attempts: 3, k: 2, .. }) => {}
            other => panic!("expected AllRestartsFailed, got {other:?}"),
        }
    }

    #[test]
    fn project_with_canonical_columns_returns_gamma_columns() {
        let coeffs = blob_coeffs(10, 5, 2.0, 17);
        let mut u = DMatrix::<f64>::zeros(5, 2);
        u[(0, 0)] = 1.0;
        u[(1, 1)] = 1.0;
        let sub = DiscriminativeSubspace {
            u,
            eigenvalues: DVector::from_vec(vec![1.0, 0.5]),
            sparse: false,
            lambda: 0.0,
        };
        let w = DMatrix::<f64>::identity(5, 5);
        let proj = project(&coeffs, &sub, &w).unwrap();
        for i in 0..coeffs.n() {
            assert_eq!(proj[(i, 0)], coeffs.gamma()[(i, 0)]);
            assert_eq!(proj[(i, 1)], coeffs.gamma()[(i, 1)]);
        }
    }

    #[test]
    fn project_unit_direction_gives_unit_first_coordinate() {
        // curve whose coefficients equal u_1 itself projects to |u_1|^2 = 1
        let p = 5;
        let basis = carrier_basis(p);
        let mut u = DMatrix::<f64>::zeros(p, 1);
        let raw = [0.5, -0.3, 0.6, 0.2, -0.4];
        let norm: f64 = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        for j in 0..p {
            u[(j, 0)] = raw[j] / norm;
        }
        let mut gamma = DMatrix::<f64>::zeros(1, p);
        for j in 0..p {
            gamma[(0, j)] = u[(j, 0)];
        }
        let coeffs = CoefficientMatrix::from_gamma(gamma, basis).unwrap();
        let sub = DiscriminativeSubspace {
            u,
            eigenvalues: DVector::from_element(1, 1.0),
            sparse: false,
            lambda: 0.0,
        };
        let w = DMatrix::<f64>::identity(p, p);
        let proj = project(&coeffs, &sub, &w).unwrap();
        assert!((proj[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn generic_scalar_f32_fit_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 30;
        let p = 5;
        let mut gamma = DMatrix::<f32>::zeros(n, p);
        for i in 0..n {
            let center = if i < 15 { -4.0f32 } else { 4.0 };
            for j in 0..p {
                gamma[(i, j)] = if j == 0 { center } else { 0.0 } + rng.gen::<f32>() - 0.5;
            }
        }
        let basis = BasisSpec::<f32>::bspline_uniform(4, 0.0, 1.0, p).unwrap();
        let coeffs = CoefficientMatrix::from_gamma(gamma, basis).unwrap().center();
        let w = DMatrix::<f32>::identity(p, p);
        let opts = FitOptions {
            seed: 1,
            n_restarts: 2,
            tol: 1e-4,
            ..FitOptions::default()
        };
        let fitted = fit(&coeffs, &w, 2, model_full(), &opts).unwrap();
        let labels = fitted.hard_assignments();
        let first = labels[0];
        assert!(labels[..15].iter().all(|&l| l == first));
        assert!(labels[15..].iter().all(|&l| l != first));
    }

    #[test]
    fn posterior_matrix_validation() {
        let bad = DMatrix::<f64>::from_row_slice(1, 2, &[0.7, 0.7]);
        assert!(PosteriorMatrix::from_matrix(bad).is_err());
        let good = DMatrix::<f64>::from_row_slice(2, 2, &[0.3, 0.7, 1.0, 0.0]);
        let post = PosteriorMatrix::from_matrix(good).unwrap();
        assert!((post.counts()[0] - 1.3).abs() < 1e-12);
        assert_eq!(post.hard_assignments(), vec![1, 0]);
    }
}
