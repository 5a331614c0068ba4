//! The discriminative functional mixture model family: the 12 covariance
//! parameterizations, their free-parameter counts, and the structured
//! Gaussian log-density evaluated without ever materializing the orthogonal
//! complement of the subspace.

use nalgebra::{DMatrix, DVector};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};

/// Structure imposed on the within-subspace covariance matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SigmaStructure {
    /// Free symmetric matrix per cluster (`Sigma_k`).
    Full,
    /// One free symmetric matrix shared by all clusters (`Sigma`).
    CommonFull,
    /// Diagonal matrix per cluster (`alpha_kj`).
    Diagonal,
    /// One diagonal matrix shared by all clusters (`alpha_j`).
    CommonDiagonal,
    /// Isotropic variance per cluster (`alpha_k`).
    Spherical,
    /// One isotropic variance shared by all clusters (`alpha`).
    CommonSpherical,
}

/// Structure imposed on the noise variance outside the subspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BetaStructure {
    /// One noise variance per cluster (`beta_k`).
    PerCluster,
    /// A single shared noise variance (`beta`).
    Common,
}

/// One of the 12 DFM covariance parameterizations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DfmModelSpec {
    pub sigma: SigmaStructure,
    pub beta: BetaStructure,
}

impl DfmModelSpec {
    pub const fn new(sigma: SigmaStructure, beta: BetaStructure) -> Self {
        Self { sigma, beta }
    }

    /// All 12 models, most general first.
    pub fn all() -> Vec<DfmModelSpec> {
        use BetaStructure::*;
        use SigmaStructure::*;
        let mut out = Vec::with_capacity(12);
        for sigma in [
            Full,
            CommonFull,
            Diagonal,
            Spherical,
            CommonDiagonal,
            CommonSpherical,
        ] {
            for beta in [PerCluster, Common] {
                out.push(DfmModelSpec::new(sigma, beta));
            }
        }
        out
    }

    fn sigma_token(&self) -> &'static str {
        match self.sigma {
            SigmaStructure::Full => "Sigma_k",
            SigmaStructure::CommonFull => "Sigma",
            SigmaStructure::Diagonal => "alpha_kj",
            SigmaStructure::CommonDiagonal => "alpha_j",
            SigmaStructure::Spherical => "alpha_k",
            SigmaStructure::CommonSpherical => "alpha",
        }
    }

    fn beta_token(&self) -> &'static str {
        match self.beta {
            BetaStructure::PerCluster => "beta_k",
            BetaStructure::Common => "beta",
        }
    }

    /// Canonical name, e.g. `DFM[Sigma_k,beta]` or `DFM[alpha_kj,beta_k]`.
    pub fn name(&self) -> String {
        format!("DFM[{},{}]", self.sigma_token(), self.beta_token())
    }

    /// Number of free variance parameters when the subspace dimension is
    /// `d = K - 1`: orientation plus within-subspace covariances plus noise
    /// variances.
    pub fn param_count(&self, k: usize, p: usize) -> Result<usize> {
        if k < 2 {
            return Err(Error::InvalidModel(format!("need K >= 2, got K={k}")));
        }
        if p <= k - 1 {
            return Err(Error::InvalidModel(format!(
                "need p > K-1, got p={p}, K={k}"
            )));
        }
        Ok(self.variance_param_count(k, p, k - 1))
    }

    /// Variance-parameter count for an arbitrary subspace dimension `d`.
    pub fn variance_param_count(&self, k: usize, p: usize, d: usize) -> usize {
        // orientation: orthonormal p x d frame
        let orientation = d * p - d * (d + 1) / 2;
        let sigma = match self.sigma {
            SigmaStructure::Full => k * d * (d + 1) / 2,
            SigmaStructure::CommonFull => d * (d + 1) / 2,
            SigmaStructure::Diagonal => k * d,
            SigmaStructure::CommonDiagonal => d,
            SigmaStructure::Spherical => k,
            SigmaStructure::CommonSpherical => 1,
        };
        let beta = match self.beta {
            BetaStructure::PerCluster => k,
            BetaStructure::Common => 1,
        };
        orientation + sigma + beta
    }

    /// Total free-parameter count xi(M): variance parameters plus `K - 1`
    /// mixing proportions plus `K * d` latent means. This is the default
    /// convention for the selection criteria; the variance-only count stays
    /// available through [`param_count`](Self::param_count).
    pub fn total_param_count(&self, k: usize, p: usize) -> Result<usize> {
        let d = k - 1;
        Ok(self.param_count(k, p)? + (k - 1) + k * d)
    }

    pub fn total_param_count_with_d(&self, k: usize, p: usize, d: usize) -> usize {
        self.variance_param_count(k, p, d) + (k - 1) + k * d
    }
}

impl fmt::Display for DfmModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

impl FromStr for DfmModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let trimmed = s.trim();
        let inner = trimmed
            .strip_prefix("DFM[")
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(|| {
                Error::InvalidModel(format!("model name must look like DFM[...,...], got {s:?}"))
            })?;
        let (sig, bet) = inner.split_once(',').ok_or_else(|| {
            Error::InvalidModel(format!("model name needs a sigma and a beta token: {s:?}"))
        })?;
        let sigma = match sig.trim() {
            "Sigma_k" => SigmaStructure::Full,
            "Sigma" => SigmaStructure::CommonFull,
            "alpha_kj" => SigmaStructure::Diagonal,
            "alpha_j" => SigmaStructure::CommonDiagonal,
            "alpha_k" => SigmaStructure::Spherical,
            "alpha" => SigmaStructure::CommonSpherical,
            other => {
                return Err(Error::InvalidModel(format!(
                    "unknown sigma structure {other:?} (expected Sigma_k, Sigma, alpha_kj, alpha_j, alpha_k or alpha)"
                )))
            }
        };
        let beta = match bet.trim() {
            "beta_k" => BetaStructure::PerCluster,
            "beta" => BetaStructure::Common,
            other => {
                return Err(Error::InvalidModel(format!(
                    "unknown beta structure {other:?} (expected beta_k or beta)"
                )))
            }
        };
        Ok(DfmModelSpec::new(sigma, beta))
    }
}

/// Within-subspace covariance matrices, stored once when shared.
#[derive(Debug, Clone)]
pub enum SigmaSet<T: Scalar> {
    PerCluster(Vec<DMatrix<T>>),
    Common(DMatrix<T>),
}

impl<T: Scalar> SigmaSet<T> {
    pub fn get(&self, k: usize) -> &DMatrix<T> {
        match self {
            SigmaSet::PerCluster(v) => &v[k],
            SigmaSet::Common(m) => m,
        }
    }

    pub fn is_common(&self) -> bool {
        matches!(self, SigmaSet::Common(_))
    }
}

/// Noise variances outside the subspace, stored once when shared.
#[derive(Debug, Clone)]
pub enum BetaSet<T: Scalar> {
    PerCluster(Vec<T>),
    Common(T),
}

impl<T: Scalar> BetaSet<T> {
    pub fn get(&self, k: usize) -> T {
        match self {
            BetaSet::PerCluster(v) => v[k],
            BetaSet::Common(b) => *b,
        }
    }

    pub fn is_common(&self) -> bool {
        matches!(self, BetaSet::Common(_))
    }
}

/// Fitted mixture parameters: proportions, cluster means, covariances,
/// noise variances and the subspace orientation.
///
/// Each cluster has a full coefficient-space center `m_k`; its projection
/// `mu_k = U' m_k` is the latent mean governing the within-subspace
/// Gaussian, while the components of `m_k` outside the subspace center the
/// isotropic complement density.
#[derive(Debug, Clone)]
pub struct DfmParams<T: Scalar> {
    pub k: usize,
    pub d: usize,
    pub p: usize,
    pub pi: DVector<T>,
    /// Latent means, one `d`-vector per cluster (the projection of `center`).
    pub mu: Vec<DVector<T>>,
    /// Full coefficient-space cluster centers, one `p`-vector per cluster.
    pub center: Vec<DVector<T>>,
    pub sigma: SigmaSet<T>,
    pub beta: BetaSet<T>,
    /// Orthonormal p x d orientation of the discriminative subspace.
    pub u: DMatrix<T>,
    /// Set when a noise variance had to be floored at 1e-8.
    pub beta_floored: bool,
}

impl<T: Scalar> DfmParams<T> {
    /// Checks the structural invariants: positive proportions summing to one,
    /// positive noise variances, orthonormal loadings and d <= K-1, d < p.
    pub fn validate(&self) -> Result<()> {
        if self.d > self.k.saturating_sub(1) || self.d >= self.p || self.d == 0 {
            return Err(Error::InvalidModel(format!(
                "need 1 <= d <= K-1 and d < p, got d={}, K={}, p={}",
                self.d, self.k, self.p
            )));
        }
        let mut sum = T::zero();
        for k in 0..self.k {
            if self.pi[k] <= T::zero() {
                return Err(Error::InvalidModel(format!(
                    "mixing proportion {k} is not positive"
                )));
            }
            sum += self.pi[k];
            if self.beta.get(k) <= T::zero() {
                return Err(Error::InvalidModel(format!(
                    "noise variance of cluster {k} is not positive"
                )));
            }
        }
        if (sum - T::one()).abs() > cast::<T>(1e-8) {
            return Err(Error::InvalidModel("mixing proportions must sum to 1".into()));
        }
        let utu = self.u.tr_mul(&self.u);
        for i in 0..self.d {
            for j in 0..self.d {
                let expect = if i == j { T::one() } else { T::zero() };
                if (utu[(i, j)] - expect).abs() > cast::<T>(1e-8) {
                    return Err(Error::InvalidModel(
                        "loading matrix columns are not orthonormal".into(),
                    ));
                }
            }
        }
        for k in 0..self.k {
            if self.center[k].len() != self.p || self.mu[k].len() != self.d {
                return Err(Error::InvalidModel("mean dimensions do not agree".into()));
            }
            let proj = self.u.tr_mul(&self.center[k]);
            if (proj - &self.mu[k]).norm() > cast::<T>(1e-6) {
                return Err(Error::InvalidModel(
                    "latent mean must be the projection of the cluster center".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Precomputed per-cluster quantities for evaluating the structured mixture
/// log-density many times.
pub struct ClusterDensityCtx<T: Scalar> {
    pub k: usize,
    pub d: usize,
    pub p: usize,
    u: DMatrix<T>,
    log_pi: Vec<T>,
    mu: Vec<DVector<T>>,
    center: Vec<DVector<T>>,
    center_sq: Vec<T>,
    sigma_inv: Vec<DMatrix<T>>,
    log_det_sigma: Vec<T>,
    beta: Vec<T>,
}

impl<T: Scalar> ClusterDensityCtx<T> {
    /// Inverts and log-determines each Sigma_k through a symmetric
    /// eigendecomposition with an absolute eigenvalue floor of 1e-10, so
    /// nearly degenerate clusters survive. A cluster whose covariance has
    /// collapsed (smallest eigenvalue below 1e-12 of the largest) is
    /// reported as non-positive-definite so the caller can restart instead
    /// of chasing an unbounded likelihood.
    pub fn new(params: &DfmParams<T>) -> Result<Self> {
        let kk = params.k;
        let mut sigma_inv = Vec::with_capacity(kk);
        let mut log_det = Vec::with_capacity(kk);
        let floor = cast::<T>(1e-10);
        for k in 0..kk {
            let s = params.sigma.get(k);
            let eig = s
                .clone()
                .try_symmetric_eigen(cast::<T>(1e-13), 200)
                .ok_or(Error::EigenFailure)?;
            let max_ev = eig
                .eigenvalues
                .iter()
                .fold(T::zero(), |acc, &v| acc.max(v.abs()));
            let min_ev = eig
                .eigenvalues
                .iter()
                .fold(T::max_value().unwrap(), |acc, &v| acc.min(v));
            if min_ev < cast::<T>(1e-12) * max_ev.max(cast::<T>(1e-300)) {
                return Err(Error::NonPositiveDefinite { k });
            }
            let mut ld = T::zero();
            let mut inv = DMatrix::<T>::zeros(params.d, params.d);
            for (idx, &ev) in eig.eigenvalues.iter().enumerate() {
                let ev = ev.max(floor);
                ld += ev.ln();
                let col = eig.eigenvectors.column(idx);
                let w = T::one() / ev;
                for i in 0..params.d {
                    for j in 0..params.d {
                        inv[(i, j)] += col[i] * col[j] * w;
                    }
                }
            }
            sigma_inv.push(inv);
            log_det.push(ld);
        }
        Ok(Self {
            k: kk,
            d: params.d,
            p: params.p,
            u: params.u.clone(),
            log_pi: (0..kk).map(|k| params.pi[k].ln()).collect(),
            mu: params.mu.clone(),
            center: params.center.clone(),
            center_sq: (0..kk).map(|k| params.center[k].norm_squared()).collect(),
            sigma_inv,
            log_det_sigma: (0..kk).map(|k| log_det[k]).collect(),
            beta: (0..kk).map(|k| params.beta.get(k)).collect(),
        })
    }

    /// Log of `pi_k * phi_k(gamma)` for every cluster. Exploits the block
    /// covariance: the quadratic form splits into a d-dimensional Mahalanobis
    /// part on the subspace and an isotropic complement residual
    /// `|(I - U U')(gamma - m_k)|^2 / beta_k`, with the orthogonal complement
    /// never constructed.
    pub fn log_densities(&self, gamma: &DVector<T>) -> DVector<T> {
        let y = self.u.tr_mul(gamma);
        let gamma_sq = gamma.dot(gamma);
        let dots: Vec<T> = (0..self.k).map(|k| gamma.dot(&self.center[k])).collect();
        self.log_densities_from_projection(&y, gamma_sq, &dots)
    }

    /// Same as [`log_densities`](Self::log_densities) but reusing a
    /// precomputed projection `y = U' gamma`, the squared norm of `gamma`
    /// and the per-cluster dot products `gamma . m_k`.
    pub fn log_densities_from_projection(
        &self,
        y: &DVector<T>,
        gamma_sq: T,
        center_dots: &[T],
    ) -> DVector<T> {
        let log_two_pi = cast::<T>((2.0 * std::f64::consts::PI).ln());
        let half = cast::<T>(0.5);
        let two = cast::<T>(2.0);
        let pd = cast::<T>((self.p - self.d) as f64);
        let pf = cast::<T>(self.p as f64);
        let mut out = DVector::<T>::zeros(self.k);
        let mut diff = DVector::<T>::zeros(self.d);
        for k in 0..self.k {
            for i in 0..self.d {
                diff[i] = y[i] - self.mu[k][i];
            }
            let mut quad = T::zero();
            let mut diff_sq = T::zero();
            let sinv = &self.sigma_inv[k];
            for i in 0..self.d {
                let mut acc = T::zero();
                for j in 0..self.d {
                    acc += sinv[(i, j)] * diff[j];
                }
                quad += diff[i] * acc;
                diff_sq += diff[i] * diff[i];
            }
            // |(I - U U')(gamma - m_k)|^2 = |gamma - m_k|^2 - |y - mu_k|^2
            let full_sq = gamma_sq - two * center_dots[k] + self.center_sq[k];
            let resid_sq = (full_sq - diff_sq).max(T::zero());
            let beta = self.beta[k];
            out[k] = self.log_pi[k]
                - half
                    * (quad
                        + resid_sq / beta
                        + self.log_det_sigma[k]
                        + pd * beta.ln()
                        + pf * log_two_pi);
        }
        out
    }
}

/// Log of `pi_k * phi_k(gamma_i)` for each cluster under the block-structured
/// covariance `U Sigma_k U' + beta_k (I - U U')`.
pub fn cluster_log_densities<T: Scalar>(
    gamma_i: &DVector<T>,
    params: &DfmParams<T>,
) -> Result<DVector<T>> {
    if gamma_i.len() != params.p {
        return Err(Error::InvalidArgument(format!(
            "observation has dimension {} but the model has p={}",
            gamma_i.len(),
            params.p
        )));
    }
    Ok(ClusterDensityCtx::new(params)?.log_densities(gamma_i))
}

/// Applies a model's covariance structure to empirical per-cluster
/// covariances and noise variances by pooling: `common` variants take the
/// n_k-weighted average across clusters, `diagonal` zeroes the off-diagonal
/// entries and `spherical` replaces the diagonal by its mean.
///
/// The alternating fit estimates its `common` structures from the total
/// covariance of the sample instead (see the M-step); this pooled variant
/// suits hard-labelled or externally estimated clusterings.
pub fn constrain_covariance<T: Scalar>(
    sigmas: &[DMatrix<T>],
    betas: &[T],
    weights: &[T],
    model: DfmModelSpec,
) -> (SigmaSet<T>, BetaSet<T>) {
    let k = sigmas.len();
    let d = sigmas[0].nrows();
    let total: T = weights.iter().copied().sum();
    let weighted_avg = |mats: &[DMatrix<T>]| -> DMatrix<T> {
        let mut acc = DMatrix::<T>::zeros(d, d);
        for (m, &w) in mats.iter().zip(weights) {
            acc += m * (w / total);
        }
        acc
    };
    let diagonalize = |m: &DMatrix<T>| -> DMatrix<T> {
        DMatrix::from_fn(d, d, |i, j| if i == j { m[(i, j)] } else { T::zero() })
    };
    let spherize = |m: &DMatrix<T>| -> DMatrix<T> {
        let mean = m.trace() / cast::<T>(d as f64);
        DMatrix::from_diagonal_element(d, d, mean)
    };

    let sigma = match model.sigma {
        SigmaStructure::Full => SigmaSet::PerCluster(sigmas.to_vec()),
        SigmaStructure::CommonFull => SigmaSet::Common(weighted_avg(sigmas)),
        SigmaStructure::Diagonal => {
            SigmaSet::PerCluster(sigmas.iter().map(diagonalize).collect())
        }
        SigmaStructure::CommonDiagonal => SigmaSet::Common(diagonalize(&weighted_avg(sigmas))),
        SigmaStructure::Spherical => SigmaSet::PerCluster(sigmas.iter().map(spherize).collect()),
        SigmaStructure::CommonSpherical => SigmaSet::Common(spherize(&weighted_avg(sigmas))),
    };
    let beta = match model.beta {
        BetaStructure::PerCluster => BetaSet::PerCluster(betas.to_vec()),
        BetaStructure::Common => {
            let mut acc = T::zero();
            for (b, &w) in betas.iter().zip(weights) {
                acc += *b * (w / total);
            }
            BetaSet::Common(acc)
        }
    };
    let _ = k;
    (sigma, beta)
}
