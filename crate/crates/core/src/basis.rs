//! Basis systems for functional data: evaluation, least-squares smoothing of
//! discretely observed curves, Gram matrices and reconstruction.
//!
//! Curves observed at (possibly irregular) time points are projected onto a
//! Fourier or B-spline basis by per-curve least squares; the coefficient
//! matrix is the finite-dimensional proxy used by the clustering machinery.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};

/// A single discretely observed curve with strictly increasing sample times.
#[derive(Debug, Clone)]
pub struct Curve<T: Scalar> {
    times: Vec<T>,
    values: Vec<T>,
}

impl<T: Scalar> Curve<T> {
    pub fn new(times: Vec<T>, values: Vec<T>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidCurves("curve has no samples".into()));
        }
        if times.len() != values.len() {
            return Err(Error::InvalidCurves(format!(
                "curve has {} times but {} values",
                times.len(),
                values.len()
            )));
        }
        for w in times.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidCurves(
                    "sample times must be strictly increasing".into(),
                ));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCurves("curve contains non-finite values".into()));
        }
        Ok(Self { times, values })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }
}

/// A set of `n` observed curves, each with its own sampling grid, plus
/// optional integer class labels and string identifiers.
#[derive(Debug, Clone)]
pub struct SampledCurveSet<T: Scalar> {
    curves: Vec<Curve<T>>,
    labels: Option<Vec<usize>>,
    ids: Option<Vec<String>>,
}

impl<T: Scalar> SampledCurveSet<T> {
    pub fn new(curves: Vec<Curve<T>>) -> Result<Self> {
        if curves.is_empty() {
            return Err(Error::InvalidCurves("curve set is empty".into()));
        }
        Ok(Self {
            curves,
            labels: None,
            ids: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.curves.len() {
            return Err(Error::InvalidCurves(format!(
                "{} labels for {} curves",
                labels.len(),
                self.curves.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.curves.len() {
            return Err(Error::InvalidCurves(format!(
                "{} ids for {} curves",
                ids.len(),
                self.curves.len()
            )));
        }
        self.ids = Some(ids);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.curves.len()
    }

    pub fn curves(&self) -> &[Curve<T>] {
        &self.curves
    }

    pub fn curve(&self, i: usize) -> &Curve<T> {
        &self.curves[i]
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    /// Smallest and largest observation time over all curves.
    pub fn time_range(&self) -> (T, T) {
        let mut lo = self.curves[0].times[0];
        let mut hi = lo;
        for c in &self.curves {
            lo = lo.min(c.times[0]);
            hi = hi.max(*c.times.last().unwrap());
        }
        (lo, hi)
    }
}

/// Which basis system a [`BasisSpec`] describes.
#[derive(Debug, Clone, PartialEq)]
pub enum BasisKind<T: Scalar> {
    /// Constant plus sine/cosine harmonic pairs, orthonormal over one period.
    Fourier { period: T },
    /// Clamped B-splines of the given order over interior knots.
    BSpline { order: usize, interior_knots: Vec<T> },
}

/// A validated basis definition: kind, number of functions `p` and domain.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec<T: Scalar> {
    kind: BasisKind<T>,
    p: usize,
    t_min: T,
    t_max: T,
}

impl<T: Scalar> BasisSpec<T> {
    /// Fourier basis with period equal to the domain length.
    ///
    /// Uses the convention psi_1 = 1/sqrt(T), psi_2r = sqrt(2/T) sin(2 pi r t / T),
    /// psi_{2r+1} = sqrt(2/T) cos(2 pi r t / T), so the system is orthonormal
    /// and the Gram matrix is the identity.
    pub fn fourier(p: usize, t_min: T, t_max: T) -> Result<Self> {
        if t_max <= t_min {
            return Err(Error::InvalidBasis("domain must satisfy t_min < t_max".into()));
        }
        Self::fourier_with_period(p, t_min, t_max, t_max - t_min)
    }

    /// Fourier basis with an explicit period (e.g. one week for daily data
    /// observed over a month).
    pub fn fourier_with_period(p: usize, t_min: T, t_max: T, period: T) -> Result<Self> {
        if t_max <= t_min {
            return Err(Error::InvalidBasis("domain must satisfy t_min < t_max".into()));
        }
        if p == 0 || p % 2 == 0 {
            return Err(Error::InvalidBasis(format!(
                "fourier basis needs odd p (constant + harmonic pairs), got p={p}"
            )));
        }
        if period <= T::zero() {
            return Err(Error::InvalidBasis("fourier period must be positive".into()));
        }
        Ok(Self {
            kind: BasisKind::Fourier { period },
            p,
            t_min,
            t_max,
        })
    }

    /// Clamped B-spline basis from explicit interior knots; the number of
    /// basis functions is `interior_knots.len() + order`.
    pub fn bspline(order: usize, t_min: T, t_max: T, interior_knots: Vec<T>) -> Result<Self> {
        if t_max <= t_min {
            return Err(Error::InvalidBasis("domain must satisfy t_min < t_max".into()));
        }
        if order == 0 {
            return Err(Error::InvalidBasis("spline order must be at least 1".into()));
        }
        for w in interior_knots.windows(2) {
            if w[1] < w[0] {
                return Err(Error::InvalidBasis("knots must be non-decreasing".into()));
            }
        }
        if interior_knots
            .iter()
            .any(|&k| k <= t_min || k >= t_max)
        {
            return Err(Error::InvalidBasis(
                "interior knots must lie strictly inside the domain".into(),
            ));
        }
        let p = interior_knots.len() + order;
        Ok(Self {
            kind: BasisKind::BSpline {
                order,
                interior_knots,
            },
            p,
            t_min,
            t_max,
        })
    }

    /// B-spline basis with `p - order` uniformly spaced interior knots.
    pub fn bspline_uniform(order: usize, t_min: T, t_max: T, p: usize) -> Result<Self> {
        if p < order {
            return Err(Error::InvalidBasis(format!(
                "bspline needs p >= order, got p={p} order={order}"
            )));
        }
        let n_interior = p - order;
        let range = t_max - t_min;
        let step = range / cast::<T>((n_interior + 1) as f64);
        let knots = (1..=n_interior)
            .map(|i| t_min + step * cast::<T>(i as f64))
            .collect();
        Self::bspline(order, t_min, t_max, knots)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn kind(&self) -> &BasisKind<T> {
        &self.kind
    }

    pub fn domain(&self) -> (T, T) {
        (self.t_min, self.t_max)
    }

    fn check_in_domain(&self, times: &[T]) -> Result<()> {
        for &t in times {
            if t < self.t_min || t > self.t_max {
                return Err(Error::TimeOutsideDomain {
                    time: t.to_f64().unwrap_or(f64::NAN),
                    t_min: self.t_min.to_f64().unwrap_or(f64::NAN),
                    t_max: self.t_max.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(())
    }

    /// Evaluates every basis function at the given times; column `j` holds
    /// psi_j. Times outside the domain are an error, never clamped.
    pub fn eval(&self, times: &[T]) -> Result<DMatrix<T>> {
        self.check_in_domain(times)?;
        let m = times.len();
        let mut out = DMatrix::<T>::zeros(m, self.p);
        match &self.kind {
            BasisKind::Fourier { period } => {
                let two_pi = cast::<T>(2.0) * T::pi();
                let inv_sqrt_period = T::one() / period.sqrt();
                let amp = (cast::<T>(2.0) / *period).sqrt();
                for (s, &t) in times.iter().enumerate() {
                    let x = two_pi * (t - self.t_min) / *period;
                    out[(s, 0)] = inv_sqrt_period;
                    let mut col = 1;
                    let mut r = 1usize;
                    while col < self.p {
                        let arg = x * cast::<T>(r as f64);
                        out[(s, col)] = amp * arg.sin();
                        if col + 1 < self.p {
                            out[(s, col + 1)] = amp * arg.cos();
                        }
                        col += 2;
                        r += 1;
                    }
                }
            }
            BasisKind::BSpline {
                order,
                interior_knots,
            } => {
                let knots = self.clamped_knots(*order, interior_knots);
                let mut row = vec![T::zero(); self.p];
                for (s, &t) in times.iter().enumerate() {
                    bspline_row(t, &knots, *order, &mut row);
                    for j in 0..self.p {
                        out[(s, j)] = row[j];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Gram matrix W = integral of Psi(s) Psi'(s) ds over the domain.
    ///
    /// The Fourier convention makes W the identity exactly; B-spline Gram
    /// matrices are computed by Gauss-Legendre quadrature with `2 * order`
    /// nodes per knot span, which is exact for the piecewise-polynomial
    /// integrand.
    pub fn gram_matrix(&self) -> DMatrix<T> {
        match &self.kind {
            BasisKind::Fourier { .. } => DMatrix::identity(self.p, self.p),
            BasisKind::BSpline { order, .. } => self.bspline_gram(2 * order),
        }
    }

    /// B-spline Gram matrix with an explicit node count per span (exposed so
    /// tests can run a denser quadrature as an oracle).
    pub fn bspline_gram(&self, nodes_per_span: usize) -> DMatrix<T> {
        let (order, interior_knots) = match &self.kind {
            BasisKind::BSpline {
                order,
                interior_knots,
            } => (*order, interior_knots),
            BasisKind::Fourier { .. } => return DMatrix::identity(self.p, self.p),
        };
        let mut breaks = vec![self.t_min];
        for &k in interior_knots {
            if k > *breaks.last().unwrap() {
                breaks.push(k);
            }
        }
        if *breaks.last().unwrap() < self.t_max {
            breaks.push(self.t_max);
        }
        let (nodes, weights) = gauss_legendre::<T>(nodes_per_span.max(1));
        let knots = self.clamped_knots(order, interior_knots);
        let mut w = DMatrix::<T>::zeros(self.p, self.p);
        let half = cast::<T>(0.5);
        let mut row = vec![T::zero(); self.p];
        for span in breaks.windows(2) {
            let (a, b) = (span[0], span[1]);
            let mid = (a + b) * half;
            let scale = (b - a) * half;
            for (&x, &wt) in nodes.iter().zip(weights.iter()) {
                let t = mid + scale * x;
                bspline_row(t, &knots, order, &mut row);
                let wq = wt * scale;
                for i in 0..self.p {
                    if row[i] == T::zero() {
                        continue;
                    }
                    let ri = row[i] * wq;
                    for j in 0..self.p {
                        w[(i, j)] += ri * row[j];
                    }
                }
            }
        }
        // exact symmetry: average the two triangles
        for i in 0..self.p {
            for j in 0..i {
                let avg = (w[(i, j)] + w[(j, i)]) * half;
                w[(i, j)] = avg;
                w[(j, i)] = avg;
            }
        }
        w
    }

    fn clamped_knots(&self, order: usize, interior: &[T]) -> Vec<T> {
        let mut knots = Vec::with_capacity(interior.len() + 2 * order);
        for _ in 0..order {
            knots.push(self.t_min);
        }
        knots.extend_from_slice(interior);
        for _ in 0..order {
            knots.push(self.t_max);
        }
        knots
    }
}

/// Evaluates all B-spline basis functions at `t` by the Cox-de Boor
/// recursion over a clamped knot vector. `row` must have length
/// `knots.len() - order`.
fn bspline_row<T: Scalar>(t: T, knots: &[T], order: usize, row: &mut [T]) {
    let n_funcs = knots.len() - order;
    let t_max = *knots.last().unwrap();
    let mut b = vec![T::zero(); knots.len() - 1];
    for j in 0..(knots.len() - 1) {
        let closes_domain = knots[j] < knots[j + 1] && knots[j + 1] == t_max;
        let inside = if closes_domain {
            t >= knots[j] && t <= knots[j + 1]
        } else {
            t >= knots[j] && t < knots[j + 1]
        };
        b[j] = if inside { T::one() } else { T::zero() };
        if inside {
            // only one indicator fires
            for cell in b.iter_mut().take(j) {
                *cell = T::zero();
            }
            break;
        }
    }
    for k in 2..=order {
        for j in 0..(knots.len() - k) {
            let d1 = knots[j + k - 1] - knots[j];
            let d2 = knots[j + k] - knots[j + 1];
            let left = if d1 > T::zero() {
                (t - knots[j]) / d1 * b[j]
            } else {
                T::zero()
            };
            let right = if d2 > T::zero() {
                (knots[j + k] - t) / d2 * b[j + 1]
            } else {
                T::zero()
            };
            b[j] = left + right;
        }
    }
    row[..n_funcs].copy_from_slice(&b[..n_funcs]);
}

/// Gauss-Legendre nodes and weights on [-1, 1], computed by Newton iteration
/// on the Legendre recurrence.
pub fn gauss_legendre<T: Scalar>(n: usize) -> (Vec<T>, Vec<T>) {
    let mut nodes = vec![T::zero(); n];
    let mut weights = vec![T::zero(); n];
    for i in 0..n {
        // Chebyshev-like initial guess
        let theta = std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5);
        let mut x = cast::<T>(theta.cos());
        let mut dp = T::one();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= T::default_epsilon() * cast::<T>(4.0) {
                break;
            }
        }
        nodes[n - 1 - i] = x;
        let one_minus_x2 = T::one() - x * x;
        weights[n - 1 - i] = cast::<T>(2.0) / (one_minus_x2 * dp * dp);
    }
    (nodes, weights)
}

fn legendre_with_derivative<T: Scalar>(n: usize, x: T) -> (T, T) {
    let mut p0 = T::one();
    let mut p1 = x;
    if n == 0 {
        return (p0, T::zero());
    }
    for k in 2..=n {
        let kf = cast::<T>(k as f64);
        let p2 = ((cast::<T>(2.0) * kf - T::one()) * x * p1 - (kf - T::one()) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let denom = x * x - T::one();
    let d = cast::<T>(n as f64) * (x * p1 - p0) / denom;
    (p1, d)
}

/// Basis expansion coefficients of `n` curves: the n x p matrix Gamma, the
/// basis it refers to, and the column means removed when centered.
#[derive(Debug, Clone)]
pub struct CoefficientMatrix<T: Scalar> {
    gamma: DMatrix<T>,
    basis: BasisSpec<T>,
    mean_coeffs: DVector<T>,
    centered: bool,
}

impl<T: Scalar> CoefficientMatrix<T> {
    /// Wraps an existing coefficient matrix (uncentered).
    pub fn from_gamma(gamma: DMatrix<T>, basis: BasisSpec<T>) -> Result<Self> {
        if gamma.ncols() != basis.p() {
            return Err(Error::InvalidArgument(format!(
                "gamma has {} columns but the basis has p={}",
                gamma.ncols(),
                basis.p()
            )));
        }
        if gamma.nrows() == 0 {
            return Err(Error::InvalidArgument("gamma has no rows".into()));
        }
        let p = basis.p();
        Ok(Self {
            gamma,
            basis,
            mean_coeffs: DVector::zeros(p),
            centered: false,
        })
    }

    /// Subtracts the column means and records them so reconstruction can
    /// restore the overall mean curve.
    pub fn center(mut self) -> Self {
        if self.centered {
            return self;
        }
        let n = self.gamma.nrows();
        let inv_n = T::one() / cast::<T>(n as f64);
        let mut means = DVector::<T>::zeros(self.gamma.ncols());
        for j in 0..self.gamma.ncols() {
            let mut s = T::zero();
            for i in 0..n {
                s += self.gamma[(i, j)];
            }
            means[j] = s * inv_n;
        }
        for j in 0..self.gamma.ncols() {
            for i in 0..n {
                self.gamma[(i, j)] -= means[j];
            }
        }
        self.mean_coeffs = means;
        self.centered = true;
        self
    }

    pub fn gamma(&self) -> &DMatrix<T> {
        &self.gamma
    }

    pub fn basis(&self) -> &BasisSpec<T> {
        &self.basis
    }

    pub fn mean_coeffs(&self) -> &DVector<T> {
        &self.mean_coeffs
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn n(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn p(&self) -> usize {
        self.gamma.ncols()
    }

    /// Evaluates every curve at the given times, restoring the mean first
    /// when the coefficients are centered. Row `i` holds curve `i`.
    pub fn reconstruct(&self, times: &[T]) -> Result<DMatrix<T>> {
        let theta = self.basis.eval(times)?;
        let mut coeffs = self.gamma.clone();
        if self.centered {
            for j in 0..coeffs.ncols() {
                for i in 0..coeffs.nrows() {
                    coeffs[(i, j)] += self.mean_coeffs[j];
                }
            }
        }
        Ok(coeffs * theta.transpose())
    }
}

/// Least-squares smoothing: projects each observed curve onto the basis by
/// ordinary least squares on its own design matrix, solved through a thin QR
/// decomposition. Curves sharing an identical time grid share one
/// factorization.
pub fn smooth_curves<T: Scalar>(
    obs: &SampledCurveSet<T>,
    basis: &BasisSpec<T>,
    center: bool,
) -> Result<CoefficientMatrix<T>> {
    let p = basis.p();
    for (i, c) in obs.curves().iter().enumerate() {
        if c.len() < p {
            return Err(Error::CurveTooShort {
                index: i,
                m: c.len(),
                p,
            });
        }
    }

    // group curves by their exact sampling grid so the QR is factored once
    let mut groups: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
    for (i, c) in obs.curves().iter().enumerate() {
        let key: Vec<u64> = c
            .times()
            .iter()
            .map(|t| t.to_f64().unwrap_or(f64::NAN).to_bits())
            .collect();
        groups.entry(key).or_default().push(i);
    }
    let mut group_list: Vec<Vec<usize>> = groups.into_values().collect();
    group_list.sort_by_key(|g| g[0]);

    let rows: Vec<Result<(usize, DVector<T>)>> = group_list
        .par_iter()
        .flat_map(|members| {
            let first = members[0];
            let times = obs.curve(first).times();
            let theta = match basis.eval(times) {
                Ok(m) => m,
                Err(e) => return members.iter().map(|_| Err(e.clone())).collect::<Vec<_>>(),
            };
            let qr = theta.clone().qr();
            let r = qr.r();
            let diag_max = (0..p).fold(T::zero(), |acc, j| acc.max(r[(j, j)].abs()));
            let tol = cast::<T>(1e-12) * diag_max.max(T::one());
            if (0..p).any(|j| r[(j, j)].abs() <= tol) {
                return members
                    .iter()
                    .map(|&i| Err(Error::RankDeficientCurve { index: i }))
                    .collect::<Vec<_>>();
            }
            let q = qr.q();
            members
                .iter()
                .map(|&i| {
                    let y = DVector::from_column_slice(obs.curve(i).values());
                    let qty = q.tr_mul(&y);
                    match r.solve_upper_triangular(&qty) {
                        Some(coef) => Ok((i, coef)),
                        None => Err(Error::RankDeficientCurve { index: i }),
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let n = obs.n();
    let mut gamma = DMatrix::<T>::zeros(n, p);
    for row in rows {
        let (i, coef) = row?;
        for j in 0..p {
            gamma[(i, j)] = coef[j];
        }
    }

    let cm = CoefficientMatrix::from_gamma(gamma, basis.clone())?;
    Ok(if center { cm.center() } else { cm })
}
