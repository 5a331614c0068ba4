//! Model selection: AIC, BIC and the slope-heuristic criterion, plus the
//! (model, K) grid search over FunFEM fits.

use nalgebra::DMatrix;
use rayon::prelude::*;
use std::collections::BTreeMap;

use crate::basis::CoefficientMatrix;
use crate::error::{Error, Result};
use crate::fem::{fit, FitOptions, FittedModel};
use crate::model::DfmModelSpec;
use crate::scalar::{cast, Scalar};

/// A penalized-likelihood criterion, all in "larger is better" form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Criterion {
    Aic,
    Bic,
    Shc,
}

impl Criterion {
    pub fn name(&self) -> &'static str {
        match self {
            Criterion::Aic => "aic",
            Criterion::Bic => "bic",
            Criterion::Shc => "shc",
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(Criterion::Aic),
            "bic" => Ok(Criterion::Bic),
            "shc" => Ok(Criterion::Shc),
            other => Err(Error::InvalidArgument(format!(
                "unknown criterion {other:?} (expected aic, bic or shc)"
            ))),
        }
    }
}

/// AIC(M) = loglik - xi.
pub fn aic<T: Scalar>(loglik: T, xi: usize) -> T {
    loglik - cast::<T>(xi as f64)
}

/// BIC(M) = loglik - xi/2 * log(n).
pub fn bic<T: Scalar>(loglik: T, xi: usize, n: usize) -> T {
    loglik - cast::<T>(xi as f64) / cast::<T>(2.0) * cast::<T>(n as f64).ln()
}

/// One scored criterion value for a grid cell.
#[derive(Debug, Clone)]
pub struct CriterionScore<T: Scalar> {
    pub criterion: Criterion,
    pub value: T,
    pub xi: usize,
    pub loglik: T,
    /// Estimated slope, present only for SHC.
    pub slope: Option<T>,
}

impl<T: Scalar> CriterionScore<T> {
    pub fn aic(loglik: T, xi: usize) -> Self {
        Self {
            criterion: Criterion::Aic,
            value: aic(loglik, xi),
            xi,
            loglik,
            slope: None,
        }
    }

    pub fn bic(loglik: T, xi: usize, n: usize) -> Self {
        Self {
            criterion: Criterion::Bic,
            value: bic(loglik, xi, n),
            xi,
            loglik,
            slope: None,
        }
    }

    pub fn shc(loglik: T, xi: usize, slope: T) -> Self {
        Self {
            criterion: Criterion::Shc,
            value: loglik - cast::<T>(2.0) * slope * cast::<T>(xi as f64),
            xi,
            loglik,
            slope: Some(slope),
        }
    }
}

/// Diagnostics of the slope-heuristic fit: the detected linear part and the
/// robust line fitted to it.
#[derive(Debug, Clone)]
pub struct SlopeFit<T: Scalar> {
    pub slope: T,
    pub intercept: T,
    /// Index (into the xi-sorted grid) where the linear part starts.
    pub linear_start: usize,
    pub n_points: usize,
    pub median_abs_residual: T,
}

/// Slope-heuristic calibration.
///
/// Sorts the grid by parameter count, fits a least-absolute-deviations line
/// to every sufficiently long suffix (the candidate "linear parts"), keeps
/// the suffix with the smallest median absolute residual, and scores
/// SHC = loglik - 2 * slope * xi for every point, returned in input order.
pub fn slope_heuristic<T: Scalar>(grid: &[(usize, T)]) -> Result<(Vec<T>, SlopeFit<T>)> {
    let distinct: std::collections::BTreeSet<usize> = grid.iter().map(|(xi, _)| *xi).collect();
    if distinct.len() < 4 {
        return Err(Error::InvalidGrid(format!(
            "slope heuristic needs at least 4 distinct xi values, got {}",
            distinct.len()
        )));
    }

    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by_key(|&i| grid[i].0);
    let sorted: Vec<(T, T)> = order
        .iter()
        .map(|&i| (cast::<T>(grid[i].0 as f64), grid[i].1))
        .collect();

    let len = sorted.len();
    let min_len = 4.max((0.4 * len as f64).ceil() as usize);
    let mut best: Option<SlopeFit<T>> = None;
    for start in 0..=(len - min_len) {
        let window = &sorted[start..];
        let (slope, intercept) = lad_line(window);
        let mut residuals: Vec<T> = window
            .iter()
            .map(|&(x, y)| (y - (intercept + slope * x)).abs())
            .collect();
        residuals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = residuals[residuals.len() / 2];
        // strictly smaller wins, so the longest suffix takes ties
        let better = best.as_ref().map_or(true, |b| median < b.median_abs_residual);
        if better {
            best = Some(SlopeFit {
                slope,
                intercept,
                linear_start: start,
                n_points: window.len(),
                median_abs_residual: median,
            });
        }
    }
    let fit = best.expect("at least one suffix");
    let two = cast::<T>(2.0);
    let scores = grid
        .iter()
        .map(|&(xi, ll)| ll - two * fit.slope * cast::<T>(xi as f64))
        .collect();
    Ok((scores, fit))
}

/// Least-absolute-deviations line by iteratively reweighted least squares.
fn lad_line<T: Scalar>(points: &[(T, T)]) -> (T, T) {
    let n = points.len();
    let mut weights = vec![T::one(); n];
    let mut slope = T::zero();
    let mut intercept = T::zero();
    let scale: T = points.iter().map(|&(_, y)| y.abs()).sum::<T>() / cast::<T>(n as f64);
    let delta = (scale.max(T::one())) * cast::<T>(1e-9);
    for _ in 0..50 {
        // weighted least squares in closed form
        let sw: T = weights.iter().copied().sum();
        let mut sx = T::zero();
        let mut sy = T::zero();
        for (w, &(x, y)) in weights.iter().zip(points) {
            sx += *w * x;
            sy += *w * y;
        }
        let xbar = sx / sw;
        let ybar = sy / sw;
        let mut sxx = T::zero();
        let mut sxy = T::zero();
        for (w, &(x, y)) in weights.iter().zip(points) {
            let dx = x - xbar;
            sxx += *w * dx * dx;
            sxy += *w * dx * (y - ybar);
        }
        if sxx <= T::zero() {
            break;
        }
        slope = sxy / sxx;
        intercept = ybar - slope * xbar;
        for (w, &(x, y)) in weights.iter_mut().zip(points) {
            let r = (y - (intercept + slope * x)).abs();
            *w = T::one() / r.max(delta);
        }
    }
    (slope, intercept)
}

/// One cell of the (model, K) grid.
#[derive(Debug, Clone)]
pub struct GridCell<T: Scalar> {
    pub model: DfmModelSpec,
    pub k: usize,
    pub xi: usize,
    pub fitted: Option<FittedModel<T>>,
    pub loglik: Option<T>,
    pub aic: Option<T>,
    pub bic: Option<T>,
    pub shc: Option<T>,
    pub failure: Option<String>,
}

impl<T: Scalar> GridCell<T> {
    pub fn score(&self, criterion: Criterion) -> Option<T> {
        match criterion {
            Criterion::Aic => self.aic,
            Criterion::Bic => self.bic,
            Criterion::Shc => self.shc,
        }
    }
}

/// Result of a grid search: all cells (sorted by model name, then K), the
/// best cell per criterion and the slope diagnostics.
#[derive(Debug, Clone)]
pub struct SelectionResult<T: Scalar> {
    pub cells: Vec<GridCell<T>>,
    pub best: BTreeMap<Criterion, (DfmModelSpec, usize)>,
    pub slope: Option<SlopeFit<T>>,
    pub n: usize,
}

impl<T: Scalar> SelectionResult<T> {
    pub fn best_cell(&self, criterion: Criterion) -> Option<&GridCell<T>> {
        let (model, k) = self.best.get(&criterion)?;
        self.cells
            .iter()
            .find(|c| c.model == *model && c.k == *k)
    }
}

/// Options for the grid search.
#[derive(Debug, Clone)]
pub struct GridOptions {
    pub fit: FitOptions,
    /// Worker threads for the cell map; 0 means one thread per core.
    pub threads: usize,
    /// Count means and proportions in xi, not only variance parameters.
    pub xi_includes_means: bool,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            threads: 0,
            xi_includes_means: true,
        }
    }
}

/// Fits every (model, K) combination, scores AIC/BIC/SHC and reports the
/// best configuration per criterion. All cells share the same fit seed so
/// criterion differences reflect the models rather than initialization luck;
/// failed cells are recorded and excluded from the argmax.
pub fn grid_search<T: Scalar>(
    coeffs: &CoefficientMatrix<T>,
    w_gram: &DMatrix<T>,
    models: &[DfmModelSpec],
    k_range: std::ops::RangeInclusive<usize>,
    opts: &GridOptions,
) -> Result<SelectionResult<T>> {
    if models.is_empty() || k_range.is_empty() {
        return Err(Error::InvalidGrid("empty model or K grid".into()));
    }
    let n = coeffs.n();
    let p = coeffs.p();

    // deterministic aggregation order: model name, then K
    let mut specs: Vec<(DfmModelSpec, usize)> = Vec::new();
    let mut sorted_models = models.to_vec();
    sorted_models.sort_by_key(|m| m.name());
    sorted_models.dedup();
    for model in &sorted_models {
        for k in k_range.clone() {
            specs.push((*model, k));
        }
    }

    let run_cell = |&(model, k): &(DfmModelSpec, usize)| -> GridCell<T> {
        let d = opts.fit.d_override.unwrap_or(k.saturating_sub(1));
        let xi = if opts.xi_includes_means {
            model.total_param_count_with_d(k, p, d)
        } else {
            model.variance_param_count(k, p, d)
        };
        match fit(coeffs, w_gram, k, model, &opts.fit) {
            Ok(fitted) => {
                let ll = fitted.loglik();
                GridCell {
                    model,
                    k,
                    xi,
                    loglik: Some(ll),
                    aic: Some(CriterionScore::aic(ll, xi).value),
                    bic: Some(CriterionScore::bic(ll, xi, n).value),
                    shc: None,
                    fitted: Some(fitted),
                    failure: None,
                }
            }
            Err(e) => GridCell {
                model,
                k,
                xi,
                fitted: None,
                loglik: None,
                aic: None,
                bic: None,
                shc: None,
                failure: Some(e.to_string()),
            },
        }
    };

    let mut cells: Vec<GridCell<T>> = if opts.threads == 1 {
        specs.iter().map(run_cell).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| specs.par_iter().map(run_cell).collect())
    };

    if cells.iter().all(|c| c.failure.is_some()) {
        return Err(Error::InvalidGrid(format!(
            "every grid cell failed; first failure: {}",
            cells[0].failure.clone().unwrap_or_default()
        )));
    }

    // SHC over the successful cells, when enough of them exist
    let ok_points: Vec<(usize, T)> = cells
        .iter()
        .filter_map(|c| c.loglik.map(|ll| (c.xi, ll)))
        .collect();
    let slope = match slope_heuristic(&ok_points) {
        Ok((_, fit)) => {
            for cell in cells.iter_mut() {
                if let Some(ll) = cell.loglik {
                    cell.shc = Some(CriterionScore::shc(ll, cell.xi, fit.slope).value);
                }
            }
            Some(fit)
        }
        Err(_) => None,
    };

    let mut best = BTreeMap::new();
    for criterion in [Criterion::Aic, Criterion::Bic, Criterion::Shc] {
        let mut arg: Option<(&GridCell<T>, T)> = None;
        for cell in &cells {
            if let Some(score) = cell.score(criterion) {
                if arg.as_ref().map_or(true, |(_, s)| score > *s) {
                    arg = Some((cell, score));
                }
            }
        }
        if let Some((cell, _)) = arg {
            best.insert(criterion, (cell.model, cell.k));
        }
    }

    Ok(SelectionResult {
        cells,
        best,
        slope,
        n,
    })
}
