//! Versioned JSON schema for fitted models. Matrices are stored row-major
//! with explicit dimensions so any consumer can rebuild them without
//! guessing the layout.

use serde::{Deserialize, Serialize};

use funfem_core::basis::BasisKind;
use funfem_core::{BasisSpec, CoefficientMatrix, FittedModel};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries, length rows * cols.
    pub data: Vec<f64>,
}

impl MatrixJson {
    pub fn from_dmatrix(m: &nalgebra::DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(m[(i, j)]);
            }
        }
        Self { rows, cols, data }
    }

    pub fn to_dmatrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.rows, self.cols, |i, j| self.data[i * self.cols + j])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BasisJson {
    pub kind: String,
    pub p: usize,
    pub t_min: f64,
    pub t_max: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interior_knots: Option<Vec<f64>>,
}

impl BasisJson {
    pub fn from_spec(spec: &BasisSpec) -> Self {
        let (t_min, t_max) = spec.domain();
        match spec.kind() {
            BasisKind::Fourier { period } => Self {
                kind: "fourier".into(),
                p: spec.p(),
                t_min,
                t_max,
                period: Some(*period),
                order: None,
                interior_knots: None,
            },
            BasisKind::BSpline {
                order,
                interior_knots,
            } => Self {
                kind: "bspline".into(),
                p: spec.p(),
                t_min,
                t_max,
                period: None,
                order: Some(*order),
                interior_knots: Some(interior_knots.clone()),
            },
        }
    }

    pub fn to_spec(&self) -> Result<BasisSpec, funfem_core::Error> {
        match self.kind.as_str() {
            "fourier" => BasisSpec::fourier_with_period(
                self.p,
                self.t_min,
                self.t_max,
                self.period.unwrap_or(self.t_max - self.t_min),
            ),
            "bspline" => BasisSpec::bspline(
                self.order.unwrap_or(4),
                self.t_min,
                self.t_max,
                self.interior_knots.clone().unwrap_or_default(),
            ),
            other => Err(funfem_core::Error::InvalidBasis(format!(
                "unknown basis kind {other:?}"
            ))),
        }
    }
}

/// The `model.json` document.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelJson {
    pub schema_version: u32,
    pub model: String,
    pub k: usize,
    pub d: usize,
    pub p: usize,
    pub n: usize,
    pub converged: bool,
    pub n_iter: usize,
    pub loglik_trace: Vec<f64>,
    pub pi: Vec<f64>,
    /// K x d latent means.
    pub mu: MatrixJson,
    pub sigma_common: bool,
    /// One d x d block per cluster (repeated when common).
    pub sigmas: Vec<MatrixJson>,
    pub beta_common: bool,
    pub betas: Vec<f64>,
    /// Orthonormal orientation used by the density (p x d).
    pub u: MatrixJson,
    /// Discriminative loadings as returned by the F-step (p x d).
    pub loadings: MatrixJson,
    pub eigenvalues: Vec<f64>,
    pub sparse: bool,
    pub lambda: f64,
    /// n x K responsibilities.
    pub posteriors: MatrixJson,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ids: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cities: Option<Vec<String>>,
    pub basis: BasisJson,
    pub mean_coeffs: Vec<f64>,
    pub centered: bool,
}

impl ModelJson {
    pub fn new(
        fitted: &FittedModel,
        coeffs: &CoefficientMatrix,
        ids: Option<&[String]>,
        cities: Option<&[String]>,
    ) -> Self {
        let params = &fitted.params;
        let k = params.k;
        let d = params.d;
        let mut mu = nalgebra::DMatrix::<f64>::zeros(k, d);
        for kk in 0..k {
            for j in 0..d {
                mu[(kk, j)] = params.mu[kk][j];
            }
        }
        Self {
            schema_version: SCHEMA_VERSION,
            model: fitted.model.name(),
            k,
            d,
            p: params.p,
            n: coeffs.n(),
            converged: fitted.converged,
            n_iter: fitted.n_iter,
            loglik_trace: fitted.loglik_trace.clone(),
            pi: (0..k).map(|kk| params.pi[kk]).collect(),
            mu: MatrixJson::from_dmatrix(&mu),
            sigma_common: params.sigma.is_common(),
            sigmas: (0..k)
                .map(|kk| MatrixJson::from_dmatrix(params.sigma.get(kk)))
                .collect(),
            beta_common: params.beta.is_common(),
            betas: (0..k).map(|kk| params.beta.get(kk)).collect(),
            u: MatrixJson::from_dmatrix(&params.u),
            loadings: MatrixJson::from_dmatrix(&fitted.subspace.u),
            eigenvalues: fitted.subspace.eigenvalues.iter().copied().collect(),
            sparse: fitted.subspace.sparse,
            lambda: fitted.subspace.lambda,
            posteriors: MatrixJson::from_dmatrix(fitted.posteriors.matrix()),
            ids: ids.map(|v| v.to_vec()),
            cities: cities.map(|v| v.to_vec()),
            basis: BasisJson::from_spec(coeffs.basis()),
            mean_coeffs: coeffs.mean_coeffs().iter().copied().collect(),
            centered: coeffs.is_centered(),
        }
    }

    pub fn to_json_string(&self) -> Result<String, serde_json::Error> {
        serde_json::to_string_pretty(self)
    }
}

/// One scored grid cell in `selection.json`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SelectionCellJson {
    pub model: String,
    pub k: usize,
    pub xi: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loglik: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SlopeJson {
    pub slope: f64,
    pub intercept: f64,
    pub linear_start: usize,
    pub n_points: usize,
    pub median_abs_residual: f64,
}

/// The `selection.json` document: the scored grid plus the best cell per
/// criterion and the slope diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SelectionJson {
    pub schema_version: u32,
    pub n: usize,
    pub cells: Vec<SelectionCellJson>,
    pub best: std::collections::BTreeMap<String, (String, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope: Option<SlopeJson>,
}

impl SelectionJson {
    pub fn new(result: &funfem_core::SelectionResult) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            n: result.n,
            cells: result
                .cells
                .iter()
                .map(|c| SelectionCellJson {
                    model: c.model.name(),
                    k: c.k,
                    xi: c.xi,
                    loglik: c.loglik,
                    aic: c.aic,
                    bic: c.bic,
                    shc: c.shc,
                    failure: c.failure.clone(),
                })
                .collect(),
            best: result
                .best
                .iter()
                .map(|(criterion, (model, k))| {
                    (criterion.name().to_string(), (model.name(), *k))
                })
                .collect(),
            slope: result.slope.as_ref().map(|s| SlopeJson {
                slope: s.slope,
                intercept: s.intercept,
                linear_start: s.linear_start,
                n_points: s.n_points,
                median_abs_residual: s.median_abs_residual,
            }),
        }
    }
}
