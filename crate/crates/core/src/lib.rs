//! Functional-data clustering in a discriminative subspace.
//!
//! Curves observed at discrete times are smoothed onto a Fourier or B-spline
//! basis; the coefficient vectors are modeled by a family of 12 parsimonious
//! Gaussian mixtures whose cluster structure lives in a low-dimensional
//! discriminative subspace estimated by a Fisher-type generalized
//! eigenproblem. The alternating inference loop, model selection by AIC/BIC
//! or the slope heuristic, sparse basis selection and simulation benchmarks
//! live in the modules below.
//!
//! All numerics are generic over the scalar type through [`scalar::Scalar`];
//! the aliases at the crate root pin the default `f64` instantiation.

pub mod assignment;
pub mod basis;
pub mod error;
pub mod fem;
pub mod model;
pub mod scalar;
pub mod selection;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar type of the concrete aliases below.
pub type Real = f64;

pub type BasisSpec = basis::BasisSpec<Real>;
pub type Curve = basis::Curve<Real>;
pub type SampledCurveSet = basis::SampledCurveSet<Real>;
pub type CoefficientMatrix = basis::CoefficientMatrix<Real>;

pub type DfmParams = model::DfmParams<Real>;
pub use model::{BetaStructure, DfmModelSpec, SigmaStructure};

pub type PosteriorMatrix = fem::PosteriorMatrix<Real>;
pub type DiscriminativeSubspace = fem::DiscriminativeSubspace<Real>;
pub type FittedModel = fem::FittedModel<Real>;
pub use fem::{FitOptions, InitStrategy};

pub type SelectionResult = selection::SelectionResult<Real>;
pub use selection::{Criterion, GridOptions};

pub use sim::{Scenario, ScenarioAVariant};
