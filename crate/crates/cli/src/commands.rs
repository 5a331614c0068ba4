//! The four subcommands: fit, select, sparse and simulate.

use funfem_core::basis::smooth_curves;
use funfem_core::fem::{fit, project, sparse_f_step};
use funfem_core::selection::grid_search;
use funfem_core::sim::{run_selection_experiment, ExperimentOptions, ExperimentTable};
use funfem_core::{
    BasisSpec, CoefficientMatrix, Criterion, DfmModelSpec, FitOptions, FittedModel, GridOptions,
    InitStrategy, Scenario, ScenarioAVariant, SelectionResult,
};

use crate::args::{BasisArgs, FitArgs, SelectArgs, SimulateArgs, SparseArgs, TuningArgs};
use crate::ingest::{load_long_csv, InputFormat, LoadedCurves};
use crate::outputs;
use crate::schema::ModelJson;
use crate::CliError;

/// Worker threads from the environment; 0 lets the pool size itself.
pub fn env_threads() -> Result<usize, CliError> {
    match std::env::var("FUNFEM_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Config(format!("FUNFEM_THREADS must be an integer, got {v:?}"))),
        Err(_) => Ok(0),
    }
}

fn parse_model(name: &str) -> Result<DfmModelSpec, CliError> {
    name.parse::<DfmModelSpec>()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn parse_models(names: &[String]) -> Result<Vec<DfmModelSpec>, CliError> {
    if names.is_empty() {
        return Ok(DfmModelSpec::all());
    }
    names.iter().map(|n| parse_model(n)).collect()
}

fn parse_criterion(name: &str) -> Result<Criterion, CliError> {
    name.parse::<Criterion>()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn fit_options(tuning: &TuningArgs) -> Result<FitOptions, CliError> {
    let init = match tuning.init.to_ascii_lowercase().as_str() {
        "kmeans" => InitStrategy::KMeans,
        "random" | "random_posterior" => InitStrategy::RandomPosterior,
        "hclust" => InitStrategy::Hclust,
        other => {
            return Err(CliError::Config(format!(
                "unknown init strategy {other:?} (expected kmeans, random or hclust)"
            )))
        }
    };
    if tuning.restarts == 0 || tuning.max_iter == 0 {
        return Err(CliError::Config(
            "restarts and max-iter must be positive".into(),
        ));
    }
    if !tuning.tol.is_finite() || tuning.tol <= 0.0 {
        return Err(CliError::Config("tol must be positive".into()));
    }
    Ok(FitOptions {
        max_iter: tuning.max_iter,
        tol: tuning.tol,
        init,
        seed: tuning.seed,
        n_restarts: tuning.restarts,
        d_override: None,
    })
}

fn build_basis(
    args: &BasisArgs,
    format: InputFormat,
    t_min: f64,
    t_max: f64,
) -> Result<BasisSpec, CliError> {
    let spec = match args.basis.to_ascii_lowercase().as_str() {
        "fourier" => {
            let period = args.period_hours.unwrap_or(match format {
                InputFormat::Bss => 168.0,
                InputFormat::Generic => t_max - t_min,
            });
            BasisSpec::fourier_with_period(args.p, t_min, t_max, period)
        }
        "bspline" => BasisSpec::bspline_uniform(args.spline_order, t_min, t_max, args.p),
        other => {
            return Err(CliError::Config(format!(
                "unknown basis {other:?} (expected fourier or bspline)"
            )))
        }
    };
    spec.map_err(|e| CliError::Config(e.to_string()))
}

struct Prepared {
    coeffs: CoefficientMatrix,
    w: nalgebra::DMatrix<f64>,
    ids: Vec<String>,
    cities: Option<Vec<String>>,
}

fn prepare(
    data: &crate::args::DataArgs,
    basis_args: &BasisArgs,
) -> Result<Prepared, CliError> {
    let format: InputFormat = data.format.parse()?;
    let LoadedCurves { set, cities } = load_long_csv(&data.input, format)?;
    let (t_min, t_max) = set.time_range();
    let basis = build_basis(basis_args, format, t_min, t_max)?;
    let coeffs = smooth_curves(&set, &basis, true).map_err(CliError::from_compute)?;
    let w = basis.gram_matrix();
    let ids = outputs::resolve_ids(set.ids(), set.n());
    Ok(Prepared {
        coeffs,
        w,
        ids,
        cities,
    })
}

/// Writes the full artifact set for one fitted model.
fn write_model_artifacts(
    out: &mut outputs::OutputSet,
    prepared: &Prepared,
    fitted: &FittedModel,
    grid_points: usize,
) -> Result<(), CliError> {
    let model_json = ModelJson::new(
        fitted,
        &prepared.coeffs,
        Some(&prepared.ids),
        prepared.cities.as_deref(),
    );
    let times = outputs::default_grid(&model_json, grid_points.max(2));
    let proj = project(&prepared.coeffs, &fitted.subspace, &prepared.w)
        .map_err(CliError::from_compute)?;

    out.write("assignments.csv", &outputs::assignments_csv(&prepared.ids, fitted))?;
    out.write("posteriors.csv", &outputs::posteriors_csv(&prepared.ids, fitted))?;
    out.write("means.csv", &outputs::means_csv(&model_json, &times)?)?;
    out.write(
        "samples.csv",
        &outputs::samples_csv(&prepared.ids, fitted, &prepared.coeffs, &times)?,
    )?;
    out.write(
        "subspace.csv",
        &outputs::subspace_csv(&prepared.ids, prepared.cities.as_deref(), &proj),
    )?;
    out.write("loadings.csv", &outputs::loadings_csv(&model_json))?;
    let json = model_json
        .to_json_string()
        .map_err(|e| CliError::Io(format!("model.json: {e}")))?;
    out.write("model.json", &json)?;
    Ok(())
}

pub fn cmd_fit(args: &FitArgs) -> Result<(), CliError> {
    let model = parse_model(&args.model)?;
    let opts = fit_options(&args.tuning)?;
    if args.k < 2 {
        return Err(CliError::Config("need --k >= 2".into()));
    }
    let prepared = prepare(&args.data, &args.basis)?;
    let fitted =
        fit(&prepared.coeffs, &prepared.w, args.k, model, &opts).map_err(CliError::from_compute)?;
    outputs::write_all(&args.output.out_dir, |out| {
        write_model_artifacts(out, &prepared, &fitted, args.output.grid_points)
    })?;
    eprintln!(
        "fit: {} K={} loglik={:.4} converged={} iterations={}",
        model.name(),
        args.k,
        fitted.loglik(),
        fitted.converged,
        fitted.n_iter
    );
    Ok(())
}

fn write_selection_artifacts(
    out: &mut outputs::OutputSet,
    result: &SelectionResult,
    criterion: Criterion,
) -> Result<(), CliError> {
    out.write("selection.csv", &outputs::selection_csv(result))?;
    let json = crate::schema::SelectionJson::new(result);
    let text = serde_json::to_string_pretty(&json)
        .map_err(|e| CliError::Io(format!("selection.json: {e}")))?;
    out.write("selection.json", &text)?;
    out.write("loglik_curve.csv", &outputs::loglik_curve_csv(result))?;
    out.write(
        "criterion_curve.csv",
        &outputs::criterion_curve_csv(result, criterion),
    )?;
    Ok(())
}

pub fn cmd_select(args: &SelectArgs) -> Result<(), CliError> {
    let models = parse_models(&args.model)?;
    let criterion = parse_criterion(&args.criterion)?;
    if args.k_min < 2 || args.k_max < args.k_min {
        return Err(CliError::Config(
            "need 2 <= k-min <= k-max for the selection grid".into(),
        ));
    }
    let grid_opts = GridOptions {
        fit: fit_options(&args.tuning)?,
        threads: env_threads()?,
        xi_includes_means: true,
    };
    let prepared = prepare(&args.data, &args.basis)?;
    let result = grid_search(
        &prepared.coeffs,
        &prepared.w,
        &models,
        args.k_min..=args.k_max,
        &grid_opts,
    )
    .map_err(CliError::from_compute)?;

    let best_cell = result
        .best_cell(criterion)
        .ok_or_else(|| CliError::Fit(format!("no grid cell scored under {}", criterion.name())))?;
    let fitted = best_cell
        .fitted
        .clone()
        .ok_or_else(|| CliError::Fit("best cell has no fitted model".into()))?;

    outputs::write_all(&args.output.out_dir, |out| {
        write_selection_artifacts(out, &result, criterion)?;
        write_model_artifacts(out, &prepared, &fitted, args.output.grid_points)
    })?;
    eprintln!(
        "select: best by {} is {} K={}",
        criterion.name(),
        best_cell.model.name(),
        best_cell.k
    );
    Ok(())
}

pub fn cmd_sparse(args: &SparseArgs) -> Result<(), CliError> {
    let model = parse_model(&args.model)?;
    let opts = fit_options(&args.tuning)?;
    if args.k < 2 {
        return Err(CliError::Config("need --k >= 2".into()));
    }
    if args.lambda < 0.0 {
        return Err(CliError::Config("lambda must be >= 0".into()));
    }
    let prepared = prepare(&args.data, &args.basis)?;
    let dense =
        fit(&prepared.coeffs, &prepared.w, args.k, model, &opts).map_err(CliError::from_compute)?;
    let sparse = sparse_f_step(
        &prepared.coeffs,
        &prepared.w,
        &dense.posteriors,
        dense.params.d,
        args.lambda,
    )
    .map_err(CliError::from_compute)?;
    let zero_fraction = sparse.zero_fraction();
    let active = sparse.active_rows().len();
    let fitted = FittedModel {
        subspace: sparse,
        ..dense
    };
    outputs::write_all(&args.output.out_dir, |out| {
        write_model_artifacts(out, &prepared, &fitted, args.output.grid_points)
    })?;
    eprintln!(
        "sparse: lambda={} zero_fraction={:.3} active_basis_functions={}",
        args.lambda, zero_fraction, active
    );
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let models = parse_models(&args.model)?;
    let scenario = match args.scenario.to_ascii_lowercase().as_str() {
        "a" => Scenario::A,
        "b" => Scenario::B,
        other => {
            return Err(CliError::Config(format!(
                "unknown scenario {other:?} (expected a or b)"
            )))
        }
    };
    let variant = match args.variant.to_ascii_lowercase().as_str() {
        "corrected" => ScenarioAVariant::Corrected,
        "printed" => ScenarioAVariant::AsPrinted,
        other => {
            return Err(CliError::Config(format!(
                "unknown variant {other:?} (expected corrected or printed)"
            )))
        }
    };
    if args.runs == 0 {
        return Err(CliError::Config("need --runs >= 1".into()));
    }
    if args.k_min < 2 || args.k_max < args.k_min {
        return Err(CliError::Config("need 2 <= k-min <= k-max".into()));
    }
    if args.p % 2 == 0 {
        return Err(CliError::Config(
            "simulation smoothing uses a Fourier basis; --p must be odd".into(),
        ));
    }
    let threads = env_threads()?;
    let fit_opts = fit_options(&args.tuning)?;

    let mut tables: Vec<ExperimentTable> = Vec::new();
    for model in models {
        let exp = ExperimentOptions {
            scenario,
            variant,
            model,
            runs: args.runs,
            k_range: args.k_min..=args.k_max,
            criteria: vec![Criterion::Aic, Criterion::Bic, Criterion::Shc],
            seed: args.tuning.seed,
            n: args.n,
            p: args.p,
            grid: GridOptions {
                fit: fit_opts.clone(),
                threads: 1,
                xi_includes_means: true,
            },
            threads,
        };
        let table = run_selection_experiment(&exp).map_err(CliError::from_compute)?;
        tables.push(table);
    }

    outputs::write_all(&args.output.out_dir, |out| {
        out.write("selection_counts.csv", &outputs::counts_csv(&tables))
    })?;
    for table in &tables {
        for (criterion, counts) in &table.counts {
            eprintln!(
                "simulate: {} {} counts {:?} over K={:?}",
                table.model.name(),
                criterion.name(),
                counts,
                table.k_values
            );
        }
    }
    Ok(())
}
