//! CSV/JSON artifact writers. All computation happens before any file is
//! created; writes are serialized at the end of a run and every file written
//! so far is removed if a later write fails.

use std::fs;
use std::path::{Path, PathBuf};

use funfem_core::selection::GridCell;
use funfem_core::sim::ExperimentTable;
use funfem_core::{CoefficientMatrix, Criterion, FittedModel, SelectionResult};
use nalgebra::DMatrix;

use crate::fmt::sig12;
use crate::schema::ModelJson;
use crate::CliError;

/// Quotes a CSV field that contains commas (model names do).
fn csv_field(value: &str) -> String {
    if value.contains(',') || value.contains('"') {
        format!("\"{}\"", value.replace('"', "\"\""))
    } else {
        value.to_string()
    }
}

/// Tracks files created during a run so a failure can undo them.
pub struct OutputSet {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputSet {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, content: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, content)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    /// Removes everything written so far.
    pub fn discard(&mut self) {
        for path in self.written.drain(..) {
            let _ = fs::remove_file(path);
        }
    }
}

/// Runs the write phase, removing partial outputs when it fails.
pub fn write_all<F>(dir: &Path, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut OutputSet) -> Result<(), CliError>,
{
    let mut out = OutputSet::create(dir)?;
    match f(&mut out) {
        Ok(()) => Ok(()),
        Err(e) => {
            out.discard();
            Err(e)
        }
    }
}

fn anonymous_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("curve{:04}", i + 1)).collect()
}

pub fn resolve_ids(ids: Option<&[String]>, n: usize) -> Vec<String> {
    ids.map_or_else(|| anonymous_ids(n), |v| v.to_vec())
}

/// `assignments.csv`: one row per curve with its 1-based cluster and the
/// posterior mass behind the assignment.
pub fn assignments_csv(ids: &[String], fitted: &FittedModel) -> String {
    let labels = fitted.hard_assignments();
    let post = fitted.posteriors.matrix();
    let mut out = String::from("id,cluster,max_posterior\n");
    for (i, id) in ids.iter().enumerate() {
        let cluster = labels[i];
        out.push_str(&format!(
            "{id},{},{}\n",
            cluster + 1,
            sig12(post[(i, cluster)])
        ));
    }
    out
}

/// `posteriors.csv`: the full responsibility matrix.
pub fn posteriors_csv(ids: &[String], fitted: &FittedModel) -> String {
    let post = fitted.posteriors.matrix();
    let k = post.ncols();
    let mut out = String::from("id");
    for kk in 1..=k {
        out.push_str(&format!(",p_{kk}"));
    }
    out.push('\n');
    for (i, id) in ids.iter().enumerate() {
        out.push_str(id);
        for kk in 0..k {
            out.push(',');
            out.push_str(&sig12(post[(i, kk)]));
        }
        out.push('\n');
    }
    out
}

/// Cluster mean curves in coefficient space: U mu_k plus the removed mean.
pub fn cluster_mean_curves(model: &ModelJson, times: &[f64]) -> Result<DMatrix<f64>, CliError> {
    let basis = model
        .basis
        .to_spec()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let theta = basis
        .eval(times)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let u = model.u.to_dmatrix();
    let mu = model.mu.to_dmatrix(); // K x d
    let k = model.k;
    let p = model.p;
    let mut coefs = DMatrix::<f64>::zeros(k, p);
    for kk in 0..k {
        for j in 0..p {
            let mut acc = 0.0;
            for dd in 0..model.d {
                acc += u[(j, dd)] * mu[(kk, dd)];
            }
            if model.centered {
                acc += model.mean_coeffs[j];
            }
            coefs[(kk, j)] = acc;
        }
    }
    Ok(coefs * theta.transpose())
}

/// `means.csv`: one row per cluster, sampled on the grid.
pub fn means_csv(model: &ModelJson, times: &[f64]) -> Result<String, CliError> {
    let curves = cluster_mean_curves(model, times)?;
    let mut out = String::from("cluster");
    for &t in times {
        out.push_str(&format!(",t_{}", sig12(t)));
    }
    out.push('\n');
    for kk in 0..model.k {
        out.push_str(&format!("{}", kk + 1));
        for s in 0..times.len() {
            out.push(',');
            out.push_str(&sig12(curves[(kk, s)]));
        }
        out.push('\n');
    }
    Ok(out)
}

/// `samples.csv`: up to three reconstructed curves per cluster, long format.
pub fn samples_csv(
    ids: &[String],
    fitted: &FittedModel,
    coeffs: &CoefficientMatrix,
    times: &[f64],
) -> Result<String, CliError> {
    let labels = fitted.hard_assignments();
    let rec = coeffs
        .reconstruct(times)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut out = String::from("cluster,id,time,value\n");
    for kk in 0..fitted.params.k {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == kk).collect();
        for &i in members.iter().take(3) {
            for (s, &t) in times.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    kk + 1,
                    ids[i],
                    sig12(t),
                    sig12(rec[(i, s)])
                ));
            }
        }
    }
    Ok(out)
}

/// `subspace.csv`: discriminative coordinates per curve, with the city when
/// the input carried one.
pub fn subspace_csv(ids: &[String], cities: Option<&[String]>, proj: &DMatrix<f64>) -> String {
    let d = proj.ncols();
    let mut out = String::from("id");
    if cities.is_some() {
        out.push_str(",city");
    }
    for j in 1..=d {
        out.push_str(&format!(",coord_{j}"));
    }
    out.push('\n');
    for (i, id) in ids.iter().enumerate() {
        out.push_str(id);
        if let Some(cities) = cities {
            out.push(',');
            out.push_str(&cities[i]);
        }
        for j in 0..d {
            out.push(',');
            out.push_str(&sig12(proj[(i, j)]));
        }
        out.push('\n');
    }
    out
}

/// `loadings.csv`: the loading matrix in long format with explicit zero
/// markers for sparse runs.
pub fn loadings_csv(model: &ModelJson) -> String {
    let loadings = model.loadings.to_dmatrix();
    let mut out = String::from("basis_index,direction,value,is_zero\n");
    for j in 0..loadings.nrows() {
        for dd in 0..loadings.ncols() {
            let v = loadings[(j, dd)];
            out.push_str(&format!(
                "{},{},{},{}\n",
                j + 1,
                dd + 1,
                sig12(v),
                u8::from(v == 0.0)
            ));
        }
    }
    out
}

/// `selection.csv`: one row per grid cell with every criterion score.
pub fn selection_csv(result: &SelectionResult) -> String {
    let fmt_opt = |v: Option<f64>| v.map_or_else(|| "".to_string(), sig12);
    let mut out =
        String::from("model,k,xi,loglik,aic,bic,shc,best_aic,best_bic,best_shc,failure\n");
    let is_best = |cell: &GridCell<f64>, criterion: Criterion| -> u8 {
        u8::from(
            result
                .best
                .get(&criterion)
                .is_some_and(|&(m, k)| m == cell.model && k == cell.k),
        )
    };
    for cell in &result.cells {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            csv_field(&cell.model.name()),
            cell.k,
            cell.xi,
            fmt_opt(cell.loglik),
            fmt_opt(cell.aic),
            fmt_opt(cell.bic),
            fmt_opt(cell.shc),
            is_best(cell, Criterion::Aic),
            is_best(cell, Criterion::Bic),
            is_best(cell, Criterion::Shc),
            cell.failure.clone().unwrap_or_default().replace(',', ";"),
        ));
    }
    out
}

/// `loglik_curve.csv`: log-likelihood against model dimension with the
/// detected linear part flagged.
pub fn loglik_curve_csv(result: &SelectionResult) -> String {
    let mut points: Vec<(usize, f64, &GridCell<f64>)> = result
        .cells
        .iter()
        .filter_map(|c| c.loglik.map(|ll| (c.xi, ll, c)))
        .collect();
    points.sort_by_key(|(xi, _, _)| *xi);
    let linear_start = result.slope.as_ref().map_or(usize::MAX, |s| s.linear_start);
    let mut out = String::from("xi,loglik,model,k,in_linear_part\n");
    for (idx, (xi, ll, cell)) in points.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            xi,
            sig12(*ll),
            csv_field(&cell.model.name()),
            cell.k,
            u8::from(idx >= linear_start)
        ));
    }
    out
}

/// `criterion_curve.csv`: per-cell score series for the chosen criterion.
pub fn criterion_curve_csv(result: &SelectionResult, criterion: Criterion) -> String {
    let mut out = String::from("model,k,score\n");
    for cell in &result.cells {
        if let Some(score) = cell.score(criterion) {
            out.push_str(&format!(
                "{},{},{}\n",
                csv_field(&cell.model.name()),
                cell.k,
                sig12(score)
            ));
        }
    }
    out
}

/// `selection_counts.csv`: selected-K counts, one row per model and
/// criterion, one column per candidate K.
pub fn counts_csv(tables: &[ExperimentTable]) -> String {
    let mut out = String::from("model,criterion,scenario,variant,runs,failed_runs");
    if let Some(first) = tables.first() {
        for k in &first.k_values {
            out.push_str(&format!(",k_{k}"));
        }
    }
    out.push('\n');
    for table in tables {
        for (criterion, counts) in &table.counts {
            out.push_str(&format!(
                "{},{},{:?},{:?},{},{}",
                csv_field(&table.model.name()),
                criterion.name(),
                table.scenario,
                table.variant,
                table.runs,
                table.failed_runs
            ));
            for c in counts {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
    }
    out
}

/// Uniform evaluation grid over the basis domain.
pub fn default_grid(model: &ModelJson, points: usize) -> Vec<f64> {
    let lo = model.basis.t_min;
    let hi = model.basis.t_max;
    (0..points)
        .map(|s| lo + (hi - lo) * s as f64 / (points - 1) as f64)
        .collect()
}

/// Plot-ready export from a serialized model alone: the cluster mean curves.
/// Re-running this on the same document is byte-identical.
pub fn export_plot_data(model: &ModelJson, times: &[f64]) -> Result<String, CliError> {
    means_csv(model, times)
}
