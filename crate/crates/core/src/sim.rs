//! Simulation benchmarks: the two synthetic curve scenarios, clustering
//! accuracy under best label matching, and the Monte-Carlo K-selection
//! experiment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use std::collections::BTreeMap;

use crate::assignment::max_profit_assignment;
use crate::basis::{smooth_curves, BasisSpec, Curve, SampledCurveSet};
use crate::error::{Error, Result};
use crate::model::DfmModelSpec;
use crate::scalar::{cast, Scalar};
use crate::selection::{grid_search, Criterion, GridOptions};

/// Which simulated scenario to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Four clusters built from two triangular bumps.
    A,
    /// Two triangular-bump clusters plus two oscillating clusters, used for
    /// discriminative-basis selection.
    B,
}

/// Scenario A prints the same generator for clusters 3 and 4; the corrected
/// variant swaps the second bump into cluster 4 so that four distinct
/// clusters actually exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioAVariant {
    Corrected,
    AsPrinted,
}

/// Knobs for the generators; the defaults reproduce the published setting.
#[derive(Debug, Clone)]
pub struct ScenarioOptions {
    pub n: usize,
    pub seed: u64,
    pub variant: ScenarioAVariant,
    /// Noise variance; test hooks set this to zero.
    pub noise_var: f64,
    /// Force the per-curve uniform draw to a fixed value (test hook).
    pub fixed_u: Option<f64>,
    /// Force every curve into one cluster (test hook).
    pub fixed_cluster: Option<usize>,
}

impl ScenarioOptions {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            variant: ScenarioAVariant::Corrected,
            noise_var: 0.5,
            fixed_u: None,
            fixed_cluster: None,
        }
    }
}

/// A simulated data set with its ground-truth labels.
#[derive(Debug, Clone)]
pub struct SimulatedDataset<T: Scalar> {
    pub curves: SampledCurveSet<T>,
    pub scenario: Scenario,
    pub seed: u64,
    pub n: usize,
    pub variant: ScenarioAVariant,
}

/// The 101-point observation grid t = 1, 1.2, ..., 21, built from integer
/// steps so repeated runs produce bit-identical grids.
pub fn observation_grid<T: Scalar>() -> Vec<T> {
    (0..=100)
        .map(|j| cast::<T>((5 + j) as f64 / 5.0))
        .collect()
}

fn bump1(t: f64) -> f64 {
    6.0 - (t - 7.0).abs()
}

fn bump2(t: f64) -> f64 {
    6.0 - (t - 15.0).abs()
}

fn mean_value(scenario: Scenario, variant: ScenarioAVariant, cluster: usize, u: f64, t: f64) -> f64 {
    match scenario {
        Scenario::A => match cluster {
            0 => u + (1.0 - u) * bump1(t),
            1 => u + (1.0 - u) * bump2(t),
            2 => u + (0.5 - u) * bump1(t),
            3 => match variant {
                ScenarioAVariant::Corrected => u + (0.5 - u) * bump2(t),
                ScenarioAVariant::AsPrinted => u + (0.5 - u) * bump1(t),
            },
            _ => unreachable!("four clusters"),
        },
        Scenario::B => match cluster {
            0 => u + (1.0 - u) * bump1(t),
            1 => u + (1.0 - u) * bump2(t),
            2 => u + (1.0 - u) * (2.0 * t).cos(),
            3 => u + (1.0 - u) * (2.0 * t - 2.0).sin(),
            _ => unreachable!("four clusters"),
        },
    }
}

/// Draws `opts.n` curves from the given scenario: equiprobable cluster
/// labels, a fresh `Uniform[0,1]` draw per curve, and i.i.d. Gaussian noise of
/// the configured variance at each of the 101 grid points.
pub fn simulate<T: Scalar>(scenario: Scenario, opts: &ScenarioOptions) -> Result<SimulatedDataset<T>> {
    if opts.n < 4 {
        return Err(Error::InvalidArgument(format!(
            "need n >= 4 simulated curves, got {}",
            opts.n
        )));
    }
    let grid_f: Vec<f64> = (0..=100).map(|j| (5 + j) as f64 / 5.0).collect();
    let grid_t: Vec<T> = observation_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let noise = Normal::new(0.0, opts.noise_var.sqrt()).expect("valid noise sd");

    let mut curves = Vec::with_capacity(opts.n);
    let mut labels = Vec::with_capacity(opts.n);
    for _ in 0..opts.n {
        let cluster = opts.fixed_cluster.unwrap_or_else(|| rng.gen_range(0..4));
        let u = opts.fixed_u.unwrap_or_else(|| rng.gen::<f64>());
        let values: Vec<T> = grid_f
            .iter()
            .map(|&t| {
                let eps = if opts.noise_var > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                cast::<T>(mean_value(scenario, opts.variant, cluster, u, t) + eps)
            })
            .collect();
        curves.push(Curve::new(grid_t.clone(), values)?);
        labels.push(cluster);
    }
    let curves = SampledCurveSet::new(curves)?.with_labels(labels)?;
    Ok(SimulatedDataset {
        curves,
        scenario,
        seed: opts.seed,
        n: opts.n,
        variant: opts.variant,
    })
}

/// Scenario A with the corrected cluster-4 generator.
pub fn simulate_scenario_a<T: Scalar>(n: usize, seed: u64) -> Result<SimulatedDataset<T>> {
    simulate(Scenario::A, &ScenarioOptions::new(n, seed))
}

/// Scenario B.
pub fn simulate_scenario_b<T: Scalar>(n: usize, seed: u64) -> Result<SimulatedDataset<T>> {
    simulate(Scenario::B, &ScenarioOptions::new(n, seed))
}

fn contingency(pred: &[usize], truth: &[usize]) -> (Vec<Vec<i64>>, usize) {
    let k = pred
        .iter()
        .chain(truth.iter())
        .max()
        .map_or(1, |&m| m + 1);
    let mut table = vec![vec![0i64; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        table[p][t] += 1;
    }
    (table, k)
}

/// Clustering accuracy in percent: the fraction of observations whose
/// predicted label matches the truth under the best label matching,
/// exhaustive over permutations up to K = 8 and by the assignment solver
/// above.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LabelLengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("empty label vectors".into()));
    }
    let k = pred
        .iter()
        .chain(truth.iter())
        .max()
        .map_or(1, |&m| m + 1);
    if k > 12 {
        return Err(Error::InvalidArgument(format!(
            "label matching supports at most 12 clusters, got {k}"
        )));
    }
    if k <= 8 {
        accuracy_exhaustive(pred, truth)
    } else {
        accuracy_assignment(pred, truth)
    }
}

/// Exhaustive-permutation matcher (reference oracle, K <= 8).
pub fn accuracy_exhaustive(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LabelLengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    let (table, k) = contingency(pred, truth);
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0i64;
    permute(&mut perm, 0, &mut |p| {
        let matched: i64 = (0..k).map(|row| table[row][p[row]]).sum();
        if matched > best {
            best = matched;
        }
    });
    Ok(best as f64 / pred.len() as f64 * 100.0)
}

/// Assignment-solver matcher (Hungarian algorithm), valid for any K.
pub fn accuracy_assignment(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LabelLengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    let (table, _) = contingency(pred, truth);
    let (_, matched) = max_profit_assignment(&table);
    Ok(matched as f64 / pred.len() as f64 * 100.0)
}

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

/// Options for the Monte-Carlo K-selection experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOptions {
    pub scenario: Scenario,
    pub variant: ScenarioAVariant,
    pub model: DfmModelSpec,
    pub runs: usize,
    pub k_range: std::ops::RangeInclusive<usize>,
    pub criteria: Vec<Criterion>,
    pub seed: u64,
    /// Curves per run.
    pub n: usize,
    /// Fourier basis size used for smoothing.
    pub p: usize,
    pub grid: GridOptions,
    /// Worker threads across runs; 0 means one per core.
    pub threads: usize,
}

impl ExperimentOptions {
    /// The published protocol: n = 100 curves smoothed on 25 Fourier basis
    /// functions, K scanned from 2 to 10, default fit options (k-means
    /// initialization, five restarts).
    pub fn published(scenario: Scenario, model: DfmModelSpec, runs: usize, seed: u64) -> Self {
        Self {
            scenario,
            variant: ScenarioAVariant::Corrected,
            model,
            runs,
            k_range: 2..=10,
            criteria: vec![Criterion::Aic, Criterion::Bic, Criterion::Shc],
            seed,
            n: 100,
            p: 25,
            grid: GridOptions {
                threads: 1,
                ..GridOptions::default()
            },
            threads: 0,
        }
    }
}

/// Count table of selected K per criterion over the Monte-Carlo runs.
#[derive(Debug, Clone)]
pub struct ExperimentTable {
    pub model: DfmModelSpec,
    pub scenario: Scenario,
    pub variant: ScenarioAVariant,
    pub k_values: Vec<usize>,
    pub counts: BTreeMap<Criterion, Vec<usize>>,
    /// Runs where the whole grid failed; excluded from the counts.
    pub failed_runs: usize,
    pub runs: usize,
}

impl ExperimentTable {
    pub fn count_for(&self, criterion: Criterion, k: usize) -> usize {
        let idx = match self.k_values.iter().position(|&kv| kv == k) {
            Some(i) => i,
            None => return 0,
        };
        self.counts.get(&criterion).map_or(0, |row| row[idx])
    }

    /// K with the highest count for the criterion.
    pub fn mode_k(&self, criterion: Criterion) -> Option<usize> {
        let row = self.counts.get(&criterion)?;
        let best = row.iter().enumerate().max_by_key(|(_, &c)| c)?;
        Some(self.k_values[best.0])
    }
}

/// Runs the K-selection experiment: each run simulates `n` curves, smooths
/// them on a Fourier basis, grid-searches K for the fixed model and tallies
/// the selected K per criterion. Run `r` derives its data seed as
/// `seed + r`; fit failures within a run are recorded, not fatal.
pub fn run_selection_experiment(opts: &ExperimentOptions) -> Result<ExperimentTable> {
    if opts.runs == 0 {
        return Err(Error::InvalidArgument("need at least one run".into()));
    }
    let k_values: Vec<usize> = opts.k_range.clone().collect();
    if k_values.is_empty() {
        return Err(Error::InvalidGrid("empty K range".into()));
    }

    let run_one = |run: usize| -> Option<BTreeMap<Criterion, usize>> {
        let sim_opts = ScenarioOptions {
            variant: opts.variant,
            ..ScenarioOptions::new(opts.n, opts.seed.wrapping_add(run as u64))
        };
        let data = simulate::<f64>(opts.scenario, &sim_opts).ok()?;
        let (lo, hi) = data.curves.time_range();
        let basis = BasisSpec::fourier(opts.p, lo, hi).ok()?;
        let coeffs = smooth_curves(&data.curves, &basis, true).ok()?;
        let w = basis.gram_matrix();
        let grid = grid_search(&coeffs, &w, &[opts.model], opts.k_range.clone(), &opts.grid).ok()?;
        let mut selected = BTreeMap::new();
        for &criterion in &opts.criteria {
            if let Some((_, k)) = grid.best.get(&criterion) {
                selected.insert(criterion, *k);
            }
        }
        Some(selected)
    };

    let results: Vec<Option<BTreeMap<Criterion, usize>>> = if opts.threads == 1 {
        (0..opts.runs).map(run_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| (0..opts.runs).into_par_iter().map(run_one).collect())
    };

    let mut counts: BTreeMap<Criterion, Vec<usize>> = opts
        .criteria
        .iter()
        .map(|&c| (c, vec![0usize; k_values.len()]))
        .collect();
    let mut failed = 0usize;
    for res in results {
        match res {
            Some(selected) => {
                for (criterion, k) in selected {
                    if let Some(pos) = k_values.iter().position(|&kv| kv == k) {
                        counts.get_mut(&criterion).unwrap()[pos] += 1;
                    }
                }
            }
            None => failed += 1,
        }
    }

    Ok(ExperimentTable {
        model: opts.model,
        scenario: opts.scenario,
        variant: opts.variant,
        k_values,
        counts,
        failed_runs: failed,
        runs: opts.runs,
    })
}
