//! Grids of independent training runs, executed in parallel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_dataset, Dataset};
use crate::error::{Error, Result};
use crate::metrics::pearson_factor_correlation;
use crate::model::{ModelConfig, Variant};
use crate::synthetic::{generate_planted, SyntheticSpec};
use crate::tensor::{Real, Tensor};
use crate::train::{train, RunResult, TrainConfig};

/// Where each run's data comes from.
#[derive(Clone, Debug)]
pub enum DataSource {
    /// One dataset, re-split per seed.
    Fixed(Dataset),
    /// A fresh planted dataset per seed (the spec's own seed is replaced).
    Planted(SyntheticSpec),
}

/// Axes of a sweep. An empty axis falls back to the base configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub variants: Vec<Variant>,
    pub factors: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub train_ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    pub val_ratio: f64,
    pub test_ratio: f64,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            variants: Vec::new(),
            factors: Vec::new(),
            lambdas: Vec::new(),
            train_ratios: vec![0.5],
            seeds: (0..10).collect(),
            val_ratio: 0.25,
            test_ratio: 0.25,
        }
    }
}

/// One point of the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub id: usize,
    pub variant: Variant,
    pub factors: usize,
    pub lambda: f64,
    pub train_ratio: f64,
    pub seed: u64,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub run: SweepRun,
    pub model: ModelConfig,
    pub result: Result<RunResult>,
}

impl SweepOutcome {
    /// Mean absolute off-diagonal Pearson correlation of the last layer's α
    /// over non-empty hyperedges, if the run produced relevance scores.
    pub fn alpha_correlation(&self, live_edges: &[usize]) -> Option<f64> {
        let alpha = self.result.as_ref().ok()?.test.alphas.last()?;
        let k = alpha.cols();
        let rows: Vec<f64> = live_edges.iter().flat_map(|&e| alpha.row(e).to_vec()).collect();
        let live = Tensor::matrix(live_edges.len(), k, rows).ok()?;
        Some(pearson_factor_correlation(&live).mean_abs_off_diagonal())
    }
}

impl SweepGrid {
    /// Expands the grid in a fixed nesting order: variant, K, λ, ratio, seed.
    pub fn runs(&self, base: &ModelConfig) -> Vec<SweepRun> {
        let mut out = Vec::new();
        for &variant in &or_base(&self.variants, base.variant) {
            for &factors in &or_base(&self.factors, base.factors) {
                for &lambda in &or_base(&self.lambdas, base.lambda) {
                    for &train_ratio in &self.train_ratios {
                        for &seed in &self.seeds {
                            out.push(SweepRun {
                                id: out.len(),
                                variant,
                                factors,
                                lambda,
                                train_ratio,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

fn or_base<T: Clone>(axis: &[T], base: T) -> Vec<T> {
    if axis.is_empty() {
        vec![base]
    } else {
        axis.to_vec()
    }
}

fn prepare(source: &DataSource, run: &SweepRun, grid: &SweepGrid) -> Result<Dataset> {
    let ds = match source {
        DataSource::Fixed(ds) => ds.clone(),
        DataSource::Planted(spec) => generate_planted(&SyntheticSpec {
            seed: run.seed,
            ..spec.clone()
        })?,
    };
    Ok(split_dataset(&ds, (run.train_ratio, grid.val_ratio, grid.test_ratio), run.seed)?.0)
}

/// Runs every grid point on up to `jobs` threads. Outcomes come back in grid
/// order whatever the scheduling.
///
/// The hidden width is rounded up to a multiple of each K so that factor
/// sweeps keep the base width where possible.
pub fn sweep<T: Real>(
    source: &DataSource,
    grid: &SweepGrid,
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    jobs: usize,
) -> Result<Vec<SweepOutcome>> {
    let runs = grid.runs(base_model);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let outcomes = pool.install(|| {
        runs.into_par_iter()
            .map(|run| {
                let model = ModelConfig {
                    variant: run.variant,
                    factors: run.factors,
                    hidden: base_model.hidden.div_ceil(run.factors) * run.factors,
                    lambda: run.lambda,
                    ..base_model.clone()
                };
                let cfg = TrainConfig {
                    seed: run.seed,
                    ..base_train.clone()
                };
                let result = prepare(source, &run, grid).and_then(|ds| train::<T>(&ds, &model, &cfg).map(|(_, r)| r));
                SweepOutcome { run, model, result }
            })
            .collect()
    });
    Ok(outcomes)
}
