//! Wall-clock scaling of one training step.
//!
//! A layer costs `O((M + N)·d_in·d_out + E·(d_in + d_out))`: dense encoder
//! products on node and hyperedge rows plus segment passes over the `E`
//! incidences. With `N`, `M` and `d` fixed, time should grow linearly in `E`
//! once the incidence term dominates.

use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Task;
use crate::error::Result;
use crate::hypergraph::Hypergraph;
use crate::loss::task_loss;
use crate::model::{model_forward, ForwardOptions, Mode, ModelConfig, ModelParams, Propagation};
use crate::tape::Tape;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchSize {
    pub nodes: usize,
    pub edges: usize,
    /// Requested incidence count `E`.
    pub incidences: usize,
    /// Input and hidden width.
    pub hidden: usize,
    pub factors: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub size: BenchSize,
    /// Incidences actually generated (capped at `N·M`).
    pub incidences: usize,
    pub trials: Vec<f64>,
    pub median_seconds: f64,
}

/// Hypergraph whose hyperedges all have (nearly) `E / M` distinct members.
pub fn uniform_hypergraph<R: Rng + ?Sized>(nodes: usize, edges: usize, incidences: usize, rng: &mut R) -> Result<Hypergraph> {
    let total = incidences.min(nodes * edges);
    let mut pairs = Vec::with_capacity(total);
    for e in 0..edges {
        let degree = total / edges + usize::from(e < total % edges);
        pairs.extend(sample(rng, nodes, degree).into_iter().map(|v| (v, e)));
    }
    Hypergraph::new(pairs, nodes, edges)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

/// Seconds for one forward and backward pass of the full model.
fn time_step<T: Real>(
    x: &Tensor<T>,
    labels: &[usize],
    prop: &Propagation,
    params: &ModelParams<T>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let rows: Vec<usize> = (0..labels.len()).collect();
    let started = Instant::now();
    let tape = Tape::<T>::new();
    let bound = params.bind(&tape);
    let xv = tape.constant(x.clone());
    let out = model_forward(
        &tape,
        xv,
        prop,
        &bound,
        &params.config,
        Task::NodeClassification,
        Mode::Train,
        rng,
        ForwardOptions::default(),
    )?;
    let loss = task_loss(&tape, out.logits, labels, &rows)?;
    tape.backward(loss)?;
    Ok(started.elapsed().as_secs_f64())
}

/// Times `trials` training steps (after one warm-up) at each size.
pub fn scaling_benchmark<T: Real>(sizes: &[BenchSize], trials: usize, seed: u64) -> Result<Vec<BenchRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let hg = uniform_hypergraph(size.nodes, size.edges, size.incidences, &mut rng)?;
        let prop = Propagation::new(&hg, 1);
        let x = Tensor::matrix(
            size.nodes,
            size.hidden,
            (0..size.nodes * size.hidden).map(|_| T::of(rng.gen_range(-1.0..1.0))).collect(),
        )?;
        let labels: Vec<usize> = (0..size.nodes).map(|_| rng.gen_range(0..2)).collect();
        let cfg = ModelConfig {
            hidden: size.hidden,
            factors: size.factors,
            dropout: 0.0,
            ..ModelConfig::default()
        };
        let params = ModelParams::<T>::init(&cfg, size.hidden, 2, Task::NodeClassification, size.edges, &mut rng)?;
        time_step(&x, &labels, &prop, &params, &mut rng)?;
        let trials: Vec<f64> = (0..trials.max(1))
            .map(|_| time_step(&x, &labels, &prop, &params, &mut rng))
            .collect::<Result<_>>()?;
        rows.push(BenchRow {
            size,
            incidences: hg.num_incidences(),
            median_seconds: median(&trials),
            trials,
        });
    }
    Ok(rows)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}
