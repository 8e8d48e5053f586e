//! Planted-factor benchmark generator.
//!
//! Every hyperedge is given a ground-truth factor type, and only the
//! hyperedges of the label factor (factor 0) carry information about the
//! labels. The remaining hyperedges are distractors. Because the assignment
//! is known, how well a model's relevance scores recover it can be measured
//! directly.
//!
//! Generation procedure, with `b = d0 / K*` the block width:
//!
//! 1. For every factor `t`, each node joins one of `G` communities uniformly
//!    at random, and each community receives a centre `c ~ N(0, I_b)`.
//! 2. Node `i` gets one latent block per factor,
//!    `u_i^t = ρ·c_{t, g_t(i)} + sqrt(1 - ρ²)·ξ`, `ξ ~ N(0, I_b)`. Marginally every
//!    block is standard normal; `ρ` controls how strongly nodes of one
//!    community agree on that block.
//! 3. Hyperedge `j` draws a type `t_j` uniformly in `[0, K*)`, then a community of
//!    that factor, then `2 + Geometric` members (mean `mean_degree`, truncated
//!    at the community size) sampled without replacement from the community.
//!    Hyperedges of type `t` are therefore coherent in block `t` only.
//! 4. Observed features are `x_i = concat(u_i) + N(0, σ_n²)`.
//! 5. Node labels: `argmax_c (R a_i)_c` for a fixed Gaussian readout `R`, where
//!    `a_i` is the mean over the factor-0 hyperedges containing `i` of their
//!    members' mean block-0 latent. Nodes outside every factor-0 hyperedge
//!    fall back to their own block-0 latent.
//! 6. Hypergraph task: every sample redraws centres and latents on the shared
//!    topology and its label uses `a` averaged over all factor-0 hyperedges.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, PlantedFactors, Splits, Task};
use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;
use crate::tensor::Tensor;

/// The factor whose hyperedges determine the labels.
pub const LABEL_FACTOR: usize = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_nodes: usize,
    pub num_edges: usize,
    /// Planted factor count `K*`.
    pub num_factors: usize,
    pub mean_degree: f64,
    pub feature_dim: usize,
    pub noise_std: f64,
    pub num_classes: usize,
    pub task: Task,
    /// Samples sharing the topology (hypergraph task only).
    pub num_samples: usize,
    /// Communities per factor.
    pub communities: usize,
    /// Within-community agreement `ρ ∈ [0, 1]` of the latent blocks.
    pub coherence: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_nodes: 200,
            num_edges: 80,
            num_factors: 2,
            mean_degree: 12.0,
            feature_dim: 16,
            noise_std: 1.0,
            num_classes: 2,
            task: Task::NodeClassification,
            num_samples: 0,
            communities: 8,
            coherence: 0.8,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::DegenerateSpec(msg));
        if self.num_factors == 0 {
            return bad("K* must be at least 1".into());
        }
        if self.feature_dim == 0 || !self.feature_dim.is_multiple_of(self.num_factors) {
            return bad(format!(
                "d0 = {} is not divisible by K* = {}",
                self.feature_dim, self.num_factors
            ));
        }
        if self.mean_degree.is_nan() || self.mean_degree < 2.0 {
            return bad(format!("mean degree {} < 2", self.mean_degree));
        }
        if self.noise_std.is_nan() || self.noise_std < 0.0 {
            return bad(format!("noise std {} < 0", self.noise_std));
        }
        if self.num_nodes < 2 {
            return bad("need at least two nodes".into());
        }
        if self.num_classes < 1 {
            return bad("need at least one class".into());
        }
        if self.communities == 0 {
            return bad("need at least one community".into());
        }
        if !(0.0..=1.0).contains(&self.coherence) {
            return bad(format!("coherence {} outside [0, 1]", self.coherence));
        }
        if self.task == Task::HypergraphClassification && self.num_samples == 0 {
            return bad("hypergraph task needs S >= 1".into());
        }
        Ok(())
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Latent node blocks for one sample: `latent[i][t]` has length `b`.
fn draw_latents(
    rng: &mut ChaCha8Rng,
    spec: &SyntheticSpec,
    membership: &[Vec<usize>],
    b: usize,
) -> Vec<Vec<Vec<f64>>> {
    let k = spec.num_factors;
    let centres: Vec<Vec<Vec<f64>>> = (0..k)
        .map(|_| (0..spec.communities).map(|_| normal_vec(rng, b)).collect())
        .collect();
    let rho = spec.coherence;
    let own = (1.0 - rho * rho).max(0.0).sqrt();
    (0..spec.num_nodes)
        .map(|i| {
            (0..k)
                .map(|t| {
                    let c = &centres[t][membership[t][i]];
                    normal_vec(rng, b)
                        .into_iter()
                        .zip(c)
                        .map(|(xi, &ci)| rho * ci + own * xi)
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn observe(rng: &mut ChaCha8Rng, latent: &[Vec<Vec<f64>>], noise: f64, out: &mut Vec<f32>) {
    for blocks in latent {
        for block in blocks {
            for &u in block {
                let e: f64 = rng.sample(StandardNormal);
                out.push((u + noise * e) as f32);
            }
        }
    }
}

fn mean_block(latent: &[Vec<Vec<f64>>], members: &[usize], t: usize, b: usize) -> Vec<f64> {
    let mut acc = vec![0.0; b];
    for &v in members {
        for (a, &u) in acc.iter_mut().zip(&latent[v][t]) {
            *a += u;
        }
    }
    let n = members.len().max(1) as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

fn readout(r: &[Vec<f64>], a: &[f64]) -> usize {
    let scores: Vec<f64> = r
        .iter()
        .map(|row| row.iter().zip(a).map(|(x, y)| x * y).sum())
        .collect();
    argmax_lowest(&scores)
}

/// Generates a dataset with planted hyperedge factors. Splits are left
/// unassigned; see [`crate::dataset::split_dataset`].
pub fn generate_planted(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, m, k) = (spec.num_nodes, spec.num_edges, spec.num_factors);
    let b = spec.feature_dim / k;

    let membership: Vec<Vec<usize>> = (0..k)
        .map(|_| (0..n).map(|_| rng.gen_range(0..spec.communities)).collect())
        .collect();
    let pools: Vec<Vec<Vec<usize>>> = membership
        .iter()
        .map(|assign| {
            let mut pools = vec![Vec::new(); spec.communities];
            for (i, &g) in assign.iter().enumerate() {
                pools[g].push(i);
            }
            pools
        })
        .collect();

    let geometric = Geometric::new(1.0 / (spec.mean_degree - 1.0))
        .map_err(|e| Error::DegenerateSpec(e.to_string()))?;
    let mut edge_factor = Vec::with_capacity(m);
    let mut pairs = Vec::new();
    let all_nodes: Vec<usize> = (0..n).collect();
    for e in 0..m {
        let t = rng.gen_range(0..k);
        let eligible: Vec<&Vec<usize>> = pools[t].iter().filter(|p| p.len() >= 2).collect();
        let pool: &Vec<usize> = if eligible.is_empty() {
            &all_nodes
        } else {
            eligible[rng.gen_range(0..eligible.len())]
        };
        let extra = geometric.sample(&mut rng) as usize;
        let degree = (2 + extra).min(pool.len());
        for idx in sample_indices(&mut rng, pool.len(), degree) {
            pairs.push((pool[idx], e));
        }
        edge_factor.push(t);
    }
    let hypergraph = Hypergraph::new(pairs, n, m)?;

    let readout_matrix: Vec<Vec<f64>> = (0..spec.num_classes).map(|_| normal_vec(&mut rng, b)).collect();
    let label_edges: Vec<usize> = (0..m)
        .filter(|&e| edge_factor[e] == LABEL_FACTOR && hypergraph.edge_degree(e) > 0)
        .collect();

    let (features, labels, num_samples) = match spec.task {
        Task::NodeClassification => {
            let latent = draw_latents(&mut rng, spec, &membership, b);
            let mut feats = Vec::with_capacity(n * spec.feature_dim);
            observe(&mut rng, &latent, spec.noise_std, &mut feats);
            let edge_means: Vec<Option<Vec<f64>>> = (0..m)
                .map(|e| {
                    (edge_factor[e] == LABEL_FACTOR && hypergraph.edge_degree(e) > 0)
                        .then(|| mean_block(&latent, hypergraph.members(e), LABEL_FACTOR, b))
                })
                .collect();
            let labels = (0..n)
                .map(|i| {
                    let relevant: Vec<&Vec<f64>> = hypergraph
                        .edges_of(i)
                        .iter()
                        .filter_map(|&e| edge_means[e].as_ref())
                        .collect();
                    let a = if relevant.is_empty() {
                        latent[i][LABEL_FACTOR].clone()
                    } else {
                        let mut a = vec![0.0; b];
                        for mean in &relevant {
                            a.iter_mut().zip(mean.iter()).for_each(|(x, y)| *x += y);
                        }
                        a.iter_mut().for_each(|x| *x /= relevant.len() as f64);
                        a
                    };
                    readout(&readout_matrix, &a)
                })
                .collect();
            (Tensor::matrix(n, spec.feature_dim, feats)?, labels, 0)
        }
        Task::HypergraphClassification => {
            let s = spec.num_samples;
            let mut feats = Vec::with_capacity(s * n * spec.feature_dim);
            let mut labels = Vec::with_capacity(s);
            for _ in 0..s {
                let latent = draw_latents(&mut rng, spec, &membership, b);
                observe(&mut rng, &latent, spec.noise_std, &mut feats);
                let a = if label_edges.is_empty() {
                    mean_block(&latent, &all_nodes, LABEL_FACTOR, b)
                } else {
                    let mut a = vec![0.0; b];
                    for &e in &label_edges {
                        let mean = mean_block(&latent, hypergraph.members(e), LABEL_FACTOR, b);
                        a.iter_mut().zip(&mean).for_each(|(x, y)| *x += y);
                    }
                    a.iter_mut().for_each(|x| *x /= label_edges.len() as f64);
                    a
                };
                labels.push(readout(&readout_matrix, &a));
            }
            (Tensor::matrix(s * n, spec.feature_dim, feats)?, labels, s)
        }
    };

    let items = labels.len();
    Dataset::new(
        spec.task,
        hypergraph,
        features,
        num_samples,
        spec.num_classes,
        labels,
        Splits::unassigned(items),
        Some(PlantedFactors {
            num_factors: k,
            label_factor: LABEL_FACTOR,
            edge_factor,
        }),
    )
}
