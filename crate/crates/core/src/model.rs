//! The disentangling hypergraph layer, the full model and its variants.
//!
//! One layer runs three stages:
//!
//! 1. **Node → hyperedge.** Two orders of the same two maps give two factor
//!    representations of every hyperedge: the *aggregation-first* branch
//!    encodes the mean member feature, the *disentangle-first* branch averages
//!    the encoded member features. Their agreement per factor, scored by a
//!    bilinear form on L2-normalised chunks squashed through a sigmoid, is the
//!    relevance `α[e, k]`.
//! 2. **Hyperedge → node.** Each node averages the factor chunks of its
//!    hyperedges weighted by `α`, normalising by the weight sum.
//! 3. **Output.** `LayerNorm(β·y + (1 − β)·h)` with `h` the node's own encoded
//!    features.
//!
//! The factor encoder is a single `tanh` linear layer whose output columns are
//! cut into `K` equal chunks, one per factor. That is the same as running `K`
//! independent encoders on the corresponding column blocks.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::dataset::Task;
use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;
use crate::segment::SegmentMap;
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Relevance-weighted propagation of the disentangle-first representations.
    Full,
    /// Relevance ignored: `α ≡ 1`, plain mean propagation.
    Ablation,
    /// Relevance-weighted propagation of the aggregation-first representations.
    AltBranch,
    /// Normalised-Laplacian hypergraph convolution baseline.
    Hgnn,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Ablation => "ablation",
            Variant::AltBranch => "alt-branch",
            Variant::Hgnn => "hgnn",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "ablation" | "ablation-no-naturality" => Ok(Variant::Ablation),
            "alt-branch" => Ok(Variant::AltBranch),
            "hgnn" => Ok(Variant::Hgnn),
            other => Err(Error::InvalidConfig(format!("unknown variant {other:?}"))),
        }
    }
}

/// Encoder non-linearity. `Linear` exists for testing: linear maps commute
/// with the mean, so both branches then agree on every hyperedge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layers: usize,
    /// Factor count `K`.
    pub factors: usize,
    /// Hidden width `d`, divisible by `K`.
    pub hidden: usize,
    /// Weight of the propagated representation in the output interpolation.
    pub beta: f64,
    pub variant: Variant,
    pub dropout: f64,
    /// Weight of the factor discrimination loss; zero disables it.
    pub lambda: f64,
    pub activation: Activation,
    /// Guard in the row L2 normalisation of the relevance scorer.
    pub norm_eps: f64,
    /// Guard in the layer normalisation.
    pub ln_eps: f64,
    /// Guard on the relevance-weight sums of hyperedge → node propagation.
    pub agg_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            factors: 2,
            hidden: 16,
            beta: 0.5,
            variant: Variant::Full,
            dropout: 0.5,
            lambda: 0.0,
            activation: Activation::Tanh,
            norm_eps: 1e-12,
            ln_eps: 1e-5,
            agg_eps: 1e-12,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.layers == 0 {
            return bad("need at least one layer".into());
        }
        if self.factors == 0 || self.hidden == 0 || !self.hidden.is_multiple_of(self.factors) {
            return bad(format!(
                "hidden width {} must be a positive multiple of K = {}",
                self.hidden, self.factors
            ));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta {} outside [0, 1]", self.beta));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return bad(format!("lambda {} must be non-negative", self.lambda));
        }
        Ok(())
    }

    pub fn chunk_width(&self) -> usize {
        self.hidden / self.factors
    }

    fn uses_factor_loss(&self) -> bool {
        self.lambda > 0.0 && self.variant != Variant::Hgnn
    }
}

/// Plain affine map `x·W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorEncoderParams<T> {
    /// `d_in × d`.
    pub weight: Tensor<T>,
    /// Length `d`.
    pub bias: Tensor<T>,
    pub factors: usize,
}

impl<T: Real> FactorEncoderParams<T> {
    /// The encoder of factor `k` alone: columns `[k·d/K, (k+1)·d/K)`.
    pub fn block(&self, k: usize) -> Self {
        let w = self.weight.cols() / self.factors;
        let (r, c) = (self.weight.rows(), self.weight.cols());
        let mut weight = Vec::with_capacity(r * w);
        for i in 0..r {
            weight.extend_from_slice(&self.weight.data()[i * c + k * w..i * c + (k + 1) * w]);
        }
        Self {
            weight: Tensor::matrix(r, w, weight).expect("block shape"),
            bias: Tensor::vector(self.bias.data()[k * w..(k + 1) * w].to_vec()),
            factors: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BilinearScorerParams<T> {
    /// One `(d/K)×(d/K)` matrix per factor, no bias.
    pub weights: Vec<Tensor<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub encoder: FactorEncoderParams<T>,
    pub scorer: BilinearScorerParams<T>,
    pub ln_gamma: Tensor<T>,
    pub ln_beta: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Backbone<T> {
    Natural(Vec<LayerParams<T>>),
    /// One weight matrix per convolution.
    Hgnn(Vec<Tensor<T>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub input_dim: usize,
    pub num_classes: usize,
    /// `d` for node tasks, `M·d` for hypergraph tasks.
    pub classifier_inputs: usize,
    pub backbone: Backbone<T>,
    pub classifier: LinearParams<T>,
    /// One `(d/K) → K` classifier per layer when the discrimination loss is on.
    pub factor_classifiers: Vec<LinearParams<T>>,
}

fn xavier<T: Real, R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let u = Uniform::new_inclusive(-a, a);
    let data = (0..fan_in * fan_out).map(|_| T::of(u.sample(rng))).collect();
    Tensor::matrix(fan_in, fan_out, data).expect("xavier shape")
}

impl<T: Real> ModelParams<T> {
    /// Randomly initialised parameters.
    ///
    /// Encoder and classifier weights are uniform in `±sqrt(6/(fan_in+fan_out))`
    /// with zero biases; scorer matrices start at identity plus `N(0, 0.01²)`
    /// noise; layer-norm scales are one and shifts zero.
    pub fn init<R: Rng + ?Sized>(
        config: &ModelConfig,
        input_dim: usize,
        num_classes: usize,
        task: Task,
        num_edges: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let classifier_inputs = match task {
            Task::NodeClassification => config.hidden,
            Task::HypergraphClassification => num_edges * config.hidden,
        };
        let mut params = Self::zeros(config, input_dim, num_classes, classifier_inputs)?;
        let d = config.hidden;
        let w = config.chunk_width();
        let noise = Normal::new(0.0, 0.01).expect("scorer noise");
        match &mut params.backbone {
            Backbone::Natural(layers) => {
                for (l, layer) in layers.iter_mut().enumerate() {
                    let d_in = if l == 0 { input_dim } else { d };
                    layer.encoder.weight = xavier(rng, d_in, d);
                    for m in &mut layer.scorer.weights {
                        for i in 0..w {
                            for j in 0..w {
                                let base = if i == j { 1.0 } else { 0.0 };
                                m.data_mut()[i * w + j] = T::of(base + noise.sample(rng));
                            }
                        }
                    }
                }
            }
            Backbone::Hgnn(weights) => {
                for (l, m) in weights.iter_mut().enumerate() {
                    let d_in = if l == 0 { input_dim } else { d };
                    *m = xavier(rng, d_in, d);
                }
            }
        }
        params.classifier.weight = xavier(rng, classifier_inputs, num_classes);
        for fc in &mut params.factor_classifiers {
            fc.weight = xavier(rng, w, config.factors);
        }
        Ok(params)
    }

    /// Correctly shaped parameters with every weight zero (layer-norm scales one).
    pub fn zeros(
        config: &ModelConfig,
        input_dim: usize,
        num_classes: usize,
        classifier_inputs: usize,
    ) -> Result<Self> {
        config.validate()?;
        let (d, k, w) = (config.hidden, config.factors, config.chunk_width());
        let backbone = match config.variant {
            Variant::Hgnn => Backbone::Hgnn(
                (0..config.layers)
                    .map(|l| Tensor::zeros(&[if l == 0 { input_dim } else { d }, d]))
                    .collect(),
            ),
            _ => Backbone::Natural(
                (0..config.layers)
                    .map(|l| LayerParams {
                        encoder: FactorEncoderParams {
                            weight: Tensor::zeros(&[if l == 0 { input_dim } else { d }, d]),
                            bias: Tensor::zeros(&[d]),
                            factors: k,
                        },
                        scorer: BilinearScorerParams {
                            weights: (0..k).map(|_| Tensor::zeros(&[w, w])).collect(),
                        },
                        ln_gamma: Tensor::ones(&[d]),
                        ln_beta: Tensor::zeros(&[d]),
                    })
                    .collect(),
            ),
        };
        let factor_classifiers = if config.uses_factor_loss() {
            (0..config.layers)
                .map(|_| LinearParams {
                    weight: Tensor::zeros(&[w, k]),
                    bias: Tensor::zeros(&[k]),
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            config: config.clone(),
            input_dim,
            num_classes,
            classifier_inputs,
            backbone,
            classifier: LinearParams {
                weight: Tensor::zeros(&[classifier_inputs, num_classes]),
                bias: Tensor::zeros(&[num_classes]),
            },
            factor_classifiers,
        })
    }

    /// Every parameter tensor in a fixed order (the order of [`ModelParams::bind`]).
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        match &self.backbone {
            Backbone::Natural(layers) => {
                for l in layers {
                    out.push(&l.encoder.weight);
                    out.push(&l.encoder.bias);
                    out.extend(l.scorer.weights.iter());
                    out.push(&l.ln_gamma);
                    out.push(&l.ln_beta);
                }
            }
            Backbone::Hgnn(ws) => out.extend(ws.iter()),
        }
        out.push(&self.classifier.weight);
        out.push(&self.classifier.bias);
        for fc in &self.factor_classifiers {
            out.push(&fc.weight);
            out.push(&fc.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        match &mut self.backbone {
            Backbone::Natural(layers) => {
                for l in layers {
                    out.push(&mut l.encoder.weight);
                    out.push(&mut l.encoder.bias);
                    out.extend(l.scorer.weights.iter_mut());
                    out.push(&mut l.ln_gamma);
                    out.push(&mut l.ln_beta);
                }
            }
            Backbone::Hgnn(ws) => out.extend(ws.iter_mut()),
        }
        out.push(&mut self.classifier.weight);
        out.push(&mut self.classifier.bias);
        for fc in &mut self.factor_classifiers {
            out.push(&mut fc.weight);
            out.push(&mut fc.bias);
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Records every tensor as a leaf on `tape`.
    pub fn bind(&self, tape: &Tape<T>) -> BoundParams {
        let all: Vec<Var> = self.tensors().into_iter().map(|t| tape.leaf(t.clone())).collect();
        let mut it = all.iter().copied();
        let mut next = || it.next().expect("bind order");
        let backbone = match &self.backbone {
            Backbone::Natural(layers) => BoundBackbone::Natural(
                layers
                    .iter()
                    .map(|l| BoundLayer {
                        enc_weight: next(),
                        enc_bias: next(),
                        scorer: (0..l.scorer.weights.len()).map(|_| next()).collect(),
                        ln_gamma: next(),
                        ln_beta: next(),
                    })
                    .collect(),
            ),
            Backbone::Hgnn(ws) => BoundBackbone::Hgnn(ws.iter().map(|_| next()).collect()),
        };
        let classifier = BoundLinear {
            weight: next(),
            bias: next(),
        };
        let factor_classifiers = (0..self.factor_classifiers.len())
            .map(|_| BoundLinear {
                weight: next(),
                bias: next(),
            })
            .collect();
        BoundParams {
            all,
            backbone,
            classifier,
            factor_classifiers,
        }
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros(
            &self.config,
            self.input_dim,
            self.num_classes,
            self.classifier_inputs,
        )
        .expect("config already validated");
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst = src.cast();
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Clone, Debug)]
pub struct BoundLayer {
    pub enc_weight: Var,
    pub enc_bias: Var,
    pub scorer: Vec<Var>,
    pub ln_gamma: Var,
    pub ln_beta: Var,
}

#[derive(Clone, Debug)]
pub enum BoundBackbone {
    Natural(Vec<BoundLayer>),
    Hgnn(Vec<Var>),
}

/// Tape handles of a [`ModelParams`], in the same layout.
#[derive(Clone, Debug)]
pub struct BoundParams {
    /// Leaves in [`ModelParams::tensors`] order.
    pub all: Vec<Var>,
    pub backbone: BoundBackbone,
    pub classifier: BoundLinear,
    pub factor_classifiers: Vec<BoundLinear>,
}

/// Segment maps for a batch of `copies` samples stacked on one topology.
#[derive(Clone, Debug)]
pub struct Propagation {
    /// Segments = hyperedges, rows = nodes.
    pub edge_map: Arc<SegmentMap>,
    /// Segments = nodes, rows = hyperedges.
    pub node_map: Arc<SegmentMap>,
    pub copies: usize,
    pub num_nodes: usize,
    pub num_edges: usize,
}

impl Propagation {
    pub fn new(hg: &Hypergraph, copies: usize) -> Self {
        let (edge_map, node_map) = if copies == 1 {
            (Arc::clone(hg.edge_map()), Arc::clone(hg.node_map()))
        } else {
            (
                Arc::new(hg.edge_map().replicate(copies)),
                Arc::new(hg.node_map().replicate(copies)),
            )
        };
        Self {
            edge_map,
            node_map,
            copies,
            num_nodes: hg.num_nodes(),
            num_edges: hg.num_edges(),
        }
    }
}

pub fn linear<T: Real>(tape: &Tape<T>, x: Var, p: BoundLinear) -> Result<Var> {
    tape.add(tape.matmul(x, p.weight)?, p.bias)
}

/// `act(X·W + b)`; chunk `k` of the result is factor `k`'s representation.
pub fn factor_encode<T: Real>(
    tape: &Tape<T>,
    x: Var,
    weight: Var,
    bias: Var,
    activation: Activation,
) -> Result<Var> {
    let pre = tape.add(tape.matmul(x, weight)?, bias)?;
    Ok(match activation {
        Activation::Tanh => tape.tanh(pre),
        Activation::Linear => pre,
    })
}

/// Hyperedge factor representations `H̃`: encode the mean member feature.
pub fn aggregation_first_branch<T: Real>(
    tape: &Tape<T>,
    x: Var,
    edge_map: &Arc<SegmentMap>,
    weight: Var,
    bias: Var,
    activation: Activation,
) -> Result<Var> {
    let mean = tape.segment_mean(x, edge_map)?;
    factor_encode(tape, mean, weight, bias, activation)
}

/// Hyperedge factor representations `H`: average the encoded member features.
pub fn disentangle_first_branch<T: Real>(
    tape: &Tape<T>,
    x: Var,
    edge_map: &Arc<SegmentMap>,
    weight: Var,
    bias: Var,
    activation: Activation,
) -> Result<Var> {
    let encoded = factor_encode(tape, x, weight, bias, activation)?;
    tape.segment_mean(encoded, edge_map)
}

/// `α[e, k] = σ(ĥ_e^k · W_k · ĥ̃_e^kᵀ)` with both chunks L2-normalised.
///
/// A zero chunk normalises to zero and scores `σ(0) = 0.5`.
pub fn relevance_scores<T: Real>(
    tape: &Tape<T>,
    h: Var,
    h_tilde: Var,
    scorer: &[Var],
    eps: T,
) -> Result<Var> {
    let k = scorer.len();
    let hs = tape.chunk_cols(h, k)?;
    let hts = tape.chunk_cols(h_tilde, k)?;
    let cols = hs
        .iter()
        .zip(&hts)
        .zip(scorer)
        .map(|((&hk, &htk), &wk)| {
            let a = tape.l2_normalize_rows(hk, eps);
            let b = tape.l2_normalize_rows(htk, eps);
            let bilinear = tape.sum_cols(tape.mul(tape.matmul(a, wk)?, b)?);
            Ok(tape.sigmoid(bilinear))
        })
        .collect::<Result<Vec<_>>>()?;
    tape.concat_cols(&cols)
}

/// Scales factor chunk `k` of every row by `α[row, k]`.
pub fn weighted_hyperedge_reps<T: Real>(tape: &Tape<T>, h: Var, alpha: Var, factors: usize) -> Result<Var> {
    let chunks = tape.chunk_cols(h, factors)?;
    let weights = tape.chunk_cols(alpha, factors)?;
    let scaled = chunks
        .iter()
        .zip(&weights)
        .map(|(&c, &w)| tape.mul_rows(c, w))
        .collect::<Result<Vec<_>>>()?;
    tape.concat_cols(&scaled)
}

/// `y_v^k = Σ_{e∋v} α_e^k h_e^k / max(Σ_{e∋v} α_e^k, eps)` from the already
/// weighted representations `hw`. Nodes without hyperedges get zero rows.
pub fn hyperedge_to_node<T: Real>(
    tape: &Tape<T>,
    hw: Var,
    alpha: Var,
    node_map: &Arc<SegmentMap>,
    factors: usize,
    eps: T,
) -> Result<Var> {
    let numerator = tape.segment_sum(hw, node_map)?;
    let weight_sums = tape.segment_sum(alpha, node_map)?;
    let nums = tape.chunk_cols(numerator, factors)?;
    let dens = tape.chunk_cols(weight_sums, factors)?;
    let parts = nums
        .iter()
        .zip(&dens)
        .map(|(&n, &d)| tape.mul_rows(n, tape.recip_clamp(d, eps)))
        .collect::<Result<Vec<_>>>()?;
    tape.concat_cols(&parts)
}

/// Normalised-Laplacian convolution `D_v^{-1/2} I D_e^{-1} Iᵀ D_v^{-1/2} X W`,
/// realised as two segment passes. Zero-degree nodes contribute and receive
/// nothing.
pub fn hgnn_baseline_layer<T: Real>(tape: &Tape<T>, x: Var, prop: &Propagation, weight: Var) -> Result<Var> {
    let inv_sqrt_deg: Vec<T> = prop
        .node_map
        .sizes()
        .into_iter()
        .map(|d| if d == 0 { T::zero() } else { T::one() / T::of(d as f64).sqrt() })
        .collect();
    let scale = tape.constant(Tensor::vector(inv_sqrt_deg));
    let xs = tape.mul_rows(x, scale)?;
    let edge_means = tape.segment_mean(xs, &prop.edge_map)?;
    let gathered = tape.segment_sum(edge_means, &prop.node_map)?;
    let ys = tape.mul_rows(gathered, scale)?;
    tape.matmul(ys, weight)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Test hooks for forward passes.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    /// Replace every relevance score by this constant.
    pub alpha_override: Option<f64>,
}

/// Intermediate values of one layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerTrace {
    /// Encoded node features `h_v` (`N×d`).
    pub node_reps: Var,
    /// Disentangle-first hyperedge representations `H` (`M×d`).
    pub edge_reps: Var,
    /// Aggregation-first hyperedge representations `H̃` (`M×d`).
    pub edge_reps_tilde: Var,
    /// Relevance scores actually used for propagation (`M×K`).
    pub alpha: Var,
    /// Relevance-weighted hyperedge representations (`M×d`).
    pub weighted: Var,
    /// Layer output `Z` (`N×d`).
    pub output: Var,
}

pub struct ForwardOutput {
    pub logits: Var,
    /// One entry per layer; empty for the convolution baseline.
    pub layers: Vec<LayerTrace>,
    /// Final hyperedge representations (hypergraph tasks).
    pub edge_output: Option<Var>,
}

/// One disentangling layer.
#[allow(clippy::too_many_arguments)]
pub fn layer_forward<T: Real, R: Rng + ?Sized>(
    tape: &Tape<T>,
    x: Var,
    prop: &Propagation,
    layer: &BoundLayer,
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut R,
    opts: ForwardOptions,
) -> Result<LayerTrace> {
    let k = cfg.factors;
    let x = tape.dropout(x, cfg.dropout, rng, mode == Mode::Train);

    let node_reps = factor_encode(tape, x, layer.enc_weight, layer.enc_bias, cfg.activation)?;
    let edge_reps = tape.segment_mean(node_reps, &prop.edge_map)?;
    let edge_reps_tilde =
        aggregation_first_branch(tape, x, &prop.edge_map, layer.enc_weight, layer.enc_bias, cfg.activation)?;

    let m = tape.value(edge_reps).rows();
    let alpha = match (cfg.variant, opts.alpha_override) {
        (_, Some(c)) => tape.constant(Tensor::full(&[m, k], T::of(c))),
        (Variant::Ablation, None) => tape.constant(Tensor::ones(&[m, k])),
        _ => relevance_scores(tape, edge_reps, edge_reps_tilde, &layer.scorer, T::of(cfg.norm_eps))?,
    };
    let selected = if cfg.variant == Variant::AltBranch { edge_reps_tilde } else { edge_reps };
    let weighted = weighted_hyperedge_reps(tape, selected, alpha, k)?;
    let y = hyperedge_to_node(tape, weighted, alpha, &prop.node_map, k, T::of(cfg.agg_eps))?;

    let mixed = tape.add(tape.scale(y, T::of(cfg.beta)), tape.scale(node_reps, T::of(1.0 - cfg.beta)))?;
    let output = tape.layer_norm(mixed, layer.ln_gamma, layer.ln_beta, T::of(cfg.ln_eps))?;
    Ok(LayerTrace {
        node_reps,
        edge_reps,
        edge_reps_tilde,
        alpha,
        weighted,
        output,
    })
}

/// Concatenates each sample's hyperedge rows (index order) into one vector:
/// `(S·M)×d → S×(M·d)`.
pub fn readout_hyperedge_concat<T: Real>(tape: &Tape<T>, edge_reps: Var, num_edges: usize) -> Result<Var> {
    let shape = tape.shape(edge_reps);
    let (rows, d) = (shape[0], shape[1]);
    if num_edges == 0 || rows % num_edges != 0 {
        return Err(Error::shape(
            "readout_hyperedge_concat",
            format!("{rows} rows are not a multiple of M = {num_edges}"),
        ));
    }
    tape.reshape(edge_reps, vec![rows / num_edges, num_edges * d])
}

/// Full forward pass on `x` (`N×d0`, or `(S·N)×d0` stacked samples).
#[allow(clippy::too_many_arguments)]
pub fn model_forward<T: Real, R: Rng + ?Sized>(
    tape: &Tape<T>,
    x: Var,
    prop: &Propagation,
    params: &BoundParams,
    cfg: &ModelConfig,
    task: Task,
    mode: Mode,
    rng: &mut R,
    opts: ForwardOptions,
) -> Result<ForwardOutput> {
    let mut h = x;
    let mut layers = Vec::new();
    let edge_output = match &params.backbone {
        BoundBackbone::Natural(bound_layers) => {
            for layer in bound_layers {
                let trace = layer_forward(tape, h, prop, layer, cfg, mode, rng, opts)?;
                h = trace.output;
                layers.push(trace);
            }
            layers.last().map(|t| t.weighted)
        }
        BoundBackbone::Hgnn(weights) => {
            for &w in weights {
                let dropped = tape.dropout(h, cfg.dropout, rng, mode == Mode::Train);
                h = tape.relu(hgnn_baseline_layer(tape, dropped, prop, w)?);
            }
            match task {
                Task::HypergraphClassification => Some(tape.segment_mean(h, &prop.edge_map)?),
                Task::NodeClassification => None,
            }
        }
    };
    let features = match task {
        Task::NodeClassification => h,
        Task::HypergraphClassification => {
            let edges = edge_output.ok_or_else(|| Error::InvalidConfig("model has no layers".into()))?;
            readout_hyperedge_concat(tape, edges, prop.num_edges)?
        }
    };
    let logits = linear(tape, features, params.classifier)?;
    Ok(ForwardOutput {
        logits,
        layers,
        edge_output,
    })
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn predict<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best })
        })
        .collect()
}
