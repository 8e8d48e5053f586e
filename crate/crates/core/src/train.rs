//! Optimisation loop, early stopping and evaluation.
//!
//! Node tasks take one full-batch step per epoch. Hypergraph tasks shuffle
//! the training samples every epoch and step once per mini-batch; a batch of
//! `B` samples is stacked into one `(B·N)×d0` matrix over a block-diagonal
//! copy of the topology.
//!
//! Every run draws three independent random streams from its seed: one for
//! initialisation, one for dropout masks and one for the sample order.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split, Task};
use crate::error::{Error, Result};
use crate::loss::{factor_discrimination_loss, task_loss, LossReport};
use crate::metrics::{accuracy, factor_recovery_score, macro_f1, micro_f1, RecoveryScore};
use crate::model::{model_forward, predict, ForwardOptions, Mode, ModelConfig, ModelParams, Propagation, Variant};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMetric {
    Accuracy,
    MacroF1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Samples per step (hypergraph task only).
    pub batch_size: usize,
    /// Epochs without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub selection: SelectionMetric,
    /// Record the relevance scores every this many epochs; 0 disables.
    pub alpha_snapshot_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            lr: 0.01,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 50,
            patience: 30,
            seed: 0,
            selection: SelectionMetric::MacroF1,
            alpha_snapshot_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.weight_decay < 0.0 {
            return bad("weight decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.adam_eps <= 0.0 {
            return bad("Adam epsilon must be positive");
        }
        if self.patience == 0 || self.batch_size == 0 {
            return bad("patience and batch size must be at least 1");
        }
        Ok(())
    }
}

/// First and second moment estimates of Adam.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<Tensor<T>> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Weight decay enters as an L2 term
/// `wd·p` added to the gradient.
pub fn adam_step<T: Real>(
    params: Vec<&mut Tensor<T>>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} params, {} grads, {} moments", params.len(), grads.len(), state.m.len()),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        if p.shape() != g.shape() {
            return Err(Error::shape("adam_step", format!("{:?} vs {:?}", p.shape(), g.shape())));
        }
        let moments = m.data_mut().iter_mut().zip(v.data_mut());
        for ((x, &gx), (mx, vx)) in p.data_mut().iter_mut().zip(g.data()).zip(moments) {
            let grad = gx.to_f64() + cfg.weight_decay * x.to_f64();
            let mi = b1 * mx.to_f64() + (1.0 - b1) * grad;
            let vi = b2 * vx.to_f64() + (1.0 - b2) * grad * grad;
            *mx = T::of(mi);
            *vx = T::of(vi);
            let update = cfg.lr * (mi / c1) / ((vi / c2).sqrt() + cfg.adam_eps);
            *x = T::of(x.to_f64() - update);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub loss: LossReport,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    /// Predicted class for every item (all splits).
    pub predictions: Vec<usize>,
    /// Per-layer relevance scores (`M×K`), averaged over samples for
    /// hypergraph tasks. Empty for the convolution baseline.
    pub alphas: Vec<Tensor<f64>>,
}

impl EvalReport {
    pub fn metric(&self, m: SelectionMetric) -> f64 {
        match m {
            SelectionMetric::Accuracy => self.accuracy,
            SelectionMetric::MacroF1 => self.macro_f1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss of the epoch's steps (with dropout).
    pub train: LossReport,
    pub val: LossReport,
    pub val_metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub val: EvalReport,
    pub test: EvalReport,
    pub curve: Vec<EpochRecord>,
    /// `(epoch, last-layer α)` pairs.
    pub alpha_snapshots: Vec<(usize, Tensor<f64>)>,
    /// Recovery of planted factors by the last layer's α, when known.
    pub recovery: Option<RecoveryScore>,
    pub train_seconds: f64,
    pub seconds_per_epoch: f64,
}

/// Dataset state shared by every forward pass of a run.
struct Prepared<T: Real> {
    task: Task,
    /// Node task: all features. Hypergraph task: per-sample `N×d0` blocks.
    features: Tensor<T>,
    num_nodes: usize,
    num_edges: usize,
    labels: Vec<usize>,
    /// Non-empty hyperedges: the rows used by the discrimination loss.
    live_edges: Vec<usize>,
    props: HashMap<usize, Propagation>,
    hypergraph: crate::hypergraph::Hypergraph,
}

impl<T: Real> Prepared<T> {
    fn new(ds: &Dataset) -> Self {
        let hg = &ds.hypergraph;
        Self {
            task: ds.task,
            features: ds.features.cast(),
            num_nodes: hg.num_nodes(),
            num_edges: hg.num_edges(),
            labels: ds.labels.clone(),
            live_edges: (0..hg.num_edges()).filter(|&e| hg.edge_degree(e) > 0).collect(),
            props: HashMap::new(),
            hypergraph: hg.clone(),
        }
    }

    fn propagation(&mut self, copies: usize) -> Propagation {
        let hg = &self.hypergraph;
        self.props.entry(copies).or_insert_with(|| Propagation::new(hg, copies)).clone()
    }

    /// Input rows, propagation and the item rows/labels for a group of items.
    fn batch(&mut self, items: &[usize]) -> (Tensor<T>, Propagation, Vec<usize>, Vec<usize>) {
        match self.task {
            Task::NodeClassification => {
                let prop = self.propagation(1);
                (self.features.clone(), prop, items.to_vec(), self.labels.clone())
            }
            Task::HypergraphClassification => {
                let (n, d) = (self.num_nodes, self.features.cols());
                let mut data = Vec::with_capacity(items.len() * n * d);
                for &s in items {
                    data.extend_from_slice(&self.features.data()[s * n * d..(s + 1) * n * d]);
                }
                let x = Tensor::matrix(items.len() * n, d, data).expect("batch shape");
                let labels = items.iter().map(|&s| self.labels[s]).collect();
                (x, self.propagation(items.len()), (0..items.len()).collect(), labels)
            }
        }
    }

    fn dis_rows(&self, copies: usize) -> Vec<usize> {
        (0..copies)
            .flat_map(|c| self.live_edges.iter().map(move |&e| c * self.num_edges + e))
            .collect()
    }
}

struct StepOutput<T: Real> {
    loss: LossReport,
    logits: Tensor<T>,
    alphas: Vec<Tensor<f64>>,
    grads: Option<Vec<Tensor<T>>>,
}

#[allow(clippy::too_many_arguments)]
fn run_batch<T: Real>(
    prep: &mut Prepared<T>,
    params: &ModelParams<T>,
    items: &[usize],
    loss_items: Option<&[usize]>,
    mode: Mode,
    rng: &mut ChaCha8Rng,
    want_grads: bool,
) -> Result<StepOutput<T>> {
    let cfg = &params.config;
    let (x, prop, rows, labels) = prep.batch(items);
    let rows = match (prep.task, loss_items) {
        (Task::NodeClassification, Some(li)) => li.to_vec(),
        _ => rows,
    };
    let tape = Tape::<T>::new();
    let bound = params.bind(&tape);
    let xv = tape.constant(x);
    let out = model_forward(&tape, xv, &prop, &bound, cfg, prep.task, mode, rng, ForwardOptions::default())?;
    let task = task_loss(&tape, out.logits, &labels, &rows)?;
    let dis: Option<Var> = if bound.factor_classifiers.is_empty() || prep.live_edges.is_empty() {
        None
    } else {
        let reps: Vec<Var> = out.layers.iter().map(|l| l.edge_reps).collect();
        Some(factor_discrimination_loss(
            &tape,
            &reps,
            &bound.factor_classifiers,
            cfg.factors,
            &prep.dis_rows(prop.copies),
        )?)
    };
    let total = match dis {
        Some(d) => tape.add(task, tape.scale(d, T::of(cfg.lambda)))?,
        None => task,
    };
    let report = LossReport::new(
        tape.value(task).item().to_f64(),
        dis.map_or(0.0, |d| tape.value(d).item().to_f64()),
        cfg.lambda,
    );
    let alphas = out
        .layers
        .iter()
        .map(|l| {
            let a: Tensor<f64> = tape.value(l.alpha).cast();
            average_copies(&a, prop.copies, prop.num_edges)
        })
        .collect();
    let grads = if want_grads {
        let g = tape.backward(total)?;
        Some(
            bound
                .all
                .iter()
                .map(|&v| g.get_or_zeros(v, &tape.shape(v)))
                .collect(),
        )
    } else {
        None
    };
    let logits = tape.value(out.logits).clone();
    Ok(StepOutput {
        loss: report,
        logits,
        alphas,
        grads,
    })
}

/// Mean of the `copies` stacked `M×K` blocks.
fn average_copies(a: &Tensor<f64>, copies: usize, m: usize) -> Tensor<f64> {
    if copies <= 1 {
        return a.clone();
    }
    let k = a.cols();
    let mut out = Tensor::zeros(&[m, k]);
    for c in 0..copies {
        for (o, &v) in out.data_mut().iter_mut().zip(&a.data()[c * m * k..(c + 1) * m * k]) {
            *o += v;
        }
    }
    out.map(|v| v / copies as f64)
}

/// Metrics, losses and relevance scores of `params` on one split.
pub fn evaluate<T: Real>(ds: &Dataset, params: &ModelParams<T>, split: Split, batch_size: usize) -> Result<EvalReport> {
    let mut prep = Prepared::<T>::new(ds);
    evaluate_prepared(&mut prep, ds, params, split, batch_size)
}

fn evaluate_prepared<T: Real>(
    prep: &mut Prepared<T>,
    ds: &Dataset,
    params: &ModelParams<T>,
    split: Split,
    batch_size: usize,
) -> Result<EvalReport> {
    let mask = ds.splits.mask(split);
    let items = ds.splits.indices(split);
    if items.is_empty() {
        return Err(Error::InvalidConfig(format!("split {split:?} is empty")));
    }
    // Dropout is inactive in evaluation, so this stream is never drawn from.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    match ds.task {
        Task::NodeClassification => {
            let out = run_batch(prep, params, &items, Some(&items), Mode::Eval, &mut rng, false)?;
            let predictions = predict(&out.logits);
            Ok(EvalReport {
                loss: out.loss,
                accuracy: accuracy(&predictions, &ds.labels, &mask),
                macro_f1: macro_f1(&predictions, &ds.labels, &mask),
                micro_f1: micro_f1(&predictions, &ds.labels, &mask),
                predictions,
                alphas: out.alphas,
            })
        }
        Task::HypergraphClassification => {
            let mut predictions = vec![0usize; ds.num_items()];
            let (mut task, mut dis) = (0.0, 0.0);
            let mut alpha_sum: Vec<Tensor<f64>> = Vec::new();
            for chunk in items.chunks(batch_size.max(1)) {
                let out = run_batch(prep, params, chunk, None, Mode::Eval, &mut rng, false)?;
                for (&s, p) in chunk.iter().zip(predict(&out.logits)) {
                    predictions[s] = p;
                }
                let w = chunk.len() as f64;
                task += out.loss.task_loss * w;
                dis += out.loss.dis_loss * w;
                if alpha_sum.is_empty() {
                    alpha_sum = out.alphas.iter().map(|a| a.map(|v| v * w)).collect();
                } else {
                    for (acc, a) in alpha_sum.iter_mut().zip(&out.alphas) {
                        for (x, &y) in acc.data_mut().iter_mut().zip(a.data()) {
                            *x += y * w;
                        }
                    }
                }
            }
            let n = items.len() as f64;
            Ok(EvalReport {
                loss: LossReport::new(task / n, dis / n, params.config.lambda),
                accuracy: accuracy(&predictions, &ds.labels, &mask),
                macro_f1: macro_f1(&predictions, &ds.labels, &mask),
                micro_f1: micro_f1(&predictions, &ds.labels, &mask),
                predictions,
                alphas: alpha_sum.into_iter().map(|a| a.map(|v| v / n)).collect(),
            })
        }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Trains a fresh model on `ds` and reports test metrics of the parameters
/// with the best validation score.
///
/// Candidates are ranked by the validation metric, then by lower validation
/// loss. Training stops after `patience` epochs without a better candidate.
pub fn train<T: Real>(ds: &Dataset, model: &ModelConfig, cfg: &TrainConfig) -> Result<(ModelParams<T>, RunResult)> {
    model.validate()?;
    cfg.validate()?;
    ds.validate()?;
    let train_items = ds.splits.indices(Split::Train);
    if train_items.is_empty() {
        return Err(Error::InvalidConfig("empty training split".into()));
    }
    let select_split = if ds.splits.indices(Split::Val).is_empty() {
        Split::Train
    } else {
        Split::Val
    };

    let mut init_rng = stream(cfg.seed, 0);
    let mut dropout_rng = stream(cfg.seed, 1);
    let mut order_rng = stream(cfg.seed, 2);

    let mut params = ModelParams::<T>::init(
        model,
        ds.feature_dim(),
        ds.num_classes,
        ds.task,
        ds.hypergraph.num_edges(),
        &mut init_rng,
    )?;
    let mut adam = AdamState::new(params.tensors());
    let mut prep = Prepared::<T>::new(ds);

    let started = Instant::now();
    let mut best: Option<(f64, f64, usize, ModelParams<T>)> = None;
    let mut curve = Vec::new();
    let mut snapshots = Vec::new();
    let mut since_best = 0;
    let mut epochs_run = 0;

    for epoch in 1..=cfg.epochs {
        epochs_run = epoch;
        let batches: Vec<Vec<usize>> = match ds.task {
            Task::NodeClassification => vec![train_items.clone()],
            Task::HypergraphClassification => {
                let mut order = train_items.clone();
                order.shuffle(&mut order_rng);
                order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect()
            }
        };
        let (mut task_sum, mut dis_sum, mut weight) = (0.0, 0.0, 0.0);
        for batch in &batches {
            let out = run_batch(&mut prep, &params, batch, Some(batch), Mode::Train, &mut dropout_rng, true)?;
            if !out.loss.is_finite() {
                return Err(Error::DivergenceDetected {
                    epoch,
                    loss: out.loss.total,
                });
            }
            adam_step(params.tensors_mut(), &out.grads.expect("requested"), &mut adam, cfg)?;
            let w = batch.len() as f64;
            task_sum += out.loss.task_loss * w;
            dis_sum += out.loss.dis_loss * w;
            weight += w;
        }
        let train_loss = LossReport::new(task_sum / weight, dis_sum / weight, model.lambda);

        let val = evaluate_prepared(&mut prep, ds, &params, select_split, cfg.batch_size)?;
        if !val.loss.is_finite() {
            return Err(Error::DivergenceDetected {
                epoch,
                loss: val.loss.total,
            });
        }
        let metric = val.metric(cfg.selection);
        curve.push(EpochRecord {
            epoch,
            train: train_loss,
            val: val.loss,
            val_metric: metric,
        });
        if cfg.alpha_snapshot_every > 0 && epoch % cfg.alpha_snapshot_every == 0 {
            if let Some(a) = val.alphas.last() {
                snapshots.push((epoch, a.clone()));
            }
        }
        let improved = best
            .as_ref()
            .is_none_or(|(m, l, _, _)| metric > *m || (metric == *m && val.loss.total < *l));
        if improved {
            best = Some((metric, val.loss.total, epoch, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let train_seconds = started.elapsed().as_secs_f64();

    let (_, _, best_epoch, best_params) = best.expect("at least one epoch ran");
    let val = evaluate_prepared(&mut prep, ds, &best_params, select_split, cfg.batch_size)?;
    let test = evaluate_prepared(&mut prep, ds, &best_params, Split::Test, cfg.batch_size)?;
    let recovery = match (&ds.planted, test.alphas.last()) {
        (Some(planted), Some(alpha)) if model.variant != Variant::Hgnn => Some(factor_recovery_score(
            alpha,
            &planted.edge_factor,
            planted.num_factors,
            &prep.live_edges,
            cfg.seed,
        )?),
        _ => None,
    };
    Ok((
        best_params,
        RunResult {
            best_epoch,
            epochs_run,
            val,
            test,
            curve,
            alpha_snapshots: snapshots,
            recovery,
            train_seconds,
            seconds_per_epoch: train_seconds / epochs_run as f64,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_cfg(lr: f64) -> TrainConfig {
        TrainConfig {
            lr,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = Tensor::<f64>::vector(vec![1.0, -2.0]);
        let mut st = AdamState::new([&p]);
        adam_step(vec![&mut p], &[Tensor::zeros(&[2])], &mut st, &quad_cfg(0.1)).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_is_bounded_by_lr() {
        let mut w = Tensor::<f64>::vector(vec![1.0]);
        let mut st = AdamState::new([&w]);
        let grad = Tensor::vector(vec![2.0]);
        adam_step(vec![&mut w], &[grad], &mut st, &quad_cfg(0.1)).unwrap();
        let delta = 1.0 - w.data()[0];
        assert!(delta > 0.0 && delta <= 0.1 * (1.0 + 1e-6), "{delta}");
    }

    #[test]
    fn converges_on_a_quadratic() {
        // f(w) = (w0 - 3)² + 4 (w1 + 1)², minimum at (3, -1).
        let mut w = Tensor::<f64>::vector(vec![0.0, 0.0]);
        let mut st = AdamState::new([&w]);
        let grad = |w: &Tensor<f64>| Tensor::vector(vec![2.0 * (w.data()[0] - 3.0), 8.0 * (w.data()[1] + 1.0)]);
        for _ in 0..200 {
            let g = grad(&w);
            adam_step(vec![&mut w], &[g], &mut st, &quad_cfg(0.3)).unwrap();
        }
        let g = grad(&w);
        let norm = g.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "gradient norm {norm}");
    }

    #[test]
    fn weight_decay_shrinks_without_gradient() {
        let mut p = Tensor::<f64>::vector(vec![1.0]);
        let mut st = AdamState::new([&p]);
        let cfg = TrainConfig {
            weight_decay: 1e-2,
            ..quad_cfg(0.1)
        };
        adam_step(vec![&mut p], &[Tensor::zeros(&[1])], &mut st, &cfg).unwrap();
        assert!(p.data()[0] < 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { patience: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
