//! Central finite differences, the independent oracle for tape gradients,
//! and the suite that checks every tape primitive and the full model losses
//! against it.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Task;
use crate::error::Result;
use crate::hypergraph::Hypergraph;
use crate::loss::{factor_discrimination_loss, task_loss};
use crate::model::{
    hgnn_baseline_layer, model_forward, ForwardOptions, Mode, ModelConfig, ModelParams, Propagation, Variant,
};
use crate::segment::SegmentMap;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Step used by the gradient checks.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative error threshold the gradient checks must meet.
pub const MAX_REL_ERROR: f64 = 1e-4;

/// Entries whose magnitude falls below this floor are compared absolutely
/// against it, so that near-zero gradients are not judged on rounding noise.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate `i`.
pub fn finite_difference_gradient<F>(f: F, x: &Tensor<f64>, h: f64) -> Tensor<f64>
where
    F: Fn(&Tensor<f64>) -> f64,
{
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Largest `|a - b| / max(|a|, |b|, REL_ERROR_FLOOR)` over all entries.
pub fn max_relative_error(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "max_relative_error on different shapes");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(REL_ERROR_FLOOR))
        .fold(0.0, f64::max)
}

/// Max relative error between tape gradients of `build` and finite
/// differences, over every input. `build` must return a scalar.
pub fn check_gradients<F>(build: F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[i], input.shape());
        let numeric = finite_difference_gradient(
            |probe| {
                let t = Tape::new();
                let vs: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, x)| t.leaf(if j == i { probe.clone() } else { x.clone() }))
                    .collect();
                let v = build(&t, &vs).expect("forward succeeded once");
                let value = t.value(v).item();
                value
            },
            input,
            DEFAULT_STEP,
        );
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    /// Worst relative error over all seeds.
    pub max_rel_error: f64,
    pub passed: bool,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

/// Values in `±[lo, hi]`, away from zero (for kinks at the origin).
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let mut t = uniform(rng, shape, lo, hi);
    for v in t.data_mut() {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Scalar `Σ out ⊙ R` for a fixed pseudo-random `R`, so that every output
/// entry reaches the gradient with a distinct weight.
fn contract(tape: &Tape<f64>, out: Var) -> Result<Var> {
    let shape = tape.shape(out);
    let mut rng = ChaCha8Rng::seed_from_u64(shape.iter().product::<usize>() as u64);
    let r = tape.constant(uniform(&mut rng, &shape, -1.0, 1.0));
    Ok(tape.sum_all(tape.mul(out, r)?))
}

fn random_map(rng: &mut ChaCha8Rng, rows: usize, segments: usize) -> Arc<SegmentMap> {
    let groups: Vec<Vec<usize>> = (0..segments)
        .map(|s| {
            if s == segments - 1 {
                // One empty segment exercises the empty-segment path.
                Vec::new()
            } else {
                let k = rng.gen_range(1..=rows.min(4));
                rand::seq::index::sample(rng, rows, k).into_vec()
            }
        })
        .collect();
    Arc::new(SegmentMap::from_groups(rows, &groups).expect("valid groups"))
}

type Build = Box<dyn Fn(&Tape<f64>, &[Var]) -> Result<Var>>;

/// Every differentiable tape primitive on a random instance.
fn primitive_cases(seed: u64) -> Vec<(&'static str, Build, Vec<Tensor<f64>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = uniform(&mut rng, &[4, 3], -1.0, 1.0);
    let b = uniform(&mut rng, &[4, 3], -1.0, 1.0);
    let w = uniform(&mut rng, &[3, 5], -1.0, 1.0);
    let row = uniform(&mut rng, &[3], -1.0, 1.0);
    let col = uniform(&mut rng, &[4], 0.5, 2.0);
    let pos = uniform(&mut rng, &[4, 3], 0.5, 2.0);
    let wide = uniform(&mut rng, &[4, 6], -2.0, 2.0);
    let ln_x = uniform(&mut rng, &[4, 6], -2.0, 2.0);
    let gamma = uniform(&mut rng, &[6], 0.5, 1.5);
    let beta = uniform(&mut rng, &[6], -0.5, 0.5);
    let map = random_map(&mut rng, 4, 3);
    let map_b = Arc::clone(&map);
    let map_c = Arc::clone(&map);
    let targets: Vec<usize> = (0..4).map(|_| rng.gen_range(0..3)).collect();
    let kinked = away_from_zero(&mut rng, &[4, 3], 0.1, 1.0);
    let drop_seed = rng.gen::<u64>();

    let mut cases: Vec<(&'static str, Build, Vec<Tensor<f64>>)> = vec![
        ("matmul", Box::new(|t, v| contract(t, t.matmul(v[0], v[1])?)), vec![a.clone(), w]),
        ("add", Box::new(|t, v| contract(t, t.add(v[0], v[1])?)), vec![a.clone(), b.clone()]),
        ("add_row_broadcast", Box::new(|t, v| contract(t, t.add(v[0], v[1])?)), vec![a.clone(), row]),
        ("sub", Box::new(|t, v| contract(t, t.sub(v[0], v[1])?)), vec![a.clone(), b.clone()]),
        ("mul", Box::new(|t, v| contract(t, t.mul(v[0], v[1])?)), vec![a.clone(), b.clone()]),
        ("scale", Box::new(|t, v| contract(t, t.scale(v[0], -1.7))), vec![a.clone()]),
        ("sigmoid", Box::new(|t, v| contract(t, t.sigmoid(v[0]))), vec![wide.clone()]),
        ("tanh", Box::new(|t, v| contract(t, t.tanh(v[0]))), vec![wide.clone()]),
        ("relu", Box::new(|t, v| contract(t, t.relu(v[0]))), vec![kinked]),
        ("l2_normalize_rows", Box::new(|t, v| contract(t, t.l2_normalize_rows(v[0], 1e-12))), vec![wide.clone()]),
        (
            "layer_norm",
            Box::new(|t, v| contract(t, t.layer_norm(v[0], v[1], v[2], 1e-5)?)),
            vec![ln_x, gamma, beta],
        ),
        (
            "concat_cols",
            Box::new(|t, v| contract(t, t.concat_cols(&[v[0], v[1]])?)),
            vec![a.clone(), wide.clone()],
        ),
        ("slice_cols", Box::new(|t, v| contract(t, t.slice_cols(v[0], 1, 4)?)), vec![wide.clone()]),
        (
            "segment_mean",
            Box::new(move |t, v| contract(t, t.segment_mean(v[0], &map)?)),
            vec![a.clone()],
        ),
        (
            "segment_sum",
            Box::new(move |t, v| contract(t, t.segment_sum(v[0], &map_b)?)),
            vec![a.clone()],
        ),
        (
            "segment_weighted_sum",
            Box::new(move |t, v| {
                let (num, den) = t.segment_weighted_sum(v[0], v[1], &map_c)?;
                let a = contract(t, num)?;
                let b = contract(t, den)?;
                t.add(a, b)
            }),
            vec![a.clone(), col.clone()],
        ),
        ("mul_rows", Box::new(|t, v| contract(t, t.mul_rows(v[0], v[1])?)), vec![a.clone(), col]),
        ("recip_clamp", Box::new(|t, v| contract(t, t.recip_clamp(v[0], 1e-3))), vec![pos]),
        ("sum_cols", Box::new(|t, v| contract(t, t.sum_cols(v[0]))), vec![a.clone()]),
        ("sum_all", Box::new(|t, v| Ok(t.scale(t.sum_all(v[0]), 0.3))), vec![a.clone()]),
        ("log_softmax", Box::new(|t, v| contract(t, t.log_softmax(v[0]))), vec![wide.clone()]),
        (
            "cross_entropy",
            Box::new(move |t, v| t.cross_entropy(v[0], &targets)),
            vec![a.clone()],
        ),
        ("select_rows", Box::new(|t, v| contract(t, t.select_rows(v[0], &[3, 0, 3])?)), vec![a.clone()]),
        ("reshape", Box::new(|t, v| contract(t, t.reshape(v[0], vec![2, 6])?)), vec![a.clone()]),
        (
            "dropout",
            Box::new(move |t, v| {
                let mut r = ChaCha8Rng::seed_from_u64(drop_seed);
                contract(t, t.dropout(v[0], 0.5, &mut r, true))
            }),
            vec![a],
        ),
    ];

    let hg = small_hypergraph(&mut rng, 5, 3);
    let prop = Propagation::new(&hg, 1);
    let x = uniform(&mut rng, &[5, 3], -1.0, 1.0);
    let hw = uniform(&mut rng, &[3, 4], -1.0, 1.0);
    cases.push((
        "hgnn_baseline_layer",
        Box::new(move |t, v| contract(t, hgnn_baseline_layer(t, v[0], &prop, v[1])?)),
        vec![x, hw],
    ));
    cases
}

/// Every hyperedge gets 2 or 3 distinct members; every node is covered.
fn small_hypergraph(rng: &mut ChaCha8Rng, nodes: usize, edges: usize) -> Hypergraph {
    let mut pairs = std::collections::BTreeSet::new();
    for e in 0..edges {
        let k = rng.gen_range(2..=3.min(nodes));
        for v in rand::seq::index::sample(rng, nodes, k) {
            pairs.insert((v, e));
        }
    }
    for v in 0..nodes {
        if !pairs.iter().any(|&(u, _)| u == v) {
            pairs.insert((v, rng.gen_range(0..edges)));
        }
    }
    Hypergraph::new(pairs.into_iter().collect(), nodes, edges).expect("valid pairs")
}

/// Total loss (task + λ·discrimination) of a randomly initialised model, as a
/// function of each parameter tensor in turn.
fn model_loss_error(seed: u64, variant: Variant, task: Task) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nodes, edges, d0, classes) = (6, 3, 5, 3);
    let samples = if task == Task::HypergraphClassification { 2 } else { 1 };
    let hg = small_hypergraph(&mut rng, nodes, edges);
    let cfg = ModelConfig {
        factors: 2,
        hidden: 8,
        lambda: 0.01,
        variant,
        ..ModelConfig::default()
    };
    let base = ModelParams::<f64>::init(&cfg, d0, classes, task, edges, &mut rng)?;
    // Perturb every tensor so that no parameter sits at a special value.
    let mut params = base.clone();
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    let x = uniform(&mut rng, &[samples * nodes, d0], -1.5, 1.5);
    let items = if task == Task::NodeClassification { nodes } else { samples };
    let labels: Vec<usize> = (0..items).map(|_| rng.gen_range(0..classes)).collect();
    let rows: Vec<usize> = (0..items).collect();
    let prop = Propagation::new(&hg, samples);
    let dis_rows: Vec<usize> = (0..samples * edges).collect();
    let drop_seed = rng.gen::<u64>();
    let tensors: Vec<Tensor<f64>> = params.tensors().into_iter().cloned().collect();

    let build = |t: &Tape<f64>, vs: &[Var]| -> Result<Var> {
        let mut p = params.clone();
        for (dst, &v) in p.tensors_mut().into_iter().zip(vs) {
            *dst = t.value(v).clone();
        }
        // Rebind so that the leaves below are exactly `vs`.
        let bound = {
            let fresh = p.bind(t);
            let mut b = fresh.clone();
            remap(&mut b, &fresh.all, vs);
            b
        };
        let xv = t.constant(x.clone());
        let mut r = ChaCha8Rng::seed_from_u64(drop_seed);
        let out = model_forward(t, xv, &prop, &bound, &cfg, task, Mode::Train, &mut r, ForwardOptions::default())?;
        let loss = task_loss(t, out.logits, &labels, &rows)?;
        if bound.factor_classifiers.is_empty() {
            return Ok(loss);
        }
        let reps: Vec<Var> = out.layers.iter().map(|l| l.edge_reps).collect();
        let dis = factor_discrimination_loss(t, &reps, &bound.factor_classifiers, cfg.factors, &dis_rows)?;
        t.add(loss, t.scale(dis, cfg.lambda))
    };
    check_gradients(build, &tensors)
}

/// Points every handle of `bound` that equals `from[i]` at `to[i]`.
fn remap(bound: &mut crate::model::BoundParams, from: &[Var], to: &[Var]) {
    let map = |v: &mut Var| {
        if let Some(i) = from.iter().position(|f| f == v) {
            *v = to[i];
        }
    };
    match &mut bound.backbone {
        crate::model::BoundBackbone::Natural(layers) => {
            for l in layers {
                map(&mut l.enc_weight);
                map(&mut l.enc_bias);
                l.scorer.iter_mut().for_each(map);
                map(&mut l.ln_gamma);
                map(&mut l.ln_beta);
            }
        }
        crate::model::BoundBackbone::Hgnn(ws) => ws.iter_mut().for_each(map),
    }
    map(&mut bound.classifier.weight);
    map(&mut bound.classifier.bias);
    for fc in &mut bound.factor_classifiers {
        map(&mut fc.weight);
        map(&mut fc.bias);
    }
    bound.all = to.to_vec();
}

/// Runs every primitive check and the end-to-end model checks over `seeds`.
pub fn run_suite(seeds: std::ops::Range<u64>) -> Result<Vec<CheckResult>> {
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut record = |name: &str, err: f64| match worst.iter_mut().find(|(n, _)| n == name) {
        Some((_, w)) => *w = w.max(err),
        None => worst.push((name.to_string(), err)),
    };
    for seed in seeds {
        for (name, build, inputs) in primitive_cases(seed) {
            record(name, check_gradients(build, &inputs)?);
        }
        record("model_full_node", model_loss_error(seed, Variant::Full, Task::NodeClassification)?);
        record("model_alt_branch_node", model_loss_error(seed, Variant::AltBranch, Task::NodeClassification)?);
        record("model_full_hypergraph", model_loss_error(seed, Variant::Full, Task::HypergraphClassification)?);
    }
    Ok(worst
        .into_iter()
        .map(|(name, e)| CheckResult {
            name,
            max_rel_error: e,
            passed: e < MAX_REL_ERROR,
        })
        .collect())
}
