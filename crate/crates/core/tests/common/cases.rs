//! Seeded instances of each property, returning the observed error so that
//! both the test suites and the acceptance harness can use them.

#![allow(dead_code)]

use std::sync::Arc;

use nhnn::dataset::Task;
use nhnn::hypergraph::Hypergraph;
use nhnn::loss::{factor_discrimination_loss, task_loss};
use nhnn::metrics;
use nhnn::model::{
    aggregation_first_branch, disentangle_first_branch, factor_encode, hgnn_baseline_layer, hyperedge_to_node,
    model_forward, relevance_scores, weighted_hyperedge_reps, Activation, Backbone, BoundLinear, ForwardOptions,
    Mode, ModelConfig, ModelParams, Propagation, Variant,
};
use nhnn::segment::SegmentMap;
use nhnn::tape::{Tape, Var};
use nhnn::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn scalar_diff(a: f64, b: f64) -> f64 {
    (a - b).abs()
}

fn value(tape: &Tape<f64>, v: Var) -> Mat {
    to_mat(&tape.value(v))
}

/// Library kernel vs loop oracle, one entry per compared quantity, on a random
/// instance with `nodes ≤ 50` and `edges ≤ 20`.
pub fn oracle_errors(seed: u64, nodes: usize, edges: usize) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let hg = random_hypergraph(&mut r, nodes, edges);
    let groups = members(&hg);
    let inc = incident(&hg);
    let k = r.gen_range(1..=3);
    let d = k * r.gen_range(1..=4);
    let x = random_mat(&mut r, nodes, d, -2.0, 2.0);
    let mut out = Vec::new();
    let tape = Tape::<f64>::new();
    let xv = tape.constant(to_tensor(&x));

    let mean = tape.segment_mean(xv, hg.edge_map()).unwrap();
    out.push(("segment_mean", max_diff(&value(&tape, mean), &group_mean(&x, &groups))));

    let w: Vec<f64> = (0..nodes).map(|_| r.gen_range(0.0..2.0)).collect();
    let (num, den) = tape
        .segment_weighted_sum(xv, tape.constant(Tensor::vector(w.clone())), hg.edge_map())
        .unwrap();
    let (onum, oden) = group_weighted_sum(&x, &w, &groups);
    let oden: Mat = oden.into_iter().map(|v| vec![v]).collect();
    out.push((
        "segment_weighted_sum",
        max_diff(&value(&tape, num), &onum).max(max_diff(&value(&tape, den), &oden)),
    ));

    // Relevance scores on random hyperedge reps; some rows are zero.
    let mut h = random_mat(&mut r, edges, d, -1.0, 1.0);
    let ht = random_mat(&mut r, edges, d, -1.0, 1.0);
    h[0] = vec![0.0; d];
    let c = d / k;
    let scorers: Vec<Mat> = (0..k).map(|_| random_mat(&mut r, c, c, -1.5, 1.5)).collect();
    let sv: Vec<Var> = scorers.iter().map(|s| tape.constant(to_tensor(s))).collect();
    let hv = tape.constant(to_tensor(&h));
    let alpha = relevance_scores(&tape, hv, tape.constant(to_tensor(&ht)), &sv, 1e-12).unwrap();
    let oalpha = relevance(&h, &ht, &scorers, 1e-12);
    out.push(("relevance_scores", max_diff(&value(&tape, alpha), &oalpha)));

    let hw = weighted_hyperedge_reps(&tape, hv, alpha, k).unwrap();
    let y = hyperedge_to_node(&tape, hw, alpha, hg.node_map(), k, 1e-12).unwrap();
    out.push(("hyperedge_to_node", max_diff(&value(&tape, y), &edge_to_node(&h, &oalpha, &inc, 1e-12))));

    let wm = random_mat(&mut r, d, 3, -1.0, 1.0);
    let prop = Propagation::new(&hg, 1);
    let conv = hgnn_baseline_layer(&tape, xv, &prop, tape.constant(to_tensor(&wm))).unwrap();
    out.push(("hgnn_baseline_layer", max_diff(&value(&tape, conv), &hgnn_dense(&hg, &x, &wm))));

    // Task loss on a random subset of rows.
    let classes = r.gen_range(2..=5);
    let logits = random_mat(&mut r, nodes, classes, -3.0, 3.0);
    let labels: Vec<usize> = (0..nodes).map(|_| r.gen_range(0..classes)).collect();
    let mut rows: Vec<usize> = (0..nodes).filter(|_| r.gen_bool(0.6)).collect();
    if rows.is_empty() {
        rows.push(0);
    }
    let lv = tape.constant(to_tensor(&logits));
    let loss = task_loss(&tape, lv, &labels, &rows).unwrap();
    let picked: Mat = rows.iter().map(|&i| logits[i].clone()).collect();
    let targets: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
    out.push(("task_loss", scalar_diff(tape.value(loss).item(), cross_entropy(&picked, &targets))));

    // Discrimination loss over two layers on the non-empty hyperedges.
    let live: Vec<usize> = (0..edges).filter(|&e| !groups[e].is_empty()).collect();
    if !live.is_empty() && k > 1 {
        let layers: Vec<Mat> = (0..2).map(|_| random_mat(&mut r, edges, d, -1.0, 1.0)).collect();
        let clfs: Vec<(Mat, Vec<f64>)> = (0..2)
            .map(|_| (random_mat(&mut r, c, k, -1.0, 1.0), random_mat(&mut r, 1, k, -0.5, 0.5).remove(0)))
            .collect();
        let reps: Vec<Var> = layers.iter().map(|l| tape.constant(to_tensor(l))).collect();
        let bound: Vec<BoundLinear> = clfs
            .iter()
            .map(|(w, b)| BoundLinear {
                weight: tape.constant(to_tensor(w)),
                bias: tape.constant(Tensor::vector(b.clone())),
            })
            .collect();
        let dis = factor_discrimination_loss(&tape, &reps, &bound, k, &live).unwrap();
        let mut total = 0.0;
        for (l, (w, b)) in layers.iter().zip(&clfs) {
            for f in 0..k {
                let chunk: Mat = live.iter().map(|&e| l[e][f * c..(f + 1) * c].to_vec()).collect();
                let mut lg = matmul(&chunk, w);
                for row in &mut lg {
                    for (z, bb) in row.iter_mut().zip(b) {
                        *z += bb;
                    }
                }
                total += cross_entropy(&lg, &vec![f; live.len()]);
            }
        }
        let oracle = total / (2 * k) as f64;
        out.push(("factor_discrimination_loss", scalar_diff(tape.value(dis).item(), oracle)));
    }

    // Classification metrics.
    let preds: Vec<usize> = (0..nodes).map(|_| r.gen_range(0..classes)).collect();
    let mask: Vec<bool> = (0..nodes).map(|_| r.gen_bool(0.7)).collect();
    out.push(("accuracy", scalar_diff(metrics::accuracy(&preds, &labels, &mask), accuracy(&preds, &labels, &mask))));
    out.push(("macro_f1", scalar_diff(metrics::macro_f1(&preds, &labels, &mask), macro_f1(&preds, &labels, &mask))));
    out.push(("micro_f1", scalar_diff(metrics::micro_f1(&preds, &labels, &mask), micro_f1(&preds, &labels, &mask))));

    // Relevance analyses on the oracle α.
    let at = to_tensor(&oalpha);
    let report = metrics::pearson_factor_correlation(&at);
    let mut perr: f64 = 0.0;
    for i in 0..k {
        for j in 0..k {
            let ci: Vec<f64> = oalpha.iter().map(|row| row[i]).collect();
            let cj: Vec<f64> = oalpha.iter().map(|row| row[j]).collect();
            let expect = if i == j { 1.0 } else { pearson(&ci, &cj) };
            perr = perr.max((report.matrix.at(i, j) - expect).abs());
        }
    }
    out.push(("pearson_factor_correlation", perr));

    let sim = metrics::relevance_similarity_matrix(&at);
    let osim: Mat = oalpha.iter().map(|a| oalpha.iter().map(|b| similarity(a, b)).collect()).collect();
    out.push(("relevance_similarity", max_diff(&to_mat(&sim), &osim)));

    let mut ids: Vec<usize> = (0..edges).collect();
    ids.shuffle(&mut r);
    let cut = r.gen_range(1..=edges);
    let mut clusters = vec![ids[..cut].to_vec()];
    if cut < edges {
        clusters.push(ids[cut..].to_vec());
    }
    let cs = metrics::cluster_similarity(&clusters, &at).unwrap();
    out.push(("cluster_similarity", max_diff(&to_mat(&cs), &cluster_similarity(&clusters, &oalpha))));

    // Coarse scores force ties.
    let scores: Vec<f64> = (0..nodes).map(|_| f64::from(r.gen_range(0..5u8))).collect();
    let pos: Vec<bool> = (0..nodes).map(|_| r.gen_bool(0.4)).collect();
    let auc_err = match (metrics::roc_auc(&scores, &pos), auc_pairs(&scores, &pos)) {
        (Some(a), Some(b)) => (a - b).abs(),
        (None, None) => 0.0,
        _ => f64::INFINITY,
    };
    out.push(("roc_auc", auc_err));

    let la: Vec<usize> = (0..nodes).map(|_| r.gen_range(0..3)).collect();
    let lb: Vec<usize> = (0..nodes).map(|_| r.gen_range(0..4)).collect();
    out.push(("adjusted_rand_index", scalar_diff(metrics::adjusted_rand_index(&la, &lb), ari_pairs(&la, &lb))));
    out
}

/// Ways in which the two branches must agree.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Degenerate {
    /// Every hyperedge has one member.
    Singleton,
    /// Members of a hyperedge share one feature vector.
    ConstantFeatures,
    /// Identity activation.
    Linear,
}

/// Max difference between the aggregation-first and disentangle-first
/// hyperedge representations on a degenerate instance.
pub fn naturality_error(seed: u64, kind: Degenerate) -> f64 {
    let mut r = rng(seed);
    let nodes = r.gen_range(4..30);
    let k = r.gen_range(1..=3);
    let d0 = r.gen_range(2..8);
    let d = k * r.gen_range(1..=4);
    let (hg, x) = match kind {
        Degenerate::Singleton => {
            let edges = r.gen_range(1..=nodes);
            let pairs = (0..edges).map(|e| (r.gen_range(0..nodes), e)).collect();
            (Hypergraph::new(pairs, nodes, edges).unwrap(), random_mat(&mut r, nodes, d0, -2.0, 2.0))
        }
        Degenerate::ConstantFeatures => {
            // Nodes sharing a colour share features; hyperedges stay within a colour.
            let colours = r.gen_range(1..=4);
            let palette = random_mat(&mut r, colours, d0, -2.0, 2.0);
            let colour: Vec<usize> = (0..nodes).map(|_| r.gen_range(0..colours)).collect();
            let edges = r.gen_range(1..12);
            let mut pairs = Vec::new();
            for e in 0..edges {
                let c = colour[r.gen_range(0..nodes)];
                let pool: Vec<usize> = (0..nodes).filter(|&v| colour[v] == c).collect();
                let take = r.gen_range(1..=pool.len());
                pairs.extend(pool.choose_multiple(&mut r, take).map(|&v| (v, e)));
            }
            let x = colour.iter().map(|&c| palette[c].clone()).collect();
            (Hypergraph::new(pairs, nodes, edges).unwrap(), x)
        }
        Degenerate::Linear => {
            let edges = r.gen_range(1..12);
            let mut pairs = Vec::new();
            for e in 0..edges {
                let take = r.gen_range(1..=nodes.min(6));
                pairs.extend(rand::seq::index::sample(&mut r, nodes, take).into_iter().map(|v| (v, e)));
            }
            (Hypergraph::new(pairs, nodes, edges).unwrap(), random_mat(&mut r, nodes, d0, -2.0, 2.0))
        }
    };
    let activation = if kind == Degenerate::Linear { Activation::Linear } else { Activation::Tanh };
    let tape = Tape::<f64>::new();
    let xv = tape.constant(to_tensor(&x));
    let w = tape.constant(to_tensor(&random_mat(&mut r, d0, d, -1.0, 1.0)));
    let b = tape.constant(Tensor::vector(random_mat(&mut r, 1, d, -0.5, 0.5).remove(0)));
    let agg = aggregation_first_branch(&tape, xv, hg.edge_map(), w, b, activation).unwrap();
    let dis = disentangle_first_branch(&tape, xv, hg.edge_map(), w, b, activation).unwrap();
    max_diff(&value(&tape, agg), &value(&tape, dis))
}

fn planted_like(seed: u64, task: Task) -> (Hypergraph, Mat, usize) {
    let mut r = rng(seed);
    let nodes = r.gen_range(5..25);
    let edges = r.gen_range(2..10);
    let hg = random_hypergraph(&mut r, nodes, edges);
    let samples = if task == Task::HypergraphClassification { 3 } else { 1 };
    (hg, random_mat(&mut r, samples * nodes, 6, -1.5, 1.5), samples)
}

fn forward_values(
    hg: &Hypergraph,
    x: &Mat,
    samples: usize,
    params: &ModelParams<f64>,
    cfg: &ModelConfig,
    task: Task,
    opts: ForwardOptions,
) -> (Mat, Vec<Mat>) {
    let tape = Tape::<f64>::new();
    let bound = params.bind(&tape);
    let xv = tape.constant(to_tensor(x));
    let prop = Propagation::new(hg, samples);
    let out = model_forward(&tape, xv, &prop, &bound, cfg, task, Mode::Eval, &mut rng(0), opts).unwrap();
    let layers = out.layers.iter().map(|l| value(&tape, l.output)).collect();
    (value(&tape, out.logits), layers)
}

/// Full variant with α fixed to one vs the ablation variant, same parameters.
pub fn ablation_error(seed: u64, task: Task) -> f64 {
    let (hg, x, samples) = planted_like(seed, task);
    let full = ModelConfig {
        factors: 2,
        hidden: 8,
        ..ModelConfig::default()
    };
    let ablation = ModelConfig {
        variant: Variant::Ablation,
        ..full.clone()
    };
    let params = ModelParams::<f64>::init(&full, 6, 3, task, hg.num_edges(), &mut rng(seed ^ 0xab)).unwrap();
    let fixed = ForwardOptions { alpha_override: Some(1.0) };
    let (la, layers_a) = forward_values(&hg, &x, samples, &params, &full, task, fixed);
    let (lb, layers_b) = forward_values(&hg, &x, samples, &params, &ablation, task, ForwardOptions::default());
    layers_a
        .iter()
        .zip(&layers_b)
        .map(|(a, b)| max_diff(a, b))
        .fold(max_diff(&la, &lb), f64::max)
}

/// One chunked encoder vs K block encoders; exact equality expected.
pub fn chunk_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let k = r.gen_range(1..=4);
    let cfg = ModelConfig {
        factors: k,
        hidden: k * r.gen_range(1..=5),
        layers: 1,
        ..ModelConfig::default()
    };
    let d0 = r.gen_range(1..10);
    let params = ModelParams::<f64>::init(&cfg, d0, 2, Task::NodeClassification, 3, &mut r).unwrap();
    let Backbone::Natural(layers) = &params.backbone else { unreachable!() };
    let enc = &layers[0].encoder;
    let rows = r.gen_range(1..20);
    let x = random_mat(&mut r, rows, d0, -2.0, 2.0);
    let tape = Tape::<f64>::new();
    let xv = tape.constant(to_tensor(&x));
    let whole = factor_encode(
        &tape,
        xv,
        tape.constant(enc.weight.clone()),
        tape.constant(enc.bias.clone()),
        Activation::Tanh,
    )
    .unwrap();
    let whole = value(&tape, whole);
    let c = cfg.chunk_width();
    let mut err: f64 = 0.0;
    for f in 0..k {
        let block = enc.block(f);
        let part = factor_encode(
            &tape,
            xv,
            tape.constant(block.weight),
            tape.constant(block.bias),
            Activation::Tanh,
        )
        .unwrap();
        let part = value(&tape, part);
        let slice: Mat = whole.iter().map(|row| row[f * c..(f + 1) * c].to_vec()).collect();
        err = err.max(max_diff(&part, &slice));
    }
    err
}

/// Relabels nodes and hyperedges at random; returns the largest mismatch
/// between permuted original outputs and outputs on the relabelled input.
pub fn permutation_error(seed: u64, variant: Variant) -> f64 {
    let (hg, x, _) = planted_like(seed, Task::NodeClassification);
    let mut r = rng(seed ^ 0x5eed);
    let (n, m) = (hg.num_nodes(), hg.num_edges());
    let mut np: Vec<usize> = (0..n).collect();
    let mut ep: Vec<usize> = (0..m).collect();
    np.shuffle(&mut r);
    ep.shuffle(&mut r);
    let phg = hg.permuted(&np, &ep).unwrap();
    let mut px = vec![Vec::new(); n];
    for v in 0..n {
        px[np[v]] = x[v].clone();
    }
    let cfg = ModelConfig {
        factors: 2,
        hidden: 8,
        variant,
        ..ModelConfig::default()
    };
    let params = ModelParams::<f64>::init(&cfg, 6, 3, Task::NodeClassification, m, &mut r).unwrap();
    let run = |g: &Hypergraph, feats: &Mat| {
        let tape = Tape::<f64>::new();
        let bound = params.bind(&tape);
        let prop = Propagation::new(g, 1);
        let xv = tape.constant(to_tensor(feats));
        let out = model_forward(
            &tape,
            xv,
            &prop,
            &bound,
            &cfg,
            Task::NodeClassification,
            Mode::Eval,
            &mut rng(0),
            ForwardOptions::default(),
        )
        .unwrap();
        let alphas: Vec<Mat> = out.layers.iter().map(|l| value(&tape, l.alpha)).collect();
        (value(&tape, out.logits), alphas)
    };
    let (logits, alphas) = run(&hg, &x);
    let (plogits, palphas) = run(&phg, &px);
    let mut err: f64 = 0.0;
    for v in 0..n {
        err = err.max(max_diff(&vec![logits[v].clone()], &vec![plogits[np[v]].clone()]));
    }
    for (a, pa) in alphas.iter().zip(&palphas) {
        for e in 0..m {
            err = err.max(max_diff(&vec![a[e].clone()], &vec![pa[ep[e]].clone()]));
        }
    }
    err
}

/// Segment map over `rows` rows for direct kernel checks.
pub fn segment_map(rows: usize, groups: &[Vec<usize>]) -> Arc<SegmentMap> {
    Arc::new(SegmentMap::from_groups(rows, groups).unwrap())
}
