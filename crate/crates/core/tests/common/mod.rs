//! Random instances and brute-force loop oracles shared by the integration
//! tests. Oracles work on plain nested vectors and never call library kernels.

#![allow(dead_code)]

pub mod cases;

use nhnn::hypergraph::Hypergraph;
use nhnn::tensor::Tensor;
use rand::seq::index::sample;
use rand::Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor<f64>) -> Mat {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn to_tensor(m: &Mat) -> Tensor<f64> {
    Tensor::from_rows(m).expect("rectangular")
}

pub fn random_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize, lo: f64, hi: f64) -> Mat {
    (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(lo..hi)).collect()).collect()
}

pub fn max_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len(), "row count");
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len(), "column count");
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

/// Random hypergraph; some hyperedges may be empty and some nodes isolated.
pub fn random_hypergraph<R: Rng>(rng: &mut R, nodes: usize, edges: usize) -> Hypergraph {
    let mut pairs = Vec::new();
    for e in 0..edges {
        let degree = if rng.gen_bool(0.1) { 0 } else { rng.gen_range(1..=nodes.min(6)) };
        pairs.extend(sample(rng, nodes, degree).into_iter().map(|v| (v, e)));
    }
    Hypergraph::new(pairs, nodes, edges).expect("valid pairs")
}

/// Members of each hyperedge, in index order.
pub fn members(hg: &Hypergraph) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); hg.num_edges()];
    for &(v, e) in hg.pairs() {
        out[e].push(v);
    }
    out
}

/// Hyperedges containing each node.
pub fn incident(hg: &Hypergraph) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); hg.num_nodes()];
    for &(v, e) in hg.pairs() {
        out[v].push(e);
    }
    out
}

pub fn group_mean(x: &Mat, groups: &[Vec<usize>]) -> Mat {
    let d = x[0].len();
    groups
        .iter()
        .map(|g| {
            let mut acc = vec![0.0; d];
            for &r in g {
                for j in 0..d {
                    acc[j] += x[r][j];
                }
            }
            if !g.is_empty() {
                for a in &mut acc {
                    *a /= g.len() as f64;
                }
            }
            acc
        })
        .collect()
}

/// `(Σ w_r x_r, Σ w_r)` per group.
pub fn group_weighted_sum(x: &Mat, w: &[f64], groups: &[Vec<usize>]) -> (Mat, Vec<f64>) {
    let d = x[0].len();
    let mut num = vec![vec![0.0; d]; groups.len()];
    let mut den = vec![0.0; groups.len()];
    for (s, g) in groups.iter().enumerate() {
        for &r in g {
            den[s] += w[r];
            for j in 0..d {
                num[s][j] += w[r] * x[r][j];
            }
        }
    }
    (num, den)
}

fn normalised(v: &[f64], eps: f64) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(eps);
    v.iter().map(|x| x / n).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `α[e][k] = σ(â W_k b̂)` on L2-normalised chunks.
pub fn relevance(h: &Mat, ht: &Mat, scorers: &[Mat], eps: f64) -> Mat {
    let k = scorers.len();
    let c = h[0].len() / k;
    h.iter()
        .zip(ht)
        .map(|(hr, tr)| {
            (0..k)
                .map(|f| {
                    let a = normalised(&hr[f * c..(f + 1) * c], eps);
                    let b = normalised(&tr[f * c..(f + 1) * c], eps);
                    let mut s = 0.0;
                    for i in 0..c {
                        for j in 0..c {
                            s += a[i] * scorers[f][i][j] * b[j];
                        }
                    }
                    sigmoid(s)
                })
                .collect()
        })
        .collect()
}

/// Node outputs from unweighted hyperedge reps `h` and scores `alpha`:
/// `Σ α h / max(Σ α, eps)` per factor chunk.
pub fn edge_to_node(h: &Mat, alpha: &Mat, incident: &[Vec<usize>], eps: f64) -> Mat {
    let k = alpha.first().map_or(1, Vec::len);
    let d = h.first().map_or(0, Vec::len);
    let c = d / k;
    incident
        .iter()
        .map(|es| {
            let mut out = vec![0.0; d];
            for f in 0..k {
                let total: f64 = es.iter().map(|&e| alpha[e][f]).sum();
                for j in 0..c {
                    let num: f64 = es.iter().map(|&e| alpha[e][f] * h[e][f * c + j]).sum();
                    out[f * c + j] = num / total.max(eps);
                }
            }
            out
        })
        .collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, inner, m) = (a.len(), b.len(), b.first().map_or(0, Vec::len));
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for k in 0..inner {
            for j in 0..m {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

/// Dense `D_v^{-1/2} H D_e^{-1} Hᵀ D_v^{-1/2} X W`.
pub fn hgnn_dense(hg: &Hypergraph, x: &Mat, w: &Mat) -> Mat {
    let (n, m) = (hg.num_nodes(), hg.num_edges());
    let mut inc = vec![vec![0.0; m]; n];
    for &(v, e) in hg.pairs() {
        inc[v][e] = 1.0;
    }
    let dv: Vec<f64> = (0..n).map(|v| inc[v].iter().sum()).collect();
    let de: Vec<f64> = (0..m).map(|e| (0..n).map(|v| inc[v][e]).sum()).collect();
    let mut lap = vec![vec![0.0; n]; n];
    for u in 0..n {
        for v in 0..n {
            if dv[u] == 0.0 || dv[v] == 0.0 {
                continue;
            }
            let s: f64 = (0..m).filter(|&e| de[e] > 0.0).map(|e| inc[u][e] * inc[v][e] / de[e]).sum();
            lap[u][v] = s / (dv[u].sqrt() * dv[v].sqrt());
        }
    }
    matmul(&matmul(&lap, x), w)
}

/// Mean negative log-likelihood of `targets` under row-wise softmax.
pub fn cross_entropy(logits: &Mat, targets: &[usize]) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(targets)
        .map(|(row, &t)| {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|z| (z - mx).exp()).sum::<f64>().ln();
            lse - row[t]
        })
        .sum();
    total / targets.len() as f64
}

pub fn accuracy(preds: &[usize], labels: &[usize], mask: &[bool]) -> f64 {
    let idx: Vec<usize> = (0..preds.len()).filter(|&i| mask[i]).collect();
    if idx.is_empty() {
        return 0.0;
    }
    idx.iter().filter(|&&i| preds[i] == labels[i]).count() as f64 / idx.len() as f64
}

/// Per-class F1 over classes appearing among masked predictions or labels.
pub fn per_class_f1(preds: &[usize], labels: &[usize], mask: &[bool]) -> Vec<(usize, usize, usize, f64)> {
    let idx: Vec<usize> = (0..preds.len()).filter(|&i| mask[i]).collect();
    let mut classes: Vec<usize> = idx.iter().flat_map(|&i| [preds[i], labels[i]]).collect();
    classes.sort_unstable();
    classes.dedup();
    classes
        .into_iter()
        .map(|c| {
            let tp = idx.iter().filter(|&&i| preds[i] == c && labels[i] == c).count();
            let fp = idx.iter().filter(|&&i| preds[i] == c && labels[i] != c).count();
            let fn_ = idx.iter().filter(|&&i| preds[i] != c && labels[i] == c).count();
            let f = if tp + fp + fn_ == 0 {
                0.0
            } else {
                2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
            };
            (tp, fp, fn_, f)
        })
        .collect()
}

pub fn macro_f1(preds: &[usize], labels: &[usize], mask: &[bool]) -> f64 {
    let per = per_class_f1(preds, labels, mask);
    if per.is_empty() {
        0.0
    } else {
        per.iter().map(|c| c.3).sum::<f64>() / per.len() as f64
    }
}

pub fn micro_f1(preds: &[usize], labels: &[usize], mask: &[bool]) -> f64 {
    let per = per_class_f1(preds, labels, mask);
    let (tp, fp, fn_) = per.iter().fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    if tp + fp + fn_ == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Textbook two-pass Pearson correlation; zero when either column is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for i in 0..a.len() {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma).powi(2);
        sbb += (b[i] - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

pub fn similarity(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    1.0 / (1.0 + d.sqrt())
}

/// Average similarity over cross pairs, or distinct within-cluster pairs.
pub fn cluster_similarity(clusters: &[Vec<usize>], alpha: &Mat) -> Mat {
    let n = clusters.len();
    let mut out = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in 0..n {
            let mut vals = Vec::new();
            for (i, &x) in clusters[a].iter().enumerate() {
                for (j, &y) in clusters[b].iter().enumerate() {
                    if a == b && j <= i {
                        continue;
                    }
                    vals.push(similarity(&alpha[x], &alpha[y]));
                }
            }
            out[a][b] = if vals.is_empty() { 1.0 } else { vals.iter().sum::<f64>() / vals.len() as f64 };
        }
    }
    out
}

/// Probability that a random positive outscores a random negative, ties ½.
pub fn auc_pairs(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if positive[i] && !positive[j] {
                pairs += 1;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

/// ARI by counting agreeing item pairs directly.
pub fn ari_pairs(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut in_a, mut in_b, mut total) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let sa = a[i] == a[j];
            let sb = b[i] == b[j];
            total += 1.0;
            in_a += f64::from(u8::from(sa));
            in_b += f64::from(u8::from(sb));
            both += f64::from(u8::from(sa && sb));
        }
    }
    let expected = if total == 0.0 { 0.0 } else { in_a * in_b / total };
    let max = (in_a + in_b) / 2.0;
    if max == expected {
        return if a == b { 1.0 } else { 0.0 };
    }
    (both - expected) / (max - expected)
}
