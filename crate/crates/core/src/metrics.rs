//! Classification scores and relevance-score analyses.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn masked<'a>(preds: &'a [usize], labels: &'a [usize], mask: &'a [bool]) -> impl Iterator<Item = (usize, usize)> + 'a {
    preds
        .iter()
        .zip(labels)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&p, &l), _)| (p, l))
}

/// Fraction of masked items predicted correctly; zero for an empty mask.
pub fn accuracy(preds: &[usize], labels: &[usize], mask: &[bool]) -> f64 {
    let (hits, total) = masked(preds, labels, mask).fold((0usize, 0usize), |(h, t), (p, l)| (h + (p == l) as usize, t + 1));
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Per-class `(tp, fp, fn)` for classes seen in the masked predictions or labels.
fn class_counts(preds: &[usize], labels: &[usize], mask: &[bool]) -> Vec<(usize, usize, usize)> {
    let classes = masked(preds, labels, mask).map(|(p, l)| p.max(l) + 1).max().unwrap_or(0);
    let mut counts = vec![(0, 0, 0); classes];
    let mut seen = vec![false; classes];
    for (p, l) in masked(preds, labels, mask) {
        seen[p] = true;
        seen[l] = true;
        if p == l {
            counts[p].0 += 1;
        } else {
            counts[p].1 += 1;
            counts[l].2 += 1;
        }
    }
    counts.into_iter().zip(seen).filter(|(_, s)| *s).map(|(c, _)| c).collect()
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Unweighted mean of per-class F1 over classes present in the masked
/// predictions or labels.
pub fn macro_f1(preds: &[usize], labels: &[usize], mask: &[bool]) -> f64 {
    let counts = class_counts(preds, labels, mask);
    if counts.is_empty() {
        return 0.0;
    }
    counts.iter().map(|&(tp, fp, fn_)| f1(tp, fp, fn_)).sum::<f64>() / counts.len() as f64
}

/// F1 of the pooled counts. For single-label data this equals accuracy.
pub fn micro_f1(preds: &[usize], labels: &[usize], mask: &[bool]) -> f64 {
    let (tp, fp, fn_) = class_counts(preds, labels, mask)
        .into_iter()
        .fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    f1(tp, fp, fn_)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PearsonReport {
    /// `K×K`, symmetric with unit diagonal.
    pub matrix: Tensor<f64>,
    /// Columns with zero variance; their off-diagonal correlations are set to 0.
    pub zero_variance: Vec<usize>,
}

impl PearsonReport {
    /// Mean absolute off-diagonal correlation; zero when `K = 1`.
    pub fn mean_abs_off_diagonal(&self) -> f64 {
        let k = self.matrix.rows();
        if k < 2 {
            return 0.0;
        }
        let mut total = 0.0;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    total += self.matrix.at(i, j).abs();
                }
            }
        }
        total / (k * (k - 1)) as f64
    }
}

/// Pearson correlation between the columns of `alpha` (rows = hyperedges).
pub fn pearson_factor_correlation(alpha: &Tensor<f64>) -> PearsonReport {
    let (m, k) = (alpha.rows(), alpha.cols());
    let centred: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let mean = (0..m).map(|r| alpha.at(r, c)).sum::<f64>() / m.max(1) as f64;
            (0..m).map(|r| alpha.at(r, c) - mean).collect()
        })
        .collect();
    let norms: Vec<f64> = centred.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let zero_variance: Vec<usize> = (0..k).filter(|&c| norms[c] == 0.0).collect();
    let mut matrix = Tensor::eye(k);
    for i in 0..k {
        for j in i + 1..k {
            let r = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else {
                let dot: f64 = centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            matrix.data_mut()[i * k + j] = r;
            matrix.data_mut()[j * k + i] = r;
        }
    }
    PearsonReport { matrix, zero_variance }
}

/// `1 / (1 + ‖a − b‖₂)`.
pub fn relevance_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dist = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    1.0 / (1.0 + dist)
}

/// Pairwise [`relevance_similarity`] of all rows of `alpha`.
pub fn relevance_similarity_matrix(alpha: &Tensor<f64>) -> Tensor<f64> {
    let m = alpha.rows();
    let mut out = Tensor::zeros(&[m, m]);
    for i in 0..m {
        for j in 0..m {
            out.data_mut()[i * m + j] = relevance_similarity(alpha.row(i), alpha.row(j));
        }
    }
    out
}

/// Mean similarity between clusters of hyperedges.
///
/// Off-diagonal entries average over all cross pairs; diagonal entries over
/// distinct within-cluster pairs, with singletons scoring 1.
pub fn cluster_similarity(clusters: &[Vec<usize>], alpha: &Tensor<f64>) -> Result<Tensor<f64>> {
    for c in clusters {
        if c.is_empty() {
            return Err(Error::InvalidConfig("empty cluster".into()));
        }
        if let Some(&bad) = c.iter().find(|&&e| e >= alpha.rows()) {
            return Err(Error::OutOfRangeIndex {
                what: "cluster member",
                index: bad,
                bound: alpha.rows(),
            });
        }
    }
    let n = clusters.len();
    let mut out = Tensor::zeros(&[n, n]);
    for a in 0..n {
        for b in a..n {
            let (mut total, mut count) = (0.0, 0usize);
            for (i, &x) in clusters[a].iter().enumerate() {
                let others = if a == b { &clusters[b][i + 1..] } else { &clusters[b][..] };
                for &y in others {
                    total += relevance_similarity(alpha.row(x), alpha.row(y));
                    count += 1;
                }
            }
            let v = if count == 0 { 1.0 } else { total / count as f64 };
            out.data_mut()[a * n + b] = v;
            out.data_mut()[b * n + a] = v;
        }
    }
    Ok(out)
}

/// Area under the ROC curve, ties counted as one half. `None` unless both
/// classes are present.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Mann-Whitney U with mid-ranks for ties.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&o| positive[o]).count() as f64 * mid;
        i = j + 1;
    }
    let pos = positive.iter().filter(|&&p| p).count() as f64;
    let neg = positive.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return None;
    }
    Some((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

fn choose2(n: usize) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (ka, kb) = (
        a.iter().max().map_or(0, |m| m + 1),
        b.iter().max().map_or(0, |m| m + 1),
    );
    let mut table = vec![0usize; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let rows: Vec<usize> = (0..ka).map(|i| (0..kb).map(|j| table[i * kb + j]).sum()).collect();
    let cols: Vec<usize> = (0..kb).map(|j| (0..ka).map(|i| table[i * kb + j]).sum()).collect();
    let index: f64 = table.iter().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.iter().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.iter().map(|&c| choose2(c)).sum();
    let expected = sum_a * sum_b / choose2(n).max(1.0);
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        // Both labelings trivial (one cluster each, or all singletons).
        return if a == b { 1.0 } else { 0.0 };
    }
    (index - expected) / (max - expected)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's k-means with k-means++ seeding; the lowest-inertia assignment of
/// `restarts` runs wins.
pub fn kmeans<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, restarts: usize, rng: &mut R) -> Vec<usize> {
    let n = points.len();
    if n == 0 || k <= 1 {
        return vec![0; n];
    }
    let k = k.min(n);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let mut centres = vec![points[rng.gen_range(0..n)].clone()];
        while centres.len() < k {
            let d: Vec<f64> = points
                .iter()
                .map(|p| centres.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
                .collect();
            let total: f64 = d.iter().sum();
            let next = if total == 0.0 {
                rng.gen_range(0..n)
            } else {
                let mut target = rng.gen::<f64>() * total;
                d.iter()
                    .position(|&w| {
                        target -= w;
                        target <= 0.0
                    })
                    .unwrap_or(n - 1)
            };
            centres.push(points[next].clone());
        }
        let mut assign = vec![usize::MAX; n];
        for _ in 0..100 {
            let mut changed = false;
            for (i, p) in points.iter().enumerate() {
                let c = (0..k)
                    .min_by(|&a, &b| sq_dist(p, &centres[a]).total_cmp(&sq_dist(p, &centres[b])))
                    .expect("k ≥ 1");
                if assign[i] != c {
                    assign[i] = c;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            for (c, centre) in centres.iter_mut().enumerate() {
                let members: Vec<&Vec<f64>> = points.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
                if members.is_empty() {
                    continue;
                }
                for (j, v) in centre.iter_mut().enumerate() {
                    *v = members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64;
                }
            }
        }
        let inertia: f64 = points.iter().zip(&assign).map(|(p, &a)| sq_dist(p, &centres[a])).sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, assign));
        }
    }
    best.expect("at least one restart").1
}

/// How well relevance scores recover planted hyperedge factor types.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryScore {
    /// Held-out AUC of the chosen column separating factor 0 from the rest.
    pub auc: f64,
    /// ARI of k-means (`k = K*`) on the α rows against the planted ids.
    pub ari: f64,
    /// Column of `α` chosen on the validation half.
    pub column: usize,
    /// Whether low scores indicate factor 0.
    pub flipped: bool,
}

pub const KMEANS_RESTARTS: usize = 10;

/// Scores `alpha` (rows = hyperedges) against planted factor ids over `rows`.
///
/// `rows` is shuffled with `seed` and halved: the first half picks the column
/// and orientation with the best AUC, the second half reports it. The ARI
/// uses every listed row.
pub fn factor_recovery_score(
    alpha: &Tensor<f64>,
    planted: &[usize],
    num_factors: usize,
    rows: &[usize],
    seed: u64,
) -> Result<RecoveryScore> {
    if planted.len() != alpha.rows() {
        return Err(Error::shape(
            "factor_recovery_score",
            format!("{} planted ids for {} α rows", planted.len(), alpha.rows()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = rows.to_vec();
    order.shuffle(&mut rng);
    let (val, test) = order.split_at(order.len() / 2);
    let auc_on = |subset: &[usize], col: usize, flip: bool| {
        let scores: Vec<f64> = subset.iter().map(|&r| if flip { -alpha.at(r, col) } else { alpha.at(r, col) }).collect();
        let pos: Vec<bool> = subset.iter().map(|&r| planted[r] == 0).collect();
        roc_auc(&scores, &pos)
    };
    let mut choice = (f64::NEG_INFINITY, 0, false);
    for col in 0..alpha.cols() {
        for flip in [false, true] {
            let a = auc_on(val, col, flip).unwrap_or(0.5);
            if a > choice.0 {
                choice = (a, col, flip);
            }
        }
    }
    let (_, column, flipped) = choice;
    let auc = auc_on(test, column, flipped).unwrap_or(0.5);

    let points: Vec<Vec<f64>> = rows.iter().map(|&r| alpha.row(r).to_vec()).collect();
    let clusters = kmeans(&points, num_factors, KMEANS_RESTARTS, &mut rng);
    let truth: Vec<usize> = rows.iter().map(|&r| planted[r]).collect();
    let ari = adjusted_rand_index(&clusters, &truth);
    Ok(RecoveryScore {
        auc,
        ari,
        column,
        flipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn macro_f1_hand_example() {
        let all = [true; 4];
        let v = macro_f1(&[0, 1, 1, 1], &[0, 0, 1, 1], &all);
        assert!((v - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions() {
        let labels = [0, 2, 1, 2];
        let mask = [true; 4];
        assert_eq!(accuracy(&labels, &labels, &mask), 1.0);
        assert_eq!(macro_f1(&labels, &labels, &mask), 1.0);
        assert_eq!(micro_f1(&labels, &labels, &mask), 1.0);
    }

    #[test]
    fn single_class_mask_has_no_nan() {
        let v = macro_f1(&[1, 1, 0], &[1, 1, 0], &[true, true, false]);
        assert_eq!(v, 1.0);
    }

    #[test]
    fn mask_restricts() {
        let acc = accuracy(&[0, 1, 1], &[0, 0, 0], &[true, false, false]);
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn pearson_duplicate_and_negated_columns() {
        let a = Tensor::from_rows(&[vec![0.1, 0.1, 0.9], vec![0.5, 0.5, 0.5], vec![0.8, 0.8, 0.2]]).unwrap();
        let p = pearson_factor_correlation(&a);
        assert!((p.matrix.at(0, 1) - 1.0).abs() < 1e-12);
        assert!((p.matrix.at(0, 2) + 1.0).abs() < 1e-12);
        assert!(p.zero_variance.is_empty());
    }

    #[test]
    fn pearson_zero_variance_flagged() {
        let a = Tensor::from_rows(&[vec![0.1, 0.5], vec![0.9, 0.5]]).unwrap();
        let p = pearson_factor_correlation(&a);
        assert_eq!(p.zero_variance, vec![1]);
        assert_eq!(p.matrix.at(0, 1), 0.0);
        assert_eq!(p.matrix.at(1, 1), 1.0);
    }

    #[test]
    fn similarity_values() {
        assert_eq!(relevance_similarity(&[0.2, 0.4], &[0.2, 0.4]), 1.0);
        assert_eq!(relevance_similarity(&[0.0, 0.0], &[0.6, 0.8]), 0.5);
    }

    #[test]
    fn cluster_similarity_singletons_and_order() {
        let a = Tensor::from_rows(&[vec![0.0, 0.0], vec![0.6, 0.8], vec![0.0, 0.0]]).unwrap();
        let s = cluster_similarity(&[vec![0, 2], vec![1]], &a).unwrap();
        assert_eq!(s.at(0, 0), 1.0);
        assert_eq!(s.at(1, 1), 1.0);
        assert_eq!(s.at(0, 1), 0.5);
        let swapped = cluster_similarity(&[vec![1], vec![0, 2]], &a).unwrap();
        assert_eq!(swapped.at(1, 0), s.at(0, 1));
        assert!(cluster_similarity(&[vec![]], &a).is_err());
    }

    #[test]
    fn auc_cases() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), Some(1.0));
        assert_eq!(roc_auc(&[0.5, 0.5], &[false, true]), Some(0.5));
        assert_eq!(roc_auc(&[0.1, 0.2], &[true, true]), None);
    }

    #[test]
    fn ari_cases() {
        assert!((adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]) - 1.0).abs() < 1e-12);
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]);
        assert!(v < 0.0);
    }

    #[test]
    fn kmeans_separates_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pts: Vec<Vec<f64>> = (0..20).map(|i| vec![if i < 10 { 0.0 } else { 5.0 } + (i % 3) as f64 * 0.1]).collect();
        let a = kmeans(&pts, 2, 10, &mut rng);
        let truth: Vec<usize> = (0..20).map(|i| (i >= 10) as usize).collect();
        assert_eq!(adjusted_rand_index(&a, &truth), 1.0);
    }

    #[test]
    fn recovery_of_perfect_scores() {
        let planted: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let data: Vec<f64> = planted.iter().flat_map(|&t| [if t == 0 { 0.2 } else { 0.9 }, 0.5]).collect();
        let alpha = Tensor::matrix(40, 2, data).unwrap();
        let rows: Vec<usize> = (0..40).collect();
        let r = factor_recovery_score(&alpha, &planted, 2, &rows, 3).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.ari, 1.0);
        assert_eq!((r.column, r.flipped), (0, true));
    }
}
