//! Training objectives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{linear, BoundLinear};
use crate::tape::{Tape, Var};
use crate::tensor::Real;

/// Mean cross-entropy of `logits` against `labels` over the listed rows.
pub fn task_loss<T: Real>(tape: &Tape<T>, logits: Var, labels: &[usize], rows: &[usize]) -> Result<Var> {
    if rows.is_empty() {
        return Err(Error::InvalidConfig("task loss over an empty row set".into()));
    }
    let targets = rows
        .iter()
        .map(|&r| {
            labels.get(r).copied().ok_or(Error::OutOfRangeIndex {
                what: "label row",
                index: r,
                bound: labels.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let picked = tape.select_rows(logits, rows)?;
    tape.cross_entropy(picked, &targets)
}

/// Factor discrimination loss.
///
/// Chunk `k` of every listed hyperedge representation is pseudo-labelled `k`
/// and classified by that layer's `(d/K) → K` classifier. The cross-entropy is
/// summed over hyperedges, factors and layers and divided by `M·K·L`, so it
/// equals `ln K` when the classifiers predict uniformly.
pub fn factor_discrimination_loss<T: Real>(
    tape: &Tape<T>,
    edge_reps: &[Var],
    classifiers: &[BoundLinear],
    factors: usize,
    rows: &[usize],
) -> Result<Var> {
    if edge_reps.len() != classifiers.len() || edge_reps.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "{} layers of representations but {} factor classifiers",
            edge_reps.len(),
            classifiers.len()
        )));
    }
    if rows.is_empty() {
        return Err(Error::InvalidConfig("no hyperedges to discriminate".into()));
    }
    let mut terms = Vec::with_capacity(edge_reps.len() * factors);
    for (&h, &clf) in edge_reps.iter().zip(classifiers) {
        let picked = tape.select_rows(h, rows)?;
        for (k, chunk) in tape.chunk_cols(picked, factors)?.into_iter().enumerate() {
            let logits = linear(tape, chunk, clf)?;
            terms.push(tape.cross_entropy(logits, &vec![k; rows.len()])?);
        }
    }
    let count = terms.len();
    let mut sum = terms[0];
    for &t in &terms[1..] {
        sum = tape.add(sum, t)?;
    }
    Ok(tape.scale(sum, T::of(1.0 / count as f64)))
}

/// Loss values of one evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub task_loss: f64,
    pub dis_loss: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(task_loss: f64, dis_loss: f64, lambda: f64) -> Self {
        Self {
            task_loss,
            dis_loss,
            total: task_loss + lambda * dis_loss,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.task_loss.is_finite() && self.dis_loss.is_finite() && self.total.is_finite()
    }
}
