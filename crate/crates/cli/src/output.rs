//! CSV artifacts. Every file has a header row and rows in index order.

use std::path::Path;

use nhnn::tensor::Tensor;
use nhnn::train::EpochRecord;

use crate::error::{CliError, CliResult};

/// Writes a matrix with a leading index column: `row_name, col_0, …`.
pub fn write_matrix(path: &Path, row_name: &str, col_prefix: &str, m: &Tensor<f64>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![row_name.to_string()];
    header.extend((0..m.cols()).map(|j| format!("{col_prefix}{j}")));
    w.write_record(&header)?;
    for i in 0..m.rows() {
        let mut rec = vec![i.to_string()];
        rec.extend(m.row(i).iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Relevance scores: one row per hyperedge, one `alpha_k` column per factor.
pub fn write_alpha(path: &Path, alpha: &Tensor<f64>) -> CliResult<()> {
    write_matrix(path, "hyperedge", "alpha_", alpha)
}

/// Reads a matrix written by [`write_matrix`]; the first column must be the
/// row index `0, 1, …`.
pub fn read_matrix(path: &Path) -> CliResult<Tensor<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let index: usize = rec
            .get(0)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| malformed(path, format!("row {i}: bad index")))?;
        if index != i {
            return Err(malformed(path, format!("row {i} has index {index}")));
        }
        let values = rec
            .iter()
            .skip(1)
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| malformed(path, format!("row {i}: {e}")))?;
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(malformed(path, "no rows".into()));
    }
    Tensor::from_rows(&rows).map_err(|e| malformed(path, e.to_string()))
}

/// Reads `id, value` pairs (e.g. hyperedge → cluster) into a dense vector.
pub fn read_assignment(path: &Path, len: usize) -> CliResult<Vec<usize>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = vec![None; len];
    for rec in r.records() {
        let rec = rec?;
        let parse = |j: usize| rec.get(j).and_then(|s| s.trim().parse::<usize>().ok());
        let (Some(id), Some(value)) = (parse(0), parse(1)) else {
            return Err(malformed(path, format!("bad record {:?}", rec.as_slice())));
        };
        if id >= len {
            return Err(malformed(path, format!("id {id} out of range for {len} rows")));
        }
        out[id] = Some(value);
    }
    out.into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| malformed(path, format!("no entry for id {i}"))))
        .collect()
}

fn malformed(path: &Path, detail: String) -> CliError {
    CliError::Usage {
        category: "MalformedFile",
        message: format!("{}: {detail}", path.display()),
    }
}

pub fn write_curve(path: &Path, curve: &[EpochRecord]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epoch",
        "train_task_loss",
        "train_dis_loss",
        "train_total_loss",
        "val_task_loss",
        "val_dis_loss",
        "val_total_loss",
        "val_metric",
    ])?;
    for r in curve {
        let mut rec = vec![r.epoch.to_string()];
        rec.extend(
            [r.train.task_loss, r.train.dis_loss, r.train.total, r.val.task_loss, r.val.dis_loss, r.val.total, r.val_metric]
                .map(|v| v.to_string()),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes serialisable records with a header derived from their fields.
pub fn write_records<S: serde::Serialize>(path: &Path, rows: &[S]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
