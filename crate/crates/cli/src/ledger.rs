//! The run ledger: one CSV row per completed training run.

use std::fs::{File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CliResult;

/// Bumped whenever the column set changes.
pub const LEDGER_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLedgerRow {
    pub ledger_version: u32,
    pub run_id: String,
    pub dataset: String,
    pub variant: String,
    pub factors: usize,
    pub hidden: usize,
    pub layers: usize,
    pub lambda: f64,
    pub beta: f64,
    pub lr: f64,
    pub seed: u64,
    pub train_ratio: f64,
    pub test_accuracy: f64,
    pub test_macro_f1: f64,
    pub test_micro_f1: f64,
    /// Empty unless the dataset carries planted factors.
    pub factor_auc: Option<f64>,
    pub factor_ari: Option<f64>,
    pub wall_seconds: f64,
}

/// Appends `rows` while holding an exclusive lock on the ledger file, writing
/// the header first if the file is empty.
pub fn append(path: &Path, rows: &[RunLedgerRow]) -> CliResult<()> {
    let mut file: File = OpenOptions::new().create(true).read(true).append(true).open(path)?;
    file.lock()?;
    let empty = file.seek(SeekFrom::End(0))? == 0;
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new().has_headers(empty).from_writer(&mut buf);
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    file.write_all(&buf)?;
    file.sync_data()?;
    file.unlock()?;
    Ok(())
}
