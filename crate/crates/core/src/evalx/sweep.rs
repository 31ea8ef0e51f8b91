//! Accuracy of one frozen model at several evaluation batch sizes.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::RpeConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::train::trainer::{evaluate, rpe_encoder};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub batch_size: usize,
    pub accuracy: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Max minus min accuracy over the rows.
    pub spread: f64,
}

impl SweepReport {
    /// One row per batch size; the spread is repeated in its own column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("batch_size,accuracy,loss,spread\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.batch_size, r.accuracy, r.loss, self.spread);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(Error::io(path))
    }
}

/// Evaluates `model` (evaluation mode, so nothing about it changes) at each
/// batch size, shuffling with the same `seed` every time.
pub fn batch_size_sweep(
    model: &mut Model<f32>,
    ds: &Dataset,
    sizes: &[usize],
    seed: u64,
    rpe: &RpeConfig,
) -> Result<SweepReport> {
    if sizes.is_empty() {
        return Err(Error::Invalid("sweep needs at least one batch size".into()));
    }
    if let Some(bad) = sizes.iter().find(|&&b| b == 0) {
        return Err(Error::Invalid(format!("batch size {bad} is not positive")));
    }
    let encoder = rpe_encoder(rpe);
    let mut rows = Vec::with_capacity(sizes.len());
    for &batch_size in sizes {
        let m = evaluate(model, ds, batch_size, seed, rpe, &encoder)?;
        rows.push(SweepRow {
            batch_size,
            accuracy: m.accuracy,
            loss: m.loss,
        });
    }
    let max = rows.iter().map(|r| r.accuracy).fold(f64::NEG_INFINITY, f64::max);
    let min = rows.iter().map(|r| r.accuracy).fold(f64::INFINITY, f64::min);
    Ok(SweepReport { rows, spread: max - min })
}
