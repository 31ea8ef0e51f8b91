//! Square matrices as CSV (exact) and plain PGM (for looking at).
//!
//! CSV cells are written in scientific notation with the scalar's
//! round-trip width (9 significant digits for f32, 17 for f64), so parsing
//! the file back gives the original bits. The PGM is `P2` with values
//! min-max scaled to 0–255; a constant matrix maps to 128 everywhere.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numcore::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeatmapFiles {
    pub csv: PathBuf,
    pub pgm: PathBuf,
}

fn square_side<T: Scalar>(m: &Tensor<T>) -> Result<usize> {
    match m.shape() {
        [r, c] if r == c => Ok(*r),
        shape => Err(Error::Invalid(format!("heatmap needs a square matrix, got shape {shape:?}"))),
    }
}

pub fn heatmap_csv<T: Scalar>(m: &Tensor<T>) -> Result<String> {
    let n = square_side(m)?;
    let mut out = String::new();
    for row in m.data().chunks(n.max(1)).take(n) {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{:.*e}", T::ROUND_TRIP_DIGITS - 1, v);
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn heatmap_pgm<T: Scalar>(m: &Tensor<T>) -> Result<String> {
    let n = square_side(m)?;
    if !m.is_finite() {
        return Err(Error::NonFinite("heatmap"));
    }
    let values = m.to_f64_vec();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pixel = |v: f64| -> u8 {
        if max > min {
            ((v - min) / (max - min) * 255.0).round() as u8
        } else {
            128
        }
    };
    let mut out = format!("P2\n{n} {n}\n255\n");
    for row in values.chunks(n.max(1)).take(n) {
        let line: Vec<String> = row.iter().map(|&v| pixel(v).to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}

/// Writes `<base>.csv` and `<base>.pgm`.
pub fn export_heatmap<T: Scalar>(m: &Tensor<T>, base: &Path) -> Result<HeatmapFiles> {
    let csv = heatmap_csv(m)?;
    let pgm = heatmap_pgm(m)?;
    let files = HeatmapFiles {
        csv: base.with_extension("csv"),
        pgm: base.with_extension("pgm"),
    };
    std::fs::write(&files.csv, csv).map_err(Error::io(&files.csv))?;
    std::fs::write(&files.pgm, pgm).map_err(Error::io(&files.pgm))?;
    Ok(files)
}

/// Parses a heatmap CSV back into a square matrix.
pub fn parse_heatmap_csv<T: Scalar + FromStr>(text: &str) -> Result<Tensor<T>> {
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        for cell in line.split(',') {
            let v = cell
                .trim()
                .parse::<T>()
                .map_err(|_| Error::Format(format!("heatmap line {}: bad number {cell:?}", i + 1)))?;
            data.push(v);
        }
        rows += 1;
    }
    if data.len() != rows * rows {
        return Err(Error::Format(format!("heatmap has {rows} rows but {} values", data.len())));
    }
    Tensor::new(&[rows, rows], data)
}

pub fn read_heatmap_csv<T: Scalar + FromStr>(path: &Path) -> Result<Tensor<T>> {
    parse_heatmap_csv(&std::fs::read_to_string(path).map_err(Error::io(path))?)
}
