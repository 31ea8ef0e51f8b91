//! Twin runs with the relationship encoding switched on and off.
//!
//! Both arms use the same config and seed, so they share the initial weights,
//! batch order and augmentation draws; the off arm feeds an all-zero
//! similarity matrix and never consults its encoder.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::TrainConfig;
use crate::data::dataset::shuffled_order;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evalx::heatmap::{export_heatmap, HeatmapFiles};
use crate::model::HeadKind;
use crate::numcore::{Mode, Scalar, Tape, Tensor};
use crate::rpe::RpeEncoder;
use crate::train::trainer::{
    batch_similarity, epoch_streams, eval_seed, evaluate, forward_batch, rpe_encoder, train_epoch, training_images,
    TrainState,
};

/// Symmetry and diagonal dominance of one exported matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixStats {
    /// `"on"` or `"off"`.
    pub arm: &'static str,
    /// `"similarity"` or `"attention"`.
    pub matrix: &'static str,
    /// Largest `|M[i][j] − M[j][i]|`.
    pub symmetry_error: f64,
    /// Smallest diagonal entry over the largest off-diagonal entry.
    pub diag_dominance: f64,
    pub files: Option<HeatmapFiles>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub stats: Vec<MatrixStats>,
    pub accuracy_on: f64,
    pub accuracy_off: f64,
    pub encoder_calls_on: usize,
    pub encoder_calls_off: usize,
    /// Backbone outputs of the first training batch agree bit for bit.
    pub first_batch_equal: bool,
    pub probe_size: usize,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("arm,matrix,symmetry_error,diag_dominance\n");
        for s in &self.stats {
            let _ = writeln!(out, "{},{},{},{}", s.arm, s.matrix, s.symmetry_error, s.diag_dominance);
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "probe batch: {} images", self.probe_size);
        let _ = writeln!(out, "test accuracy: rpe on {:.4}, rpe off {:.4}", self.accuracy_on, self.accuracy_off);
        let _ = writeln!(
            out,
            "encoder calls: rpe on {}, rpe off {}",
            self.encoder_calls_on, self.encoder_calls_off
        );
        let _ = writeln!(out, "first-batch backbone outputs identical: {}", self.first_batch_equal);
        for s in &self.stats {
            let _ = writeln!(
                out,
                "{:>3} {:<10}  symmetry error {:.3e}  diagonal dominance {:.4}",
                s.arm, s.matrix, s.symmetry_error, s.diag_dominance
            );
        }
        out
    }
}

pub fn matrix_stats<T: Scalar>(m: &Tensor<T>) -> (f64, f64) {
    let n = m.shape()[0];
    let (mut sym, mut diag, mut off) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        for j in 0..n {
            let v = m.at(&[i, j]).f64();
            sym = sym.max((v - m.at(&[j, i]).f64()).abs());
            if i == j {
                diag = diag.min(v);
            } else {
                off = off.max(v);
            }
        }
    }
    (sym, diag / off)
}

fn first_batch_embeddings(state: &TrainState, train: &Dataset, cfg: &TrainConfig) -> Result<Tensor<f32>> {
    let (mut batches, mut rng) = epoch_streams(train, cfg, state.epoch + 1)?;
    let batch = batches.next().ok_or(Error::Empty("rpe_ablation"))?;
    let images = training_images(&state.model, &batch, cfg, &mut rng)?;
    let mut model = state.model.clone();
    let mut tape = Tape::new();
    let (n, _) = model.embed(&mut tape, &images, &batch.ids, Mode::Train)?;
    Ok(tape.value(n).clone())
}

struct Arm {
    accuracy: f64,
    calls: usize,
    first: Tensor<f32>,
    similarity: Tensor<f64>,
    attention: Tensor<f32>,
}

fn run_arm(cfg: &TrainConfig, train: &Dataset, test: &Dataset, probe: &[usize]) -> Result<Arm> {
    let encoder: RpeEncoder = rpe_encoder(&cfg.rpe);
    let mut state = TrainState::from_config(cfg);
    let first = first_batch_embeddings(&state, train, cfg)?;
    while state.epoch < cfg.epochs {
        train_epoch(&mut state, train, cfg, &encoder)?;
    }
    let accuracy = evaluate(&mut state.model, test, cfg.batch_size, eval_seed(cfg), &cfg.rpe, &encoder)?.accuracy;

    let batch = test.batch(probe)?;
    let similarity = batch_similarity(HeadKind::Rbi, &batch.images, &cfg.rpe, &encoder)?
        .expect("attention head")
        .values;
    let (tape, fwd) = forward_batch(&mut state.model, &batch.images, &batch.ids, &cfg.rpe, &encoder, Mode::Eval)?;
    let attention = tape.value(fwd.rra.expect("attention head").a).clone();
    Ok(Arm {
        accuracy,
        calls: encoder.calls(),
        first,
        similarity,
        attention,
    })
}

/// Trains the two arms on `train`, evaluates both on `test` and inspects
/// their similarity and attention matrices on a probe batch: the first
/// `cfg.batch_size` test images in evaluation order. The off arm's
/// similarity matrix is identically zero and is not exported.
///
/// With `out_dir`, each matrix is written there as `<arm>_<matrix>.csv/.pgm`.
pub fn rpe_ablation(
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<AblationReport> {
    if test.is_empty() {
        return Err(Error::Empty("rpe_ablation probe"));
    }
    let mut on = cfg.clone();
    on.seed = seed;
    on.head = HeadKind::Rbi;
    on.rpe.enabled = true;
    let mut off = on.clone();
    off.rpe.enabled = false;

    let order = shuffled_order(test.len(), eval_seed(&on));
    let probe = &order[..on.batch_size.min(order.len())];
    let a_on = run_arm(&on, train, test, probe)?;
    let a_off = run_arm(&off, train, test, probe)?;

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    let mut stats = Vec::new();
    let mut push = |arm, matrix, sym_dom: (f64, f64), files| {
        stats.push(MatrixStats {
            arm,
            matrix,
            symmetry_error: sym_dom.0,
            diag_dominance: sym_dom.1,
            files,
        })
    };
    let export = |m: &dyn Fn(&Path) -> Result<HeatmapFiles>, name: &str| -> Result<Option<HeatmapFiles>> {
        out_dir.map(|d| m(&d.join(name))).transpose()
    };
    let files = export(&|p| export_heatmap(&a_on.similarity, p), "on_similarity")?;
    push("on", "similarity", matrix_stats(&a_on.similarity), files);
    let files = export(&|p| export_heatmap(&a_on.attention, p), "on_attention")?;
    push("on", "attention", matrix_stats(&a_on.attention), files);
    let files = export(&|p| export_heatmap(&a_off.attention, p), "off_attention")?;
    push("off", "attention", matrix_stats(&a_off.attention), files);

    let report = AblationReport {
        stats,
        accuracy_on: a_on.accuracy,
        accuracy_off: a_off.accuracy,
        encoder_calls_on: a_on.calls,
        encoder_calls_off: a_off.calls,
        first_batch_equal: a_on.first == a_off.first,
        probe_size: probe.len(),
    };
    if let Some(dir) = out_dir {
        let path = dir.join("ablation.csv");
        std::fs::write(&path, report.to_csv()).map_err(Error::io(&path))?;
        let path = dir.join("ablation.txt");
        std::fs::write(&path, report.summary()).map_err(Error::io(&path))?;
    }
    Ok(report)
}
