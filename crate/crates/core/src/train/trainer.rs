use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::FeatureExtractor;
use crate::config::{RpeConfig, TrainConfig};
use crate::data::augment::augment;
use crate::data::dataset::{batch_iterator, shuffled_order, Batch, BatchIter, Dataset};
use crate::error::{Error, Result};
use crate::layers::Params;
use crate::model::{Forward, Head, HeadKind, Model, Standardize};
use crate::numcore::{kernels, Mode, Scalar, Tape, Tensor};
use crate::rpe::{RpeEncoder, SimilarityMatrix};
use crate::train::radam::{radam_step, OptimizerState, RadamConfig, StepInfo};

/// Independent seeds for the different random consumers of a run.
pub mod purpose {
    pub const ORDER: u64 = 1;
    pub const AUGMENT: u64 = 2;
    pub const EVAL: u64 = 3;
}

/// SplitMix64 of `(base, purpose, index)`.
pub fn derive_seed(base: u64, purpose: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl From<&TrainConfig> for RadamConfig {
    fn from(cfg: &TrainConfig) -> Self {
        RadamConfig {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.optimizer_eps,
        }
    }
}

/// Fresh model as described by `cfg`.
pub fn build_model<T: Scalar>(cfg: &TrainConfig) -> Model<T> {
    let mut model = Model::init(cfg.head, cfg.embed_dim, cfg.classes, cfg.seed);
    configure(&mut model, cfg);
    model
}

/// Applies the non-learned settings of `cfg` to an existing model.
pub fn configure<T: Scalar>(model: &mut Model<T>, cfg: &TrainConfig) {
    model.standardize = Standardize {
        mean: cfg.norm_mean,
        std: cfg.norm_std,
    };
    if let Head::Rbi(p) = &mut model.head {
        p.softmax_axis = cfg.softmax_axis;
    }
}

pub fn rpe_encoder(rpe: &RpeConfig) -> RpeEncoder {
    RpeEncoder::new(rpe.eps, rpe.max_value, rpe.normalize)
}

/// Relationship matrix for a batch of `[0, 1]` images, or `None` for the
/// baseline head. With the encoding disabled the matrix is all zeros and the
/// encoder is never consulted.
pub fn batch_similarity(
    kind: HeadKind,
    images: &Tensor<f32>,
    rpe: &RpeConfig,
    encoder: &RpeEncoder,
) -> Result<Option<SimilarityMatrix>> {
    if kind == HeadKind::Baseline {
        return Ok(None);
    }
    let b = images.shape().first().copied().unwrap_or(0);
    if !rpe.enabled {
        return Ok(Some(SimilarityMatrix::zeros(b)));
    }
    encoder.similarity_matrix(images).map(Some)
}

/// Full forward pass over `[0, 1]` images: similarity, standardization,
/// backbone and head.
pub fn forward_batch<T: Scalar>(
    model: &mut Model<T>,
    images: &Tensor<f32>,
    ids: &[String],
    rpe: &RpeConfig,
    encoder: &RpeEncoder,
    mode: Mode,
) -> Result<(Tape<T>, Forward)> {
    let s = batch_similarity(model.kind(), images, rpe, encoder)?.map(|m| m.scaled::<T>(rpe.scale));
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, images, ids, s.as_ref(), mode)?;
    Ok((tape, fwd))
}

/// Augments every image of a `B×C×H×W` batch independently.
pub fn augment_batch(images: &Tensor<f32>, rng: &mut ChaCha8Rng, max_deg: f64) -> Result<Tensor<f32>> {
    let b = images.shape()[0];
    let single = &images.shape()[1..];
    let parts = (0..b)
        .map(|i| augment(&images.slice_rows(i, 1).reshape(single)?, rng, max_deg).reshape(single))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&parts)
}

/// Number of rows whose arg-max equals the label.
pub fn count_correct<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks(c)
        .zip(labels)
        .filter(|(row, &label)| {
            let best = row
                .iter()
                .enumerate()
                .fold(0, |best, (k, v)| if *v > row[best] { k } else { best });
            best == label
        })
        .count()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub correct: usize,
    pub info: StepInfo,
}

/// Model parameters and optimizer state that evolve together.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: Model<f32>,
    pub opt: OptimizerState<f32>,
    /// Completed epochs.
    pub epoch: usize,
}

impl TrainState {
    pub fn new(model: Model<f32>) -> Self {
        let opt = OptimizerState::new(model.trainable_tensors().into_iter().map(|(_, t)| t));
        TrainState { model, opt, epoch: 0 }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(build_model(cfg))
    }
}

/// Pixels the model sees for `batch` during training: augmented when
/// enabled, except for a precomputed extractor, whose stored embeddings
/// describe the original pixels (so the similarity matrix must too).
pub fn training_images(
    model: &Model<f32>,
    batch: &Batch,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<f32>> {
    let pixels_feed_backbone = matches!(model.backbone, FeatureExtractor::TinyCnn(_));
    if cfg.augment && pixels_feed_backbone {
        augment_batch(&batch.images, rng, cfg.rotation_degrees)
    } else {
        Ok(batch.images.clone())
    }
}

/// Batch order and augmentation generator of a 1-based `epoch`.
pub fn epoch_streams<'a>(ds: &'a Dataset, cfg: &TrainConfig, epoch: usize) -> Result<(BatchIter<'a>, ChaCha8Rng)> {
    let order_seed = derive_seed(cfg.seed, purpose::ORDER, epoch as u64);
    let rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, purpose::AUGMENT, epoch as u64));
    Ok((batch_iterator(ds, cfg.batch_size, order_seed, cfg.drop_last)?, rng))
}

/// Forward, backward and one optimizer update on a single batch.
pub fn train_step(
    state: &mut TrainState,
    batch: &Batch,
    cfg: &TrainConfig,
    encoder: &RpeEncoder,
    rng: &mut ChaCha8Rng,
) -> Result<StepOutcome> {
    let images = training_images(&state.model, batch, cfg, rng)?;
    let (mut tape, fwd) = forward_batch(&mut state.model, &images, &batch.ids, &cfg.rpe, encoder, Mode::Train)?;
    let loss = tape.cross_entropy(fwd.logits, &batch.labels)?;
    let grads = tape.backward(loss)?;
    let grads: Vec<Tensor<f32>> = fwd.params.iter().map(|&v| grads.get(v)).collect();
    let mut params: Vec<&mut Tensor<f32>> = state.model.trainable_tensors_mut().into_iter().map(|(_, t)| t).collect();
    let info = radam_step(&mut params, &grads, &mut state.opt, &RadamConfig::from(cfg))?;
    Ok(StepOutcome {
        loss: tape.value(loss).item() as f64,
        correct: count_correct(tape.value(fwd.logits), &batch.labels),
        info,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub steps: usize,
    pub wall_seconds: f64,
}

/// One shuffled pass over `ds`. Shuffle and augmentation draws depend only
/// on `(cfg.seed, epoch)`, so a run resumed from a checkpoint replays the
/// same epochs.
pub fn train_epoch(state: &mut TrainState, ds: &Dataset, cfg: &TrainConfig, encoder: &RpeEncoder) -> Result<EpochMetrics> {
    let start = Instant::now();
    let epoch = state.epoch + 1;
    let (batches, mut rng) = epoch_streams(ds, cfg, epoch)?;
    let (mut loss_sum, mut correct, mut seen, mut steps) = (0.0, 0usize, 0usize, 0usize);
    for batch in batches {
        let out = train_step(state, &batch, cfg, encoder, &mut rng)?;
        loss_sum += out.loss * batch.len() as f64;
        correct += out.correct;
        seen += batch.len();
        steps += 1;
    }
    state.epoch = epoch;
    if seen == 0 {
        return Err(Error::Empty("train_epoch"));
    }
    Ok(EpochMetrics {
        epoch,
        loss: loss_sum / seen as f64,
        accuracy: correct as f64 / seen as f64,
        steps,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub loss: f64,
    pub samples: usize,
}

/// Top-1 accuracy and mean cross-entropy of arbitrary per-batch logits.
///
/// The dataset is shuffled with `seed` and cut into consecutive batches of
/// `batch_size` (the last one may be short), since each prediction may depend
/// on the other members of its batch.
pub fn evaluate_with(
    ds: &Dataset,
    batch_size: usize,
    seed: u64,
    mut logits_of: impl FnMut(&Batch) -> Result<Tensor<f32>>,
) -> Result<EvalMetrics> {
    if ds.is_empty() {
        return Err(Error::Empty("evaluate"));
    }
    if batch_size == 0 {
        return Err(Error::Invalid("batch size must be at least 1".into()));
    }
    let order = shuffled_order(ds.len(), seed);
    let (mut loss_sum, mut correct) = (0.0, 0usize);
    for idx in order.chunks(batch_size) {
        let batch = ds.batch(idx)?;
        let logits = logits_of(&batch)?;
        let (loss, _) = kernels::cross_entropy(&logits, &batch.labels)?;
        loss_sum += loss as f64 * batch.len() as f64;
        correct += count_correct(&logits, &batch.labels);
    }
    Ok(EvalMetrics {
        accuracy: correct as f64 / ds.len() as f64,
        loss: loss_sum / ds.len() as f64,
        samples: ds.len(),
    })
}

/// Evaluation-mode accuracy of `model`; batch norm uses running statistics.
pub fn evaluate(
    model: &mut Model<f32>,
    ds: &Dataset,
    batch_size: usize,
    seed: u64,
    rpe: &RpeConfig,
    encoder: &RpeEncoder,
) -> Result<EvalMetrics> {
    evaluate_with(ds, batch_size, seed, |batch| {
        let (tape, fwd) = forward_batch(model, &batch.images, &batch.ids, rpe, encoder, Mode::Eval)?;
        Ok(tape.value(fwd.logits).clone())
    })
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub accuracy: f64,
    pub wall_seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch,split,loss,accuracy,wall_seconds";

/// Appends rows to a CSV log, writing the header when the file is new.
pub fn append_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    use std::io::Write;
    let fresh = !path.exists();
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(Error::io(path))?;
    let mut text = String::new();
    if fresh {
        text.push_str(METRICS_HEADER);
        text.push('\n');
    }
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{:.3}\n",
            r.epoch, r.split, r.loss, r.accuracy, r.wall_seconds
        ));
    }
    file.write_all(text.as_bytes()).map_err(Error::io(path))
}

/// Per-epoch summary produced by [`fit`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochReport {
    pub train: EpochMetrics,
    pub test: Option<EvalMetrics>,
}

/// Trains until `state.epoch == cfg.epochs`, evaluating on `test` after every
/// epoch when given and appending to `metrics` when given.
pub fn fit(
    state: &mut TrainState,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    metrics: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<Vec<EpochReport>> {
    let encoder = rpe_encoder(&cfg.rpe);
    let mut reports = Vec::new();
    while state.epoch < cfg.epochs {
        let tm = train_epoch(state, train, cfg, &encoder)?;
        let mut rows = vec![MetricsRow {
            epoch: tm.epoch,
            split: "train",
            loss: tm.loss,
            accuracy: tm.accuracy,
            wall_seconds: tm.wall_seconds,
        }];
        let test_metrics = match test {
            Some(ds) => {
                let start = Instant::now();
                let m = evaluate(&mut state.model, ds, cfg.batch_size, eval_seed(cfg), &cfg.rpe, &encoder)?;
                rows.push(MetricsRow {
                    epoch: tm.epoch,
                    split: "test",
                    loss: m.loss,
                    accuracy: m.accuracy,
                    wall_seconds: start.elapsed().as_secs_f64(),
                });
                Some(m)
            }
            None => None,
        };
        if let Some(path) = metrics {
            append_metrics(path, &rows)?;
        }
        let report = EpochReport {
            train: tm,
            test: test_metrics,
        };
        on_epoch(&report);
        reports.push(report);
    }
    Ok(reports)
}

/// Shuffle seed used for evaluation throughout a run.
pub fn eval_seed(cfg: &TrainConfig) -> u64 {
    derive_seed(cfg.seed, purpose::EVAL, 0)
}
