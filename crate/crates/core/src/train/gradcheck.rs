//! Finite-difference check of every parameter gradient of the full model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layers::Params;
use crate::model::{HeadKind, Model};
use crate::numcore::dd::Dd;
use crate::numcore::{worst_entry, Mode, Scalar, Tape, Tensor, WorstEntry, DEFAULT_STEP};
use crate::rpe::similarity_matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckSpec {
    pub batch: usize,
    pub embed_dim: usize,
    pub classes: usize,
    pub seed: u64,
    pub image_side: usize,
    /// Multiplier on the similarity matrix fed to the head (it is a constant
    /// input, so it only shapes the operating point being checked).
    pub rpe_scale: f64,
    pub step: f64,
    /// Entries where both gradients are at most this large are skipped.
    pub floor: f64,
    pub tolerance: f64,
    /// Entries whose f64 difference misses by more than `tolerance *
    /// refine_below` are re-differenced in double-double arithmetic.
    pub refine_below: f64,
}

impl GradcheckSpec {
    pub fn new(batch: usize, embed_dim: usize, classes: usize, seed: u64) -> Self {
        GradcheckSpec {
            batch,
            embed_dim,
            classes,
            seed,
            image_side: 8,
            rpe_scale: 0.01,
            step: DEFAULT_STEP,
            floor: 1e-8,
            tolerance: 1e-5,
            refine_below: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub entries: usize,
    /// Entries whose numeric gradient came from the double-double pass.
    pub refined: usize,
    pub max_rel_error: f64,
    /// Same comparison against the plain `±step` difference alone, with no
    /// extrapolation (still in double-double for refined entries).
    pub plain_max_rel_error: f64,
    pub worst: Option<WorstEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub plain_max_rel_error: f64,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    pub fn entries(&self) -> usize {
        self.tensors.iter().map(|t| t.entries).sum()
    }

    pub fn refined(&self) -> usize {
        self.tensors.iter().map(|t| t.refined).sum()
    }
}

fn rel_error(a: f64, n: f64, floor: f64) -> f64 {
    if a.abs().max(n.abs()) <= floor {
        0.0
    } else {
        (a - n).abs() / a.abs().max(n.abs())
    }
}

/// Backbone, relationship attention and classifier in f64 on random images,
/// cross-entropy against cyclic labels; every trainable entry is perturbed by
/// `±step`.
///
/// An f64 central difference carries roughly `ulp(loss) / step` of rounding
/// noise, and its `step²` truncation term (third derivative) is itself above tolerance for
/// some gradients near the floor. Entries the f64 pass cannot confirm are
/// differenced again on a double-double copy of the model (rounding noise
/// ~1e-27) at `step` and `step/2`, and the two are Richardson-extrapolated,
/// which cancels the `step²` term.
pub fn model_gradcheck(spec: &GradcheckSpec) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut model = Model::<f64>::init(HeadKind::Rbi, spec.embed_dim, spec.classes, spec.seed);
    let (b, side) = (spec.batch, spec.image_side);
    let data = (0..b * 3 * side * side).map(|_| rng.gen_range(0.0f32..=1.0)).collect();
    let images = Tensor::new(&[b, 3, side, side], data)?;
    let ids: Vec<String> = (0..b).map(|i| format!("g{i}")).collect();
    let labels: Vec<usize> = (0..b).map(|i| i % spec.classes).collect();
    let similarity = similarity_matrix(&images, 1e-8, 1.0, false)?;
    let s = similarity.scaled::<f64>(spec.rpe_scale);
    let s_dd = similarity.scaled::<Dd>(spec.rpe_scale);

    fn loss_of<T: Scalar>(
        model: &mut Model<T>,
        images: &Tensor<f32>,
        ids: &[String],
        s: &Tensor<T>,
        labels: &[usize],
    ) -> Result<T> {
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, images, ids, Some(s), Mode::Train)?;
        let loss = tape.cross_entropy(fwd.logits, labels)?;
        Ok(tape.value(loss).item())
    }

    fn central<T: Scalar>(
        model: &mut Model<T>,
        p: usize,
        i: usize,
        step: T,
        loss: &mut impl FnMut(&mut Model<T>) -> Result<T>,
    ) -> Result<T> {
        let orig = model.trainable_tensors_mut()[p].1.data()[i];
        model.trainable_tensors_mut()[p].1.data_mut()[i] = orig + step;
        let up = loss(model);
        model.trainable_tensors_mut()[p].1.data_mut()[i] = orig - step;
        let down = loss(model);
        model.trainable_tensors_mut()[p].1.data_mut()[i] = orig;
        Ok((up? - down?) / (step + step))
    }

    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, &images, &ids, Some(&s), Mode::Train)?;
    let loss = tape.cross_entropy(fwd.logits, &labels)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = fwd.params.iter().map(|&v| grads.get(v)).collect();
    let names: Vec<String> = model.trainable_tensors().into_iter().map(|(n, _)| n).collect();
    let mut model_dd = model.cast::<Dd>();

    let mut f64_loss = |m: &mut Model<f64>| loss_of(m, &images, &ids, &s, &labels);
    let mut dd_loss = |m: &mut Model<Dd>| loss_of(m, &images, &ids, &s_dd, &labels);
    let suspect = spec.tolerance * spec.refine_below;
    let mut tensors = Vec::with_capacity(names.len());
    for (p, (name, grad)) in names.into_iter().zip(&analytic).enumerate() {
        let n = grad.numel();
        let mut numeric = vec![0.0; n];
        let mut plain = vec![0.0; n];
        let mut refined = 0;
        for (i, (slot, plain)) in numeric.iter_mut().zip(&mut plain).enumerate() {
            *slot = central(&mut model, p, i, spec.step, &mut f64_loss)?;
            *plain = *slot;
            if rel_error(grad.data()[i], *slot, spec.floor) > suspect {
                let h = Dd::of(spec.step);
                let d1 = central(&mut model_dd, p, i, h, &mut dd_loss)?;
                let d2 = central(&mut model_dd, p, i, h / Dd::of(2.0), &mut dd_loss)?;
                *plain = d1.f64();
                *slot = ((d2 * Dd::of(4.0) - d1) / Dd::of(3.0)).f64();
                refined += 1;
            }
        }
        let numeric = Tensor::new(grad.shape(), numeric)?;
        let plain = Tensor::new(grad.shape(), plain)?;
        let worst = worst_entry(grad, &numeric, spec.floor);
        tensors.push(TensorCheck {
            name,
            entries: n,
            refined,
            max_rel_error: worst.map_or(0.0, |w| w.rel_error),
            plain_max_rel_error: worst_entry(grad, &plain, spec.floor).map_or(0.0, |w| w.rel_error),
            worst,
        });
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    let plain_max_rel_error = tensors.iter().map(|t| t.plain_max_rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        tensors,
        max_rel_error,
        plain_max_rel_error,
        tolerance: spec.tolerance,
    })
}
