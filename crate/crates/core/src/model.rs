//! The full classifier: feature extractor followed by either the relationship
//! attention head or a plain affine head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{ExtractorVars, FeatureExtractor, TinyCnn};
use crate::error::{Error, Result};
use crate::layers::{Linear, LinearVars, ParamKind, Params};
use crate::numcore::{Mode, Scalar, Tape, Tensor, Var};
use crate::rra::{rra_forward, RraOutput, RraParams, RraVars};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    /// Relationship attention over the batch, then an affine classifier.
    Rbi,
    /// Affine classifier on the embeddings alone.
    Baseline,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Rbi => "rbi",
            HeadKind::Baseline => "baseline",
        }
    }

    pub fn parse(s: &str) -> Option<HeadKind> {
        match s {
            "rbi" => Some(HeadKind::Rbi),
            "baseline" => Some(HeadKind::Baseline),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head<T> {
    Rbi(RraParams<T>),
    Linear(Linear<T>),
}

#[derive(Clone, Debug)]
pub enum HeadVars {
    Rbi(RraVars),
    Linear(LinearVars),
}

/// Per-channel standardization applied to backbone inputs only.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Standardize {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Standardize {
    fn default() -> Self {
        Standardize {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl Standardize {
    pub fn identity() -> Self {
        Standardize {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    pub fn apply<T: Scalar>(&self, images: &Tensor<f32>) -> Result<Tensor<T>> {
        let (b, c, h, w) = images.dims4("standardize")?;
        if c != 3 {
            return Err(Error::Shape {
                op: "standardize expects 3 channels",
                lhs: images.shape().to_vec(),
                rhs: vec![3],
            });
        }
        let mut out = Vec::with_capacity(images.numel());
        for (p, plane) in images.data().chunks(h * w).enumerate().take(b * c) {
            let ch = p % 3;
            out.extend(plane.iter().map(|&v| T::of((v as f64 - self.mean[ch]) / self.std[ch])));
        }
        Tensor::new(images.shape(), out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub backbone: FeatureExtractor<T>,
    pub head: Head<T>,
    pub standardize: Standardize,
}

/// Handles produced by [`Model::forward`].
#[derive(Clone, Debug)]
pub struct Forward {
    pub embeddings: Var,
    pub logits: Var,
    pub rra: Option<RraOutput>,
    /// Trainable leaves in the order of [`Params::trainable_tensors`].
    pub params: Vec<Var>,
}

impl<T: Scalar> Model<T> {
    /// Tiny CNN backbone plus the requested head, initialized from `seed`.
    /// The backbone is drawn first, so both head kinds share it for a seed.
    pub fn init(kind: HeadKind, embed_dim: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = FeatureExtractor::TinyCnn(TinyCnn::init(3, embed_dim, &mut rng));
        Self::with_extractor_rng(backbone, kind, classes, &mut rng)
    }

    pub fn with_extractor(backbone: FeatureExtractor<T>, kind: HeadKind, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_extractor_rng(backbone, kind, classes, &mut rng)
    }

    fn with_extractor_rng(backbone: FeatureExtractor<T>, kind: HeadKind, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let dim = backbone.embed_dim();
        let head = match kind {
            HeadKind::Rbi => Head::Rbi(RraParams::init(dim, classes, rng)),
            HeadKind::Baseline => Head::Linear(Linear::init(dim, classes, rng)),
        };
        Model {
            backbone,
            head,
            standardize: Standardize::default(),
        }
    }

    pub fn kind(&self) -> HeadKind {
        match self.head {
            Head::Rbi(_) => HeadKind::Rbi,
            Head::Linear(_) => HeadKind::Baseline,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.backbone.embed_dim()
    }

    pub fn classes(&self) -> usize {
        match &self.head {
            Head::Rbi(p) => p.classes(),
            Head::Linear(l) => l.weight.shape()[1],
        }
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            backbone: self.backbone.cast(),
            head: match &self.head {
                Head::Rbi(p) => Head::Rbi(p.cast()),
                Head::Linear(l) => Head::Linear(l.cast()),
            },
            standardize: self.standardize,
        }
    }

    /// Embeddings only, on an existing tape.
    pub fn embed(
        &mut self,
        tape: &mut Tape<T>,
        images: &Tensor<f32>,
        ids: &[String],
        mode: Mode,
    ) -> Result<(Var, ExtractorVars)> {
        let x = match self.backbone {
            FeatureExtractor::TinyCnn(_) => self.standardize.apply(images)?,
            FeatureExtractor::Precomputed(_) => Tensor::zeros(&[0]),
        };
        let vars = self.backbone.bind(tape);
        let n = self.backbone.forward(tape, &x, ids, &vars, mode)?;
        Ok((n, vars))
    }

    /// Forward pass over a batch of `[0, 1]` images.
    ///
    /// `similarity` is the already scaled `B×B` relationship matrix; it is
    /// required by the attention head and ignored by the baseline.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        images: &Tensor<f32>,
        ids: &[String],
        similarity: Option<&Tensor<T>>,
        mode: Mode,
    ) -> Result<Forward> {
        let (n, bvars) = self.embed(tape, images, ids, mode)?;
        let mut params = bvars.all();
        match &mut self.head {
            Head::Rbi(rra) => {
                let s = similarity.ok_or_else(|| Error::Invalid("attention head needs a similarity matrix".into()))?;
                let vars = rra.bind(tape);
                params.extend(vars.all());
                let s = tape.constant(s.clone());
                let out = rra_forward(tape, n, s, rra, &vars, mode)?;
                Ok(Forward {
                    embeddings: n,
                    logits: out.logits,
                    rra: Some(out),
                    params,
                })
            }
            Head::Linear(lin) => {
                let vars = lin.bind(tape);
                params.extend([vars.weight, vars.bias]);
                let logits = Linear::forward(tape, n, vars)?;
                Ok(Forward {
                    embeddings: n,
                    logits,
                    rra: None,
                    params,
                })
            }
        }
    }
}

impl<T: Scalar> Params<T> for Model<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>, ParamKind)> {
        let mut out = self.backbone.tensors_with("backbone");
        match &self.head {
            Head::Rbi(p) => out.extend(p.tensors_with("rra")),
            Head::Linear(l) => out.extend(l.tensors_with("head")),
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>, ParamKind)> {
        let mut out = self.backbone.tensors_mut_with("backbone");
        match &mut self.head {
            Head::Rbi(p) => out.extend(p.tensors_mut_with("rra")),
            Head::Linear(l) => out.extend(l.tensors_mut_with("head")),
        }
        out
    }
}
