//! Feature extractors producing the `B×D` embeddings consumed by the head.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;

use crate::data::rbt::{self, AnyTensor};
use crate::error::{Error, Result};
use crate::layers::{prefixed, uniform, BatchNorm, BatchNormVars, Linear, LinearVars, ParamKind, Params};
use crate::numcore::{Mode, Scalar, Tape, Tensor, Var};

pub const CHANNELS: [usize; 3] = [16, 32, 64];
pub const MIN_SIDE: usize = 8;

/// Conv → batch norm → ReLU → 2×2 average pool.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock<T> {
    pub weight: Tensor<T>,
    pub bn: BatchNorm<T>,
}

/// Three conv blocks with (16, 32, 64) channels, global average pooling and
/// an affine projection to the embedding width.
#[derive(Clone, Debug, PartialEq)]
pub struct TinyCnn<T> {
    pub blocks: Vec<ConvBlock<T>>,
    pub proj: Linear<T>,
}

#[derive(Clone, Debug)]
pub struct TinyCnnVars {
    pub blocks: Vec<(Var, BatchNormVars)>,
    pub proj: LinearVars,
}

impl TinyCnnVars {
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for (w, bn) in &self.blocks {
            out.extend([*w, bn.gamma, bn.beta]);
        }
        out.extend([self.proj.weight, self.proj.bias]);
        out
    }
}

impl<T: Scalar> TinyCnn<T> {
    pub fn init(in_channels: usize, embed_dim: usize, rng: &mut impl Rng) -> Self {
        let mut cin = in_channels;
        let blocks = CHANNELS
            .iter()
            .map(|&cout| {
                let bound = 1.0 / ((cin * 9) as f64).sqrt();
                let block = ConvBlock {
                    weight: uniform(&[cout, cin, 3, 3], bound, rng),
                    bn: BatchNorm::new(cout),
                };
                cin = cout;
                block
            })
            .collect();
        TinyCnn {
            blocks,
            proj: Linear::init(cin, embed_dim, rng),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.proj.weight.shape()[1]
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> TinyCnnVars {
        TinyCnnVars {
            blocks: self
                .blocks
                .iter()
                .map(|b| (tape.param(b.weight.clone()), b.bn.bind(tape)))
                .collect(),
            proj: self.proj.bind(tape),
        }
    }

    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, vars: &TinyCnnVars, mode: Mode) -> Result<Var> {
        let (_, _, h, w) = tape.value(x).dims4("tiny_cnn")?;
        if h < MIN_SIDE || w < MIN_SIDE {
            return Err(Error::Invalid(format!(
                "tiny_cnn input {h}×{w} is smaller than {MIN_SIDE}×{MIN_SIDE}"
            )));
        }
        let mut h = x;
        for (block, (wv, bnv)) in self.blocks.iter_mut().zip(&vars.blocks) {
            let kernel = block.weight.shape()[2];
            let conv = tape.conv2d(h, *wv, 1, kernel / 2)?;
            let normed = block.bn.forward(tape, conv, *bnv, mode)?;
            let act = tape.relu(normed);
            h = tape.avg_pool2(act)?;
        }
        let pooled = tape.global_avg_pool(h)?;
        Linear::forward(tape, pooled, vars.proj)
    }

    pub fn cast<U: Scalar>(&self) -> TinyCnn<U> {
        TinyCnn {
            blocks: self
                .blocks
                .iter()
                .map(|b| ConvBlock {
                    weight: b.weight.cast(),
                    bn: b.bn.cast(),
                })
                .collect(),
            proj: self.proj.cast(),
        }
    }

    pub(crate) fn tensors_with<'a>(&'a self, prefix: &str) -> Vec<(String, &'a Tensor<T>, ParamKind)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            let p = prefixed(prefix, &format!("block{i}"));
            out.push((prefixed(&p, "weight"), &b.weight, ParamKind::Trainable));
            out.extend(b.bn.tensors_with(&prefixed(&p, "bn")));
        }
        out.extend(self.proj.tensors_with(&prefixed(prefix, "proj")));
        out
    }

    pub(crate) fn tensors_mut_with<'a>(&'a mut self, prefix: &str) -> Vec<(String, &'a mut Tensor<T>, ParamKind)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = prefixed(prefix, &format!("block{i}"));
            out.push((prefixed(&p, "weight"), &mut b.weight, ParamKind::Trainable));
            out.extend(b.bn.tensors_mut_with(&prefixed(&p, "bn")));
        }
        out.extend(self.proj.tensors_mut_with(&prefixed(prefix, "proj")));
        out
    }
}

impl<T: Scalar> Params<T> for TinyCnn<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>, ParamKind)> {
        self.tensors_with("")
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>, ParamKind)> {
        self.tensors_mut_with("")
    }
}

/// Embeddings computed elsewhere, looked up by sample id.
#[derive(Clone, Debug, PartialEq)]
pub struct Precomputed {
    embeddings: Tensor<f64>,
    rows: HashMap<String, usize>,
}

pub const EMBEDDINGS_FILE: &str = "embeddings.rbt";
pub const INDEX_FILE: &str = "index.csv";

impl Precomputed {
    pub fn new(embeddings: Tensor<f64>, ids: &[String]) -> Result<Self> {
        let (n, _) = embeddings.dims2("precomputed embeddings")?;
        if ids.len() != n {
            return Err(Error::Format(format!("{} ids for {n} embedding rows", ids.len())));
        }
        let rows = ids.iter().cloned().zip(0..).collect();
        Ok(Precomputed { embeddings, rows })
    }

    pub fn embed_dim(&self) -> usize {
        self.embeddings.shape()[1]
    }

    pub fn len(&self) -> usize {
        self.embeddings.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stored rows for `ids`, in request order.
    pub fn lookup<T: Scalar>(&self, ids: &[String]) -> Result<Tensor<T>> {
        let rows = ids
            .iter()
            .map(|id| self.rows.get(id).copied().ok_or_else(|| Error::UnknownId(id.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.embeddings.select_rows(&rows).cast())
    }

    /// Writes `embeddings.rbt` (f64) and `index.csv` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        rbt::write_path(&dir.join(EMBEDDINGS_FILE), &AnyTensor::F64(self.embeddings.clone()))?;
        let mut ordered: Vec<(&String, &usize)> = self.rows.iter().collect();
        ordered.sort_by_key(|(_, &r)| r);
        let mut csv = String::from("id,row\n");
        for (id, row) in ordered {
            csv.push_str(&format!("{id},{row}\n"));
        }
        let path = dir.join(INDEX_FILE);
        std::fs::write(&path, csv).map_err(Error::io(path))
    }

    /// Reads an embedding matrix and its `id,row` index.
    pub fn load(embeddings: &Path, index: &Path) -> Result<Self> {
        let table = match rbt::read_path(embeddings)? {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t,
            AnyTensor::U8 { .. } => {
                return Err(Error::Format("precomputed embeddings must be f32 or f64".into()))
            }
        };
        let (n, _) = table
            .dims2("precomputed embeddings")
            .map_err(|_| Error::Format(format!("embeddings must be rank 2, got {:?}", table.shape())))?;
        let text = std::fs::read_to_string(index).map_err(Error::io(index))?;
        let mut rows = HashMap::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let (id, row) = line
                .rsplit_once(',')
                .ok_or_else(|| Error::Format(format!("{}:{}: expected id,row", index.display(), lineno + 1)))?;
            let row: usize = row
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("{}:{}: bad row {row:?}", index.display(), lineno + 1)))?;
            if row >= n {
                return Err(Error::Format(format!("row {row} out of range for {n} embeddings")));
            }
            rows.insert(id.to_string(), row);
        }
        Ok(Precomputed {
            embeddings: table,
            rows,
        })
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        Self::load(&dir.join(EMBEDDINGS_FILE), &dir.join(INDEX_FILE))
    }
}

/// Source of embeddings for the head.
#[derive(Clone, Debug, PartialEq)]
pub enum FeatureExtractor<T> {
    TinyCnn(TinyCnn<T>),
    /// Not trainable.
    Precomputed(Precomputed),
}

#[derive(Clone, Debug)]
pub enum ExtractorVars {
    TinyCnn(TinyCnnVars),
    Precomputed,
}

impl ExtractorVars {
    pub fn all(&self) -> Vec<Var> {
        match self {
            ExtractorVars::TinyCnn(v) => v.all(),
            ExtractorVars::Precomputed => Vec::new(),
        }
    }
}

impl<T: Scalar> FeatureExtractor<T> {
    pub fn embed_dim(&self) -> usize {
        match self {
            FeatureExtractor::TinyCnn(c) => c.embed_dim(),
            FeatureExtractor::Precomputed(p) => p.embed_dim(),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> ExtractorVars {
        match self {
            FeatureExtractor::TinyCnn(c) => ExtractorVars::TinyCnn(c.bind(tape)),
            FeatureExtractor::Precomputed(_) => ExtractorVars::Precomputed,
        }
    }

    /// Embeddings for a batch. `images` feeds the CNN; `ids` the lookup.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        images: &Tensor<T>,
        ids: &[String],
        vars: &ExtractorVars,
        mode: Mode,
    ) -> Result<Var> {
        match (self, vars) {
            (FeatureExtractor::TinyCnn(cnn), ExtractorVars::TinyCnn(v)) => {
                let x = tape.constant(images.clone());
                cnn.forward(tape, x, v, mode)
            }
            (FeatureExtractor::Precomputed(p), _) => Ok(tape.constant(p.lookup(ids)?)),
            _ => Err(Error::Invalid("extractor bound with mismatched variables".into())),
        }
    }

    pub fn cast<U: Scalar>(&self) -> FeatureExtractor<U> {
        match self {
            FeatureExtractor::TinyCnn(c) => FeatureExtractor::TinyCnn(c.cast()),
            FeatureExtractor::Precomputed(p) => FeatureExtractor::Precomputed(p.clone()),
        }
    }

    pub(crate) fn tensors_with<'a>(&'a self, prefix: &str) -> Vec<(String, &'a Tensor<T>, ParamKind)> {
        match self {
            FeatureExtractor::TinyCnn(c) => c.tensors_with(prefix),
            FeatureExtractor::Precomputed(_) => Vec::new(),
        }
    }

    pub(crate) fn tensors_mut_with<'a>(&'a mut self, prefix: &str) -> Vec<(String, &'a mut Tensor<T>, ParamKind)> {
        match self {
            FeatureExtractor::TinyCnn(c) => c.tensors_mut_with(prefix),
            FeatureExtractor::Precomputed(_) => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn output_shape_for_various_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cnn = TinyCnn::<f32>::init(3, 12, &mut rng);
        for (h, w) in [(8, 8), (9, 13), (32, 32)] {
            let mut tape = Tape::new();
            let vars = cnn.bind(&mut tape);
            let x = tape.constant(uniform(&[2, 3, h, w], 1.0, &mut rng));
            let n = cnn.forward(&mut tape, x, &vars, Mode::Train).unwrap();
            assert_eq!(tape.shape(n), &[2, 12]);
            assert!(tape.value(n).is_finite());
        }
    }

    #[test]
    fn zero_weights_embed_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cnn = TinyCnn::<f64>::init(3, 4, &mut rng);
        for b in &mut cnn.blocks {
            b.weight = Tensor::zeros(b.weight.shape());
        }
        cnn.proj.weight = Tensor::zeros(cnn.proj.weight.shape());
        cnn.proj.bias = Tensor::zeros(cnn.proj.bias.shape());
        let mut tape = Tape::new();
        let vars = cnn.bind(&mut tape);
        let x = tape.constant(uniform(&[3, 3, 8, 8], 1.0, &mut rng));
        let n = cnn.forward(&mut tape, x, &vars, Mode::Eval).unwrap();
        assert!(tape.value(n).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_small_input_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cnn = TinyCnn::<f32>::init(3, 4, &mut rng);
        let mut tape = Tape::new();
        let vars = cnn.bind(&mut tape);
        let x = tape.constant(Tensor::zeros(&[1, 3, 7, 8]));
        assert!(matches!(cnn.forward(&mut tape, x, &vars, Mode::Eval), Err(Error::Invalid(_))));
    }

    #[test]
    fn bind_order_matches_listing() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cnn = TinyCnn::<f32>::init(3, 4, &mut rng);
        let mut tape = Tape::new();
        let vars = cnn.bind(&mut tape);
        let listed = cnn.trainable_tensors();
        assert_eq!(listed.len(), vars.all().len());
        for ((_, t), v) in listed.iter().zip(vars.all()) {
            assert_eq!(*t, tape.value(v));
        }
    }

    #[test]
    fn precomputed_lookup_in_request_order() {
        let data: Vec<f64> = (0..40).map(|v| v as f64).collect();
        let ids: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let p = Precomputed::new(Tensor::new(&[10, 4], data).unwrap(), &ids).unwrap();
        let rows: Tensor<f64> = p.lookup(&["s3".into(), "s7".into()]).unwrap();
        assert_eq!(rows.data(), &[12., 13., 14., 15., 28., 29., 30., 31.]);
        let err = p.lookup::<f64>(&["nope".into()]).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }
}
