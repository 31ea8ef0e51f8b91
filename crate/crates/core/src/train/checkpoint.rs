//! Checkpoint directories: a text manifest plus one RBT file per tensor.
//!
//! ```text
//! format = rbi-checkpoint/1
//! head = rbi
//! ...
//! tensor rra.w_q f32 64,64 tensors/rra.w_q.rbt
//! tensor opt.m.rra.w_q f32 64,64 tensors/opt.m.rra.w_q.rbt
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::backbone::{FeatureExtractor, Precomputed};
use crate::data::rbt::{self, AnyTensor};
use crate::error::{Error, Result};
use crate::layers::Params;
use crate::model::{Head, HeadKind, Model, Standardize};
use crate::numcore::{DType, Tensor};
use crate::train::radam::OptimizerState;
use crate::train::trainer::TrainState;

pub const FORMAT_VERSION: &str = "rbi-checkpoint/1";
pub const MANIFEST_FILE: &str = "manifest.txt";
const TENSOR_DIR: &str = "tensors";
const PRECOMPUTED_DIR: &str = "precomputed";

fn join_dims(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
}

fn triple(t: [f64; 3]) -> String {
    format!("{},{},{}", t[0], t[1], t[2])
}

/// Writes `state` to `dir`, creating it if needed.
pub fn checkpoint_save(state: &TrainState, dir: &Path) -> Result<()> {
    let tensor_dir = dir.join(TENSOR_DIR);
    std::fs::create_dir_all(&tensor_dir).map_err(Error::io(&tensor_dir))?;
    let model = &state.model;
    let extractor = match &model.backbone {
        FeatureExtractor::TinyCnn(_) => "tiny_cnn",
        FeatureExtractor::Precomputed(p) => {
            p.export(&dir.join(PRECOMPUTED_DIR))?;
            "precomputed"
        }
    };
    let softmax_axis = match &model.head {
        Head::Rbi(p) => p.softmax_axis,
        Head::Linear(_) => 0,
    };
    let mut manifest = format!(
        "format = {FORMAT_VERSION}\nhead = {}\nextractor = {extractor}\nembed_dim = {}\nclasses = {}\n\
         softmax_axis = {softmax_axis}\nnorm_mean = {}\nnorm_std = {}\nstep = {}\nepoch = {}\n",
        model.kind().name(),
        model.embed_dim(),
        model.classes(),
        triple(model.standardize.mean),
        triple(model.standardize.std),
        state.opt.t,
        state.epoch,
    );

    let mut entries: Vec<(String, &Tensor<f32>)> = model.tensors().into_iter().map(|(n, t, _)| (n, t)).collect();
    let trainable: Vec<String> = model.trainable_tensors().into_iter().map(|(n, _)| n).collect();
    if trainable.len() != state.opt.m.len() {
        return Err(Error::Invalid(format!(
            "optimizer tracks {} tensors, model has {} trainable",
            state.opt.m.len(),
            trainable.len()
        )));
    }
    for (name, (m, v)) in trainable.iter().zip(state.opt.m.iter().zip(&state.opt.v)) {
        entries.push((format!("opt.m.{name}"), m));
        entries.push((format!("opt.v.{name}"), v));
    }
    for (name, t) in entries {
        let rel = format!("{TENSOR_DIR}/{name}.rbt");
        rbt::write_path(&dir.join(&rel), &AnyTensor::F32(t.clone()))?;
        manifest.push_str(&format!("tensor {name} {} {} {rel}\n", DType::F32.name(), join_dims(t.shape())));
    }
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest).map_err(Error::io(path))
}

struct Manifest {
    fields: BTreeMap<String, String>,
    tensors: Vec<(String, Vec<usize>, String)>,
}

fn parse_manifest(text: &str) -> Result<Manifest> {
    let bad = |lineno: usize, msg: &str| Error::Format(format!("manifest line {lineno}: {msg}"));
    let mut fields = BTreeMap::new();
    let mut tensors = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("tensor ") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            let [name, dtype, dims, file] = parts[..] else {
                return Err(bad(i + 1, "expected `tensor name dtype dims file`"));
            };
            if DType::parse(dtype) != Some(DType::F32) {
                return Err(bad(i + 1, &format!("unsupported dtype {dtype}")));
            }
            let shape = if dims.is_empty() || dims == "-" {
                Vec::new()
            } else {
                dims.split(',')
                    .map(|d| d.parse().map_err(|_| bad(i + 1, "bad dims")))
                    .collect::<Result<Vec<usize>>>()?
            };
            if !seen.insert(name.to_string()) {
                return Err(bad(i + 1, &format!("tensor {name} listed twice")));
            }
            tensors.push((name.to_string(), shape, file.to_string()));
        } else {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(i + 1, "expected `key = value`"))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Ok(Manifest { fields, tensors })
}

impl Manifest {
    fn get(&self, key: &str) -> Result<&str> {
        self.fields
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("manifest is missing {key}")))
    }

    fn num<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let v = self.get(key)?;
        v.parse().map_err(|_| Error::Format(format!("manifest {key}: bad value {v:?}")))
    }

    fn triple(&self, key: &str) -> Result<[f64; 3]> {
        let parts: Vec<f64> = self
            .get(key)?
            .split(',')
            .map(|p| p.trim().parse().map_err(|_| Error::Format(format!("manifest {key}: bad value"))))
            .collect::<Result<_>>()?;
        parts
            .try_into()
            .map_err(|_| Error::Format(format!("manifest {key}: expected three values")))
    }
}

/// Reads a checkpoint written by [`checkpoint_save`]. Nothing is returned
/// unless every listed tensor reads back with the declared shape.
pub fn checkpoint_load(dir: &Path) -> Result<TrainState> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(Error::io(&path))?;
    let manifest = parse_manifest(&text)?;
    let version = manifest.get("format")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version:?}, expected {FORMAT_VERSION:?}"
        )));
    }
    let kind = HeadKind::parse(manifest.get("head")?)
        .ok_or_else(|| Error::Format(format!("unknown head {:?}", manifest.get("head").unwrap_or(""))))?;
    let embed_dim: usize = manifest.num("embed_dim")?;
    let classes: usize = manifest.num("classes")?;
    let mut model: Model<f32> = match manifest.get("extractor")? {
        "tiny_cnn" => Model::init(kind, embed_dim, classes, 0),
        "precomputed" => {
            let p = Precomputed::load_dir(&dir.join(PRECOMPUTED_DIR))?;
            Model::with_extractor(FeatureExtractor::Precomputed(p), kind, classes, 0)
        }
        other => return Err(Error::Format(format!("unknown extractor {other:?}"))),
    };
    if let Head::Rbi(p) = &mut model.head {
        p.softmax_axis = manifest.num("softmax_axis")?;
    }
    model.standardize = Standardize {
        mean: manifest.triple("norm_mean")?,
        std: manifest.triple("norm_std")?,
    };

    let mut loaded: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
    for (name, shape, file) in &manifest.tensors {
        let t: Tensor<f32> = rbt::read_path(&dir.join(file))?.into_exact()?;
        if t.shape() != shape.as_slice() {
            return Err(Error::Format(format!(
                "tensor {name}: manifest says {shape:?}, file holds {:?}",
                t.shape()
            )));
        }
        loaded.insert(name.clone(), t);
    }

    let trainable: Vec<String> = model.trainable_tensors().into_iter().map(|(n, _)| n).collect();
    let mut take = |name: &str, expect: &[usize]| -> Result<Tensor<f32>> {
        let t = loaded
            .remove(name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no tensor {name}")))?;
        if t.shape() != expect {
            return Err(Error::Format(format!(
                "tensor {name}: expected shape {expect:?}, found {:?}",
                t.shape()
            )));
        }
        Ok(t)
    };
    let mut model_tensors = Vec::new();
    for (name, t, _) in model.tensors() {
        model_tensors.push(take(&name, t.shape())?);
    }
    let mut m = Vec::new();
    let mut v = Vec::new();
    for (name, t) in trainable.iter().zip(model.trainable_tensors()) {
        m.push(take(&format!("opt.m.{name}"), t.1.shape())?);
        v.push(take(&format!("opt.v.{name}"), t.1.shape())?);
    }
    if let Some(extra) = loaded.keys().next() {
        return Err(Error::Format(format!("unexpected tensor {extra} in checkpoint")));
    }
    for ((_, slot, _), t) in model.tensors_mut().into_iter().zip(model_tensors) {
        *slot = t;
    }
    Ok(TrainState {
        model,
        opt: OptimizerState {
            m,
            v,
            t: manifest.num("step")?,
        },
        epoch: manifest.num("epoch")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrainConfig;

    fn state() -> TrainState {
        let mut cfg = TrainConfig::default();
        cfg.embed_dim = 6;
        cfg.classes = 3;
        cfg.softmax_axis = 1;
        let mut s = TrainState::from_config(&cfg);
        s.opt.t = 17;
        s.epoch = 2;
        s.opt.m[0].data_mut()[0] = 0.25;
        s
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let s = state();
        checkpoint_save(&s, dir.path()).unwrap();
        assert_eq!(checkpoint_load(dir.path()).unwrap(), s);
    }

    #[test]
    fn manifest_lists_every_tensor_once() {
        let dir = tempfile::tempdir().unwrap();
        let s = state();
        checkpoint_save(&s, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        let names: Vec<&str> = text
            .lines()
            .filter_map(|l| l.strip_prefix("tensor "))
            .map(|l| l.split_whitespace().next().unwrap())
            .collect();
        let unique: BTreeSet<&str> = names.iter().copied().collect();
        assert_eq!(unique.len(), names.len());
        assert_eq!(names.len(), s.model.tensors().len() + 2 * s.opt.m.len());
    }

    #[test]
    fn corrupt_payload_and_version_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        checkpoint_save(&state(), dir.path()).unwrap();
        let victim = dir.path().join("tensors/rra.w_q.rbt");
        let bytes = std::fs::read(&victim).unwrap();
        std::fs::write(&victim, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(checkpoint_load(dir.path()), Err(Error::PayloadLength { .. })));

        std::fs::write(&victim, &bytes).unwrap();
        let mpath = dir.path().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&mpath).unwrap();
        std::fs::write(&mpath, text.replace(FORMAT_VERSION, "rbi-checkpoint/0")).unwrap();
        assert!(matches!(checkpoint_load(dir.path()), Err(Error::Format(_))));
    }
}
