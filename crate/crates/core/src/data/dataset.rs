use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::rbt::{self, AnyTensor};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const LABELS_FILE: &str = "labels.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `3×H×W`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub label: usize,
    pub id: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, num_classes: usize) -> Result<Self> {
        if let Some(first) = samples.first() {
            for s in &samples {
                if s.label >= num_classes {
                    return Err(Error::Label {
                        label: s.label,
                        classes: num_classes,
                    });
                }
                if s.image.shape() != first.image.shape() {
                    return Err(Error::Shape {
                        op: "dataset images",
                        lhs: first.image.shape().to_vec(),
                        rhs: s.image.shape().to_vec(),
                    });
                }
            }
        }
        Ok(Dataset { samples, num_classes })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn image_shape(&self) -> Option<&[usize]> {
        self.samples.first().map(|s| s.image.shape())
    }

    /// Subset by sample index, preserving the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Batch made of the given sample indices, in order.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let images: Vec<Tensor<f32>> = indices.iter().map(|&i| self.samples[i].image.clone()).collect();
        Ok(Batch {
            images: Tensor::stack(&images)?,
            labels: indices.iter().map(|&i| self.samples[i].label).collect(),
            ids: indices.iter().map(|&i| self.samples[i].id.clone()).collect(),
        })
    }

    /// Writes `labels.csv` (`id,path,label`) plus one f32 RBT file per image.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let images = dir.join("images");
        std::fs::create_dir_all(&images).map_err(Error::io(&images))?;
        let mut csv = String::from("id,path,label\n");
        for s in &self.samples {
            let rel = format!("images/{}.rbt", s.id);
            rbt::write_path(&dir.join(&rel), &AnyTensor::F32(s.image.clone()))?;
            csv.push_str(&format!("{},{},{}\n", s.id, rel, s.label));
        }
        let path = dir.join(LABELS_FILE);
        std::fs::write(&path, csv).map_err(Error::io(path))
    }

    /// Reads a directory written by [`Dataset::save`]. The class count is
    /// `max(label) + 1` unless given.
    pub fn load(dir: &Path, num_classes: Option<usize>) -> Result<Self> {
        let path = dir.join(LABELS_FILE);
        let text = std::fs::read_to_string(&path).map_err(Error::io(&path))?;
        let mut samples = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Format(format!("{}:{}: {what}", path.display(), lineno + 1));
            let mut cols = line.split(',');
            let (Some(id), Some(rel), Some(label), None) = (cols.next(), cols.next(), cols.next(), cols.next()) else {
                return Err(bad("expected id,path,label"));
            };
            let label: usize = label.trim().parse().map_err(|_| bad("bad label"))?;
            let image = rbt::read_path(&dir.join(rel))?.into_float()?;
            if image.rank() != 3 {
                return Err(bad("image must be C×H×W"));
            }
            samples.push(Sample {
                image,
                label,
                id: id.to_string(),
            });
        }
        let classes = num_classes.unwrap_or_else(|| samples.iter().map(|s| s.label + 1).max().unwrap_or(0));
        Dataset::new(samples, classes)
    }
}

/// `B` images with labels and ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `B×3×H×W` in `[0, 1]`.
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Reorders the batch so that new position `k` holds old sample `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Batch {
        Batch {
            images: self.images.select_rows(perm),
            labels: perm.iter().map(|&i| self.labels[i]).collect(),
            ids: perm.iter().map(|&i| self.ids[i].clone()).collect(),
        }
    }
}

/// Shuffled sample order for one pass, fixed by `seed`.
pub fn shuffled_order(len: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Iterator over one shuffled pass of a dataset.
pub struct BatchIter<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    drop_last: bool,
    pos: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let remaining = self.order.len() - self.pos;
        if remaining == 0 || (self.drop_last && remaining < self.batch_size) {
            return None;
        }
        let take = remaining.min(self.batch_size);
        let idx = &self.order[self.pos..self.pos + take];
        self.pos += take;
        Some(self.ds.batch(idx).expect("dataset images share a shape"))
    }
}

impl BatchIter<'_> {
    /// Sample indices in the order they will be yielded.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

pub fn batch_iterator(ds: &Dataset, batch_size: usize, seed: u64, drop_last: bool) -> Result<BatchIter<'_>> {
    if ds.is_empty() {
        return Err(Error::Empty("batch_iterator"));
    }
    if batch_size == 0 {
        return Err(Error::Invalid("batch size must be at least 1".into()));
    }
    Ok(BatchIter {
        ds,
        order: shuffled_order(ds.len(), seed),
        batch_size,
        drop_last,
        pos: 0,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    fn toy(n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| Sample {
                image: Tensor::full(&[3, 2, 2], i as f32 / n as f32),
                label: i % 3,
                id: format!("s{i}"),
            })
            .collect();
        Dataset::new(samples, 3).unwrap()
    }

    #[test]
    fn batch_sizes_with_and_without_drop_last() {
        let ds = toy(10);
        let sizes: Vec<usize> = batch_iterator(&ds, 4, 0, false).unwrap().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let sizes: Vec<usize> = batch_iterator(&ds, 4, 0, true).unwrap().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4]);
    }

    #[test]
    fn order_is_seeded_and_a_partition() {
        let ds = toy(10);
        let ids = |seed| -> Vec<String> {
            batch_iterator(&ds, 3, seed, false)
                .unwrap()
                .flat_map(|b| b.ids)
                .collect()
        };
        assert_eq!(ids(5), ids(5));
        assert_ne!(ids(5), ids(6));
        let all: BTreeSet<String> = ids(5).into_iter().collect();
        assert_eq!(all.len(), 10);
        assert_eq!(ids(5).len(), 10);
    }

    #[test]
    fn empty_dataset_errors() {
        let ds = Dataset::new(vec![], 2).unwrap();
        assert!(matches!(batch_iterator(&ds, 4, 0, false), Err(Error::Empty(_))));
    }

    #[test]
    fn invariants_are_checked() {
        let mut samples = toy(2).samples().to_vec();
        samples[1].label = 7;
        assert!(Dataset::new(samples.clone(), 3).is_err());
        samples[1].label = 0;
        samples[1].image = Tensor::zeros(&[3, 4, 4]);
        assert!(Dataset::new(samples, 3).is_err());
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = toy(5);
        ds.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path(), Some(3)).unwrap(), ds);
    }
}
