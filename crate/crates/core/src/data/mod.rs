//! Dataset ingestion, the RBT tensor container, synthetic data and batching.

pub mod augment;
pub mod dataset;
pub mod rbt;
pub mod synth;

pub use augment::{augment, augment_with};
pub use dataset::{batch_iterator, Batch, BatchIter, Dataset, Sample};
pub use rbt::{rbt_read, rbt_write, AnyTensor};
pub use synth::{synth_generate, SynthConfig};
