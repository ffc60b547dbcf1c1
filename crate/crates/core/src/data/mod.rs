//! Bag files, dataset manifests, benchmark ingestion, synthetic data and
//! train/validation splits.

pub mod bag;
pub mod manifest;
pub mod musk;
pub mod split;
pub mod synth;

pub use bag::{read_bag, write_bag, Bag};
pub use manifest::{BagEntry, DatasetManifest, MANIFEST_FILE};
pub use musk::{load_musk_style, LabelColumn, MuskOptions};
pub use split::{SplitSpec, SPLIT_FILE};
pub use synth::{synth_witness, SynthDataset, SynthSpec};
