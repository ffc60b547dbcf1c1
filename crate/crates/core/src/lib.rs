//! Multiple instance learning with adaptive instance selection and
//! linear-time sequence encoders.
//!
//! A bag of `N` instance feature vectors is scored by a shared instance
//! classifier; a fixed-size subset is chosen by a fused
//! relevance/diversity/uncertainty score ([`aps`]); the subset is encoded in
//! bag order by a bidirectional GRU/LSTM or a selective state-space stack
//! ([`encoders`]) and pooled into a bag prediction. Everything runs on a
//! small reverse-mode tape ([`tape`]) in double precision.

pub mod aps;
pub mod checkpoint;
pub mod data;
pub mod encoders;
pub mod error;
pub mod gradcheck;
pub mod heatmap;
pub mod metrics;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod training;

pub use aps::{ApsResult, ApsWeights, InstanceLogits, SelectionConfig, Strategy};
pub use data::{Bag, DatasetManifest, SplitSpec, SynthSpec};
pub use encoders::{EncoderConfig, EncoderKind, MambaConfig, Model, ModelConfig};
pub use error::{Error, Result};
pub use metrics::{EvalReport, FlopsBreakdown};
pub use params::{ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Matrix;
pub use training::{EpochRecord, FitOutcome, InstanceScope, TrainConfig};
