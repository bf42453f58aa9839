//! Residual vector quantization of emotion embeddings: codebook training
//! under balanced and emotion-targeted regimes, encoding and reconstruction,
//! linear probing, evaluation metrics and similarity-routed classification.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the on-disk precision.

pub mod cache;
pub mod data;
pub mod error;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod probe;
pub mod report;
pub mod router;
pub mod rvq;
pub mod scalar;
pub mod seed;
pub mod synth;
pub mod trainer;

pub use data::{
    pool_utterance, stratify, stratify_indices, AmbiguityStratum, EmbeddingSet, EmotionLabel, Level, SoftLabel,
    Taxonomy, Utterance,
};
pub use error::{Error, ErrorClass, Result};
pub use probe::{probe_predict, probe_train, LinearProbe, ProbeConfig};
pub use report::{EvalReport, ReportRow};
pub use router::{route, route_batch, Aggregation, RouterBank};
pub use rvq::{encode, reconstruct, CodeSequence, Codebook, RvqStack, StackMeta};
pub use scalar::Scalar;
pub use trainer::{train_rvq, RegimeKind, TrainingRegime};

pub type Embeddings = EmbeddingSet<f32>;
pub type Embeddings64 = EmbeddingSet<f64>;
pub type Stack = RvqStack<f32>;
pub type Stack64 = RvqStack<f64>;
pub type Probe = LinearProbe<f32>;
pub type Probe64 = LinearProbe<f64>;
pub type Bank = RouterBank<f32>;
pub type Bank64 = RouterBank<f64>;
