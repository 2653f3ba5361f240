//! Retrieval-augmented dialog state tracking, desk scale.
//!
//! The crate covers the full experiment loop for biasing a simulated
//! speech-understanding model with retrieved entities:
//!
//! - [`data`]: domain types and bit-exact file formats (entity pools, dialog
//!   corpora, frame stores, weight tensors).
//! - [`synth`]: seeded synthetic corpora, pseudo-audio frames, and a
//!   noisy-channel text corrupter.
//! - [`encoder`]: a small shared dual encoder with contrastive training and
//!   gradient checking.
//! - [`retriever`]: entity indexes, exact and partitioned cosine search, and
//!   the top-k/threshold selection policy.
//! - [`prompt`]: model input assembly and the `[ASR] ... [DST] ...` output
//!   grammar.
//! - [`harness`]: auto-regressive multi-turn inference with pluggable
//!   predictors.
//! - [`metrics`]: JGA, categorical slot error rate, word error rate, and
//!   report generation.
//!
//! Everything is deterministic given explicit seeds; see [`rng`] for the
//! generator and seed-derivation scheme.

pub mod data;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod prompt;
pub mod retriever;
pub mod rng;
pub mod synth;
pub mod text;

pub use data::{
    Dialog, DialogState, Entity, EntityCategory, EntityPool, FrameSequence, FrameStore, Mention,
    SlotValue, Speaker, Turn,
};
pub use encoder::{EncoderDims, EncoderParams, TrainConfig, TrainPair, UnitEmbedding};
pub use error::{Error, Result};
pub use harness::{PredictorOutput, RunResult};
pub use retriever::{EntityIndex, RankedEntity, SelectionPolicy};
pub use synth::{ChannelConfig, SynthConfig};
