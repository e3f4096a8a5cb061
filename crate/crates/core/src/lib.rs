//! One-pass learning over streams whose feature set shrinks and then grows.
//!
//! The compressing stage ([`cstage`]) streams mini-batches over vanished and
//! survived features into fixed-size sufficient statistics and solves a
//! consistency-coupled ridge problem exactly. Its survived-feature classifier
//! then maps expanding-stage data to stacked scores, on which either the
//! unified joint model ([`unified`]) or a weighted pair of logistic models
//! ([`ensemble`]) is trained together with the newly augmented features.

pub mod cstage;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod ingest;
pub mod linalg;
pub mod model;
pub mod unified;

pub use cstage::{compress, AccumulationMode, CStageStats, UpdateBlock};
pub use error::{Error, Result};
pub use model::{
    argmax_decode, one_hot_encode, validate_batch, Batch, CStageModel, EStageModel, FeatureSchema,
    Hyperparams, LabelMatrix, Stage,
};
