//! Recognizing named characters in artwork images.
//!
//! The crate covers the whole experiment ladder: corpus manifests and splits
//! ([`data`]), style-transfer surrogate data ([`style`]), backbone features
//! ([`features`]), classical classifier benchmarks ([`classical`]),
//! fine-tuning pipelines ([`finetune`]), metrics and reports ([`eval`]) and
//! class activation maps ([`cam`]).

pub mod data;
pub mod imaging;
pub mod nets;
pub mod registry;
pub mod style;
pub mod features;
pub mod classical;
pub mod finetune;
pub mod eval;
pub mod cam;
pub mod fixture;
