//! Desk-scale sign recognition with learnt contrastive concept (LCC)
//! embeddings.
//!
//! The crate is organised around a small f64 autodiff engine ([`tensor`]),
//! a keypoint data pipeline with a synthetic dataset generator ([`data`]),
//! the contrastive embedding head with its recognition and concept losses
//! ([`head`]), a pluggable spatio-temporal graph backbone with multi-channel
//! fusion ([`model`]), and an Adam training loop with the evaluation metrics
//! and multi-stream ensembling ([`train`]).

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod head;
pub mod model;
pub mod verify;
pub mod tensor;
pub mod train;
