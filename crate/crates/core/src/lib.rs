//! Group-contrastive metric learning for slice-based coreset active learning.
//!
//! An encoder is trained with NT-Xent plus patient / volume / adjacent-slice
//! group contrastive losses on batches built by a group-aware sampler. The
//! Euclidean distance between its representations drives K-Center Greedy
//! selection of slices to annotate, and an active-learning harness compares
//! that selection with random and raw-pixel coreset baselines.

pub mod cluster;
pub mod config;
pub mod coreset;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod gcle;
pub mod group;
pub mod loss;
pub mod oracle;
pub mod pipeline;
pub mod sampler;
pub mod seed;
pub mod verify;

pub use error::{Error, Result};
pub use group::{GroupSet, GroupType};
