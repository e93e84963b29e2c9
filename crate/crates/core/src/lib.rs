//! Cross-domain embedding alignment.
//!
//! Two fixed, unrelated feature spaces ("vision" and "language") are mapped
//! into one shared metric space by a pair of small feed-forward heads trained
//! with a cross-domain triplet loss. An optional Procrustes refinement
//! (translation, scaling, rotation) is fit on the training embeddings.
//! Linear CCA and a paired-cosine network serve as baselines, and the
//! [`metrics`] module scores any of them with MRR, KNN accuracy, distance
//! correlation, per-description AUC and F1.
//!
//! The crate is `no_std` and needs only `alloc`; file formats and the
//! command line live in the companion `xmodal` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod dataset;
pub mod distance;
pub mod error;
pub mod metrics;
pub mod model;
pub mod net;
pub mod procrustes;
#[cfg(feature = "serde")]
mod serde_nalgebra;
pub mod synth;
mod training;
pub mod triplet;

pub use dataset::{split_dataset, Dataset, Domain, PairRecord};
pub use distance::{distance, DistanceMetric};
pub use error::{Error, Result};
pub use procrustes::{fit_procrustes, AblationFlags, ProcrustesTransform};
pub use training::{EpochRecord, HeadPair, PairGradients, TrainConfig, TrainMode, TrainOutcome};
