//! Camera-tracklet-aware contrastive representation learning.
//!
//! The crate trains an embedding function on multi-camera tracklet data
//! without identity labels. Features live in a hierarchical memory indexed by
//! camera and tracklet ([`ctam::Ctam`]); tracklet-mates act as positives inside
//! a camera, cross-camera positives and negatives are mined from the memory
//! ([`mining`]), and a camera-likelihood KL term pushes embeddings away from
//! camera-specific structure ([`losses::da_loss`]).
//!
//! Everything runs in `f64` on the CPU and is deterministic given a seed.

pub mod cli;
pub mod ctam;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod losses;
pub mod mining;
pub mod rng;
pub mod synthdata;
pub mod trainer;
pub mod vecmath;

pub use error::{Error, Result};
