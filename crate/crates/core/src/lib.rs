//! Language-guided multi-source domain adaptation in a frozen image-text
//! embedding space.
//!
//! The pipeline has two training stages and one prediction rule:
//!
//! 1. One augmenter MLP per source domain is trained to move that domain's
//!    image embeddings toward the (unseen) target domain, steered by the
//!    text-embedding difference between domain prompts, kept class-aware by
//!    a zero-shot cross-entropy term, and pulled toward the other extended
//!    domains by an entropic optimal transport term ([`losses`], [`ot`]).
//! 2. A shared linear classifier is trained on original and augmented
//!    embeddings ([`pipeline::train_classifier`]).
//! 3. Target samples are pushed through every augmenter and the outputs are
//!    averaged with weights derived from OT distances between source and
//!    target prompt embeddings ([`pipeline::predict`]).
//!
//! [`synth`] builds embedding worlds where the text and image domain
//! directions coincide by construction, so every stage can be checked
//! without a pretrained model.

pub mod cli;
pub mod embstore;
pub mod error;
pub mod losses;
pub mod nn;
pub mod ot;
pub mod pipeline;
pub mod synth;

#[cfg(test)]
pub(crate) mod testing;

pub use error::{Error, Result};
