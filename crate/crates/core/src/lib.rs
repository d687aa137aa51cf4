//! Text-prompted voice-attribute editing in speaker-embedding space.
//!
//! The crate aligns descriptor words ("Bright", "Husky", ...) with speaker
//! embeddings through a residual slot memory, learns how strongly an
//! attribute differs between two speakers, and edits a source embedding by
//! interpolating toward the recalled descriptor embedding.

// `!(x > 0.0)` checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod dataset;
pub mod editor;
pub mod error;
pub mod linalg;
pub mod memnet;
pub mod metrics;
pub mod par;
pub mod rng;
pub mod trainer;
pub mod vadp;

pub use error::{Error, Result};
