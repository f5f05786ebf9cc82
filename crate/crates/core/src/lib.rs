//! Class-incremental audio-visual video recognition on precomputed snippet
//! features: a hybrid-attention fusion model, hierarchical feature
//! augmentation with gradient routing, hierarchical logical and correlative
//! distillation against a frozen previous-phase model, exemplar memory, and
//! the phase-based incremental protocol.

pub mod autograd;
pub mod error;
pub mod feature_store;
pub mod fusion_model;
pub mod ham;
pub mod hdm;
pub mod metrics;
pub mod probe;
pub mod tensor;
pub mod trainer;

pub use error::{HadError, Result};
