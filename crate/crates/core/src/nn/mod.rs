//! Reverse-mode differentiation over dense and sparse matrices, plus the
//! Adam optimizer.

mod adam;
mod params;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use params::ParamSet;
pub use tape::{AttentionSpec, Gradients, HeadCombine, Tape, Var};
