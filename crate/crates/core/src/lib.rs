//! Training-free open-vocabulary semantic segmentation.
//!
//! CLIP patch features are mixed by an attention map whose scope is
//! restricted to class-agnostic regions and whose weights come from
//! self-supervised features; the result is classified against text
//! embeddings and corrected per region.

pub mod cli;
pub mod config;
pub mod correction;
pub mod correlation;
pub mod error;
pub mod evaluation;
pub mod imageio;
pub mod masks;
pub mod providers;
pub mod resample;
pub mod segmentation;

pub use error::{Error, Result};
