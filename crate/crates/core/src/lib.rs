//! Strided tensor-network image segmentation.
//!
//! Images are cut into non-overlapping `K×K` (or `K×K×K`) patches, every
//! pixel is lifted by a local feature map, and a single weight-shared matrix
//! product state maps each patch to per-pixel logits. Training runs Adam on
//! cross-entropy or Dice loss with analytic gradients from cached left/right
//! environments.

pub mod data;
pub mod error;
pub mod featuremaps;
pub mod metrics;
pub mod mps;
pub mod patching;
pub mod segmenter;
pub mod tensors;
pub mod training;

pub use error::{Error, Result};
