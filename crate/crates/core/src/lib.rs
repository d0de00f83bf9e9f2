//! Keypoint geometry and pose retrieval for illustrated characters.
//!
//! - [`skeleton`]: the 25-keypoint taxonomy, boxes and OKS sigmas
//! - [`augment`]: flips, rotations, mask boxes and padded crops
//! - [`heatmap`]: gaussian heatmap targets and arg-max decoding
//! - [`balance`]: class-balanced BCE weighting
//! - [`metrics`]: OKS@t, PCKh, PDJ, PCPm and per-keypoint breakdowns
//! - [`descriptor`] and [`index`]: pairwise-distance descriptors and exact kNN
//! - [`dataset`]: COCO documents, masks and splits

pub mod augment;
pub mod balance;
pub mod dataset;
pub mod descriptor;
pub mod error;
pub mod heatmap;
pub mod index;
pub mod metrics;
pub mod skeleton;

pub use error::{Error, Result};
pub use skeleton::{BoundingBox, Keypoint, KeypointId, KeypointSigmas, Skeleton, Visibility};
