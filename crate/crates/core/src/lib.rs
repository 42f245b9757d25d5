//! Synthetic RGB-D bin-clutter datasets for category-agnostic instance
//! segmentation of industrial parts.
//!
//! - [`scene`] samples domain-randomized bin scenes from an [`catalog::ObjectCatalog`].
//! - [`render`] rasterizes them into aligned RGB, metric depth and instance masks.
//! - [`corruption`] turns clean depth into sensor-like depth with holes and noise.
//! - [`preprocess`] applies the edge-preserving filter, hole filling and resizing.
//! - [`dataset`] persists samples with RLE annotations and occlusion rates.
//! - [`eval`] computes AP50 / AP / AR with heavily occluded instances ignored.
//! - [`fusion`] is a small numeric kernel for confidence-weighted RGB-D feature fusion.

pub mod catalog;
pub mod dataset;
pub mod corruption;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod grid;
pub mod perlin;
pub mod pipeline;
pub mod preprocess;
pub mod render;
pub mod rle;
pub mod scene;
pub mod seeding;
pub mod shapes;
pub mod texture;

pub use error::{Error, Result};
