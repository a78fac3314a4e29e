//! Desk-scale multi-purpose segmentation: one model that produces panoptic
//! maps for images, tracked instances for clips, and prompt-conditioned
//! binary masks, trained jointly on synthetic scenes.

pub mod adapter;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decoder;
pub mod error;
pub mod hungarian;
pub mod infer;
pub mod init;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod params;
pub mod prompt;
pub mod train;
pub mod update;

pub use error::{Error, Result};
