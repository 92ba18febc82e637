//! Material selection lifted to 3D.
//!
//! Per-view similarity maps produced by a similarity oracle are back-projected
//! through rendered depth into a similarity point cloud. The cloud is indexed
//! with an IVF-flat structure, and selections for any viewpoint are rebuilt by
//! majority voting over the k nearest cloud points of each camera-ray hit.

pub mod demo;
pub mod error;
pub mod lift;
pub mod metrics;
pub mod oracle;
pub mod postprocess;
pub mod render;
pub mod scene;
pub mod segment;
pub mod service;

pub use error::{Error, Result};
