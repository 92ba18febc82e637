//! Similarity lifting: back-projection into a 3D similarity cloud, IVF-flat
//! indexing, and kNN majority voting for arbitrary viewpoints.

mod cloud;
pub mod ivf;
pub mod kmeans;
mod session;
mod vote;

pub use cloud::{backproject, backproject_labels, backproject_maps, SimilarityCloud, CLOUD_MAGIC};
pub use ivf::{IvfIndex, KnnScratch, Neighbor, DEFAULT_CLUSTERS, DEFAULT_PROBES};
pub use session::{
    select, select_reusing, LiftConfig, Scene, SelectionSession, SessionStats, Timing,
};
pub use vote::{
    reconstruct_view, vote, Reconstruction, SelectionParams, Vote, DEFAULT_K, DEFAULT_THRESHOLD,
};
