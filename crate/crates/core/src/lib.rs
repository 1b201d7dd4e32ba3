//! LiDAR global localization without an initial pose guess.
//!
//! The pipeline: encode each point cloud as a pair of bird's-eye-view images
//! (occupancy density and intensity), describe the pair with a global
//! descriptor plus a grid of local features, retrieve candidate database
//! frames by descriptor distance, match local features into 3D point
//! correspondences, and recover the 6-DoF relative pose with an
//! outlier-robust solver. Loop closures produced this way can then be fused
//! with odometry in a pose graph.
//!
//! Feature extraction is backend-pluggable: a deterministic handcrafted
//! backend ships with the crate, and externally computed embeddings can be
//! imported from disk. A synthetic LiDAR simulator provides ground-truthed
//! scenes for end-to-end verification.

pub mod bev;
pub mod cloud;
pub mod covis;
pub mod features;
pub mod pose_graph;
pub mod registration;
pub mod retrieval;
pub mod se3;
pub mod synth;

#[cfg(test)]
pub(crate) mod test_util;

pub use cloud::{DatasetManifest, Point, PointCloud, SensorKind};
pub use se3::PoseSE3;
