//! BEV occupancy ground truth from labeled LiDAR sequences.
//!
//! Pipeline: split each frame into static and dynamic points using the
//! boxes, fuse all frames (static points in the world frame, dynamic points
//! re-posed through their object's keyframe pose), express the fused cloud
//! in the keyframe sensor frame, vote one label per BEV cell, and optionally
//! fill holes by KNN labeling of empty cells near fused points.

mod aggregate;
mod grid;
mod knn;
mod pipeline;
mod split;
mod voxel;

pub use aggregate::aggregate;
pub use grid::{read_grid, write_grid, GridSpec, OccupancyGrid};
pub use knn::{knn_label, KnnIndex};
pub use pipeline::{make_occupancy, OccOptions};
pub use split::{split_dynamic_static, Split};
pub use voxel::{plurality, voxelize_bev};
