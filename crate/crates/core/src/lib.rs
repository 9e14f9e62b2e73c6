//! Occupancy-prediction pre-training toolkit for LiDAR point clouds.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! - [`cloud`]: point clouds, poses, boxes, spherical coordinates and the
//!   binary frame/label formats.
//! - [`synth`]: a deterministic ground-plane + box raycaster that produces
//!   labeled LiDAR sequences.
//! - [`augment`]: beam re-sampling across sensors and flip/rotate augmentation.
//! - [`occ`]: BEV occupancy ground-truth generation (split, aggregate,
//!   KNN densification, voxel voting).
//! - [`balance`]: class sampling weights, frame re-sampling and loss weights.
//! - [`learn`]: softmax, weighted cross-entropy and Lovász-Softmax with exact
//!   gradients, a small BEV encoder-decoder, Adam with a one-cycle schedule,
//!   pre-training/fine-tuning loops and mIoU.
//! - [`theory`]: exact entropy / mutual-information computations on small
//!   finite joints used to check the representation bounds.
//! - [`pipeline`]: pipeline configuration, synthetic datasets and the paired
//!   pre-train versus from-scratch comparison.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod balance;
pub mod cloud;
pub mod error;
pub mod learn;
pub mod occ;
pub mod pipeline;
pub mod rng;
pub mod schema;
pub mod synth;
pub mod theory;

pub use error::{Error, Result};
