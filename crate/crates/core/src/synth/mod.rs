//! Deterministic synthetic LiDAR: ground plane plus yaw-rotated boxes, swept
//! by a spinning multi-beam sensor.

mod beams;
mod raycast;
mod scene;
mod sequence;

pub use beams::BeamSpec;
pub use raycast::{cast_ray, scan, Hit};
pub use scene::{build_scene, Arena, ClassMix, Scene, SceneObject, SceneSpec};
pub use sequence::{generate_sequence, read_sequence_dir, write_sequence_dir, SequenceFrame, SequenceMeta};
