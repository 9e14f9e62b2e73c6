use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{scan, BeamSpec, Scene};
use crate::cloud::io::{read_boxes, read_frame, read_labels, write_boxes, write_frame, write_labels};
use crate::cloud::{BoxLabel, LabeledCloud, Pose};
use crate::error::{Error, Result};

/// Timing and ego trajectory of a sequence. Frame `t` is captured at
/// `t / keyframe_hz` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceMeta {
    pub keyframe_hz: f64,
    pub ego_poses: Vec<Pose>,
}

impl SequenceMeta {
    pub fn new(keyframe_hz: f64, ego_poses: Vec<Pose>) -> Result<Self> {
        let meta = Self { keyframe_hz, ego_poses };
        meta.validate()?;
        Ok(meta)
    }

    /// Ego moving along +y at `speed` m/s with the sensor `height` above the
    /// world origin plane.
    pub fn straight_line(n_frames: usize, keyframe_hz: f64, speed: f64, height: f64) -> Result<Self> {
        let poses = (0..n_frames)
            .map(|t| Pose::from_yaw(0.0, Vector3::new(0.0, speed * t as f64 / keyframe_hz, height)))
            .collect();
        Self::new(keyframe_hz, poses)
    }

    pub fn n_frames(&self) -> usize {
        self.ego_poses.len()
    }

    pub fn frame_time(&self, t: usize) -> f64 {
        t as f64 / self.keyframe_hz
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.keyframe_hz > 0.0 && self.keyframe_hz.is_finite()) {
            return Err(Error::invalid("keyframe_hz must be positive"));
        }
        if self.ego_poses.is_empty() {
            return Err(Error::invalid("a sequence needs at least one frame"));
        }
        self.ego_poses.iter().try_for_each(Pose::validate)
    }
}

/// One captured frame: the labeled scan and the boxes, both in that frame's
/// sensor coordinates. Boxes keep the same order in every frame, so list
/// position identifies an object across the sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFrame {
    pub cloud: LabeledCloud,
    pub boxes: Vec<BoxLabel>,
}

/// Scan the scene once per ego pose. Frames are independent and computed in
/// parallel; the result is ordered by frame index.
pub fn generate_sequence(scene: &Scene, beams: &BeamSpec, meta: &SequenceMeta) -> Result<Vec<SequenceFrame>> {
    meta.validate()?;
    beams.validate()?;
    meta.ego_poses
        .par_iter()
        .enumerate()
        .map(|(t, pose)| {
            let time = meta.frame_time(t);
            let cloud = scan(scene, beams, pose, time)?;
            let to_sensor = pose.inverse();
            let boxes = scene.boxes_at(time).iter().map(|b| b.transformed(&to_sensor)).collect();
            Ok(SequenceFrame { cloud, boxes })
        })
        .collect()
}

const META_FILE: &str = "sequence.json";

fn frame_stem(t: usize) -> String {
    format!("frame_{t:04}")
}

/// Write `sequence.json` plus `frame_NNNN.{sptc,sptl,boxes.jsonl}` into `dir`.
pub fn write_sequence_dir(dir: &Path, meta: &SequenceMeta, frames: &[SequenceFrame]) -> Result<()> {
    if frames.len() != meta.n_frames() {
        return Err(Error::shape(format!(
            "{} frames for {} poses",
            frames.len(),
            meta.n_frames()
        )));
    }
    fs::create_dir_all(dir)?;
    let mut meta_bytes = serde_json::to_vec_pretty(meta)?;
    meta_bytes.push(b'\n');
    fs::write(dir.join(META_FILE), meta_bytes)?;
    for (t, f) in frames.iter().enumerate() {
        let stem = frame_stem(t);
        write_frame(
            BufWriter::new(File::create(dir.join(format!("{stem}.sptc")))?),
            f.cloud.cloud(),
        )?;
        write_labels(
            BufWriter::new(File::create(dir.join(format!("{stem}.sptl")))?),
            f.cloud.labels(),
        )?;
        write_boxes(
            BufWriter::new(File::create(dir.join(format!("{stem}.boxes.jsonl")))?),
            &f.boxes,
        )?;
    }
    Ok(())
}

pub fn read_sequence_dir(dir: &Path) -> Result<(SequenceMeta, Vec<SequenceFrame>)> {
    let meta: SequenceMeta = serde_json::from_slice(&fs::read(dir.join(META_FILE))?)?;
    meta.validate()?;
    let mut frames = Vec::with_capacity(meta.n_frames());
    for t in 0..meta.n_frames() {
        let stem = frame_stem(t);
        let cloud = read_frame(File::open(dir.join(format!("{stem}.sptc")))?)?;
        let labels = read_labels(File::open(dir.join(format!("{stem}.sptl")))?)?;
        let boxes_path = dir.join(format!("{stem}.boxes.jsonl"));
        let boxes = if boxes_path.exists() {
            read_boxes(File::open(boxes_path)?)?
        } else {
            Vec::new()
        };
        frames.push(SequenceFrame {
            cloud: LabeledCloud::new(cloud, labels)?,
            boxes,
        });
    }
    Ok((meta, frames))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{build_scene, SceneSpec};

    fn mover() -> Scene {
        Scene {
            ground_z: Some(0.0),
            ground_class: 15,
            objects: vec![crate::synth::SceneObject {
                bbox: BoxLabel {
                    center: Vector3::new(0.0, 8.0, 0.8),
                    size: Vector3::new(4.0, 2.0, 1.6),
                    yaw: 0.0,
                    velocity: [1.0, 0.0],
                    class_id: 1,
                    is_dynamic: true,
                },
                surface_class: 1,
            }],
            rng_seed: 0,
        }
    }

    #[test]
    fn one_frame_equals_scan() {
        let scene = build_scene(&SceneSpec::default(), 5).unwrap();
        let beams = BeamSpec::new(16, 5.0, -25.0, 180).unwrap();
        let meta = SequenceMeta::straight_line(1, 10.0, 5.0, 1.8).unwrap();
        let frames = generate_sequence(&scene, &beams, &meta).unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].cloud, scan(&scene, &beams, &meta.ego_poses[0], 0.0).unwrap());
    }

    #[test]
    fn dynamic_box_moves_linearly() {
        let beams = BeamSpec::new(4, 0.0, -10.0, 36).unwrap();
        let poses = vec![Pose::from_yaw(0.0, Vector3::new(0.0, 0.0, 1.8)); 11];
        let meta = SequenceMeta::new(10.0, poses).unwrap();
        let frames = generate_sequence(&mover(), &beams, &meta).unwrap();
        let shift = frames[10].boxes[0].center - frames[0].boxes[0].center;
        assert!((shift.x - 1.0).abs() < 1e-12 && shift.y.abs() < 1e-12);
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let beams = BeamSpec::new(4, 0.0, -10.0, 36).unwrap();
        let meta = SequenceMeta::straight_line(2, 10.0, 2.0, 1.8).unwrap();
        let frames = generate_sequence(&mover(), &beams, &meta).unwrap();
        write_sequence_dir(dir.path(), &meta, &frames).unwrap();
        let (meta2, frames2) = read_sequence_dir(dir.path()).unwrap();
        assert_eq!(meta2.n_frames(), 2);
        assert_eq!(frames2[1].boxes.len(), 1);
        assert_eq!(frames2[1].cloud.labels(), frames[1].cloud.labels());
    }
}
