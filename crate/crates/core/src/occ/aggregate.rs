use super::split_dynamic_static;
use crate::cloud::{LabeledCloud, Pose};
use crate::error::{Error, Result};
use crate::synth::SequenceFrame;

/// Fuse a sequence into one world-frame labeled cloud.
///
/// Static points go through their frame's ego pose. A dynamic point is
/// expressed in its box's canonical frame for the source frame, then placed
/// with that same box's pose at `keyframe`, so moving objects line up with
/// where they are at the keyframe. Output keeps every point of every frame,
/// frame by frame, in original order.
pub fn aggregate(frames: &[SequenceFrame], poses: &[Pose], keyframe: usize) -> Result<LabeledCloud> {
    if frames.len() != poses.len() {
        return Err(Error::shape(format!(
            "{} frames but {} poses",
            frames.len(),
            poses.len()
        )));
    }
    if keyframe >= frames.len() {
        return Err(Error::invalid(format!(
            "keyframe {keyframe} outside a {}-frame sequence",
            frames.len()
        )));
    }
    let key_boxes = &frames[keyframe].boxes;
    let key_ego = &poses[keyframe];
    let feature_dim = frames[0].cloud.cloud().feature_dim();
    let total: usize = frames.iter().map(|f| f.cloud.len()).sum();

    let mut coords = Vec::with_capacity(total);
    let mut features = Vec::with_capacity(total * feature_dim);
    let mut labels = Vec::with_capacity(total);
    for (t, (frame, ego)) in frames.iter().zip(poses).enumerate() {
        let cloud = frame.cloud.cloud();
        if cloud.feature_dim() != feature_dim {
            return Err(Error::shape(format!("frame {t} has a different feature dimension")));
        }
        let split = split_dynamic_static(cloud, &frame.boxes);
        let mut mapping: Vec<Option<usize>> = vec![None; cloud.len()];
        for &(i, b) in &split.dynamic_points {
            mapping[i] = Some(b);
        }
        // Source-frame sensor coords → keyframe world coords, per box.
        let mut reposers: Vec<Option<Pose>> = vec![None; frame.boxes.len()];
        for (i, p) in cloud.coords().iter().enumerate() {
            let world = match mapping[i] {
                None => ego.apply(p),
                Some(b) => {
                    if reposers[b].is_none() {
                        let key_box = key_boxes.get(b).ok_or_else(|| {
                            Error::shape(format!("frame {t} box {b} has no counterpart in keyframe {keyframe}"))
                        })?;
                        let canonical = frame.boxes[b].pose().inverse();
                        reposers[b] = Some(key_ego.compose(&key_box.pose()).compose(&canonical));
                    }
                    reposers[b].as_ref().unwrap().apply(p)
                }
            };
            coords.push(world);
            features.extend_from_slice(cloud.point_features(i));
            labels.push(frame.cloud.labels().as_slice()[i]);
        }
    }
    LabeledCloud::new(
        crate::cloud::PointCloud::from_parts(coords, features, feature_dim)?,
        crate::cloud::PointLabels(labels),
    )
}
