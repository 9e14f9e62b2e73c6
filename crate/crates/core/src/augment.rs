//! Cross-sensor beam re-sampling plus random flip / rotation.
//!
//! A point cloud captured with a dense sensor is thinned to look like a
//! sparser one: the ratio of beam densities (beams per degree of vertical
//! field of view) gives the fraction of beams to keep, beams are recovered by
//! clustering point elevations, and a uniformly spaced subset of them is
//! retained.

use std::f64::consts::PI;

use log::warn;
use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{to_spherical, wrap_angle, BoxLabel, LabeledCloud, Pose};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::synth::BeamSpec;

/// Default elevation gap (degrees) that separates two beams.
pub const DEFAULT_MERGE_THRESHOLD_DEG: f64 = 0.05;

/// Beams per degree of vertical field of view.
pub fn beam_density(b: &BeamSpec) -> Result<f64> {
    if !(b.alpha_up > b.alpha_low) {
        return Err(Error::invalid(format!(
            "degenerate VFOV: alpha_up {} <= alpha_low {}",
            b.alpha_up, b.alpha_low
        )));
    }
    if b.n_beams == 0 {
        return Err(Error::invalid("n_beams must be at least 1"));
    }
    Ok(b.n_beams as f64 / (b.alpha_up - b.alpha_low))
}

/// Fraction of beams to keep, in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ResampleFactor(f64);

impl ResampleFactor {
    pub const IDENTITY: ResampleFactor = ResampleFactor(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value <= 1.0 {
            Ok(Self(value))
        } else {
            Err(Error::invalid(format!("re-sampling factor {value} outside (0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ResampleFactor {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ResampleFactor> for f64 {
    fn from(r: ResampleFactor) -> f64 {
        r.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorOutcome {
    pub factor: ResampleFactor,
    /// Unclamped density ratio.
    pub raw: f64,
    /// Set when the target is denser than the source; beams cannot be
    /// synthesized, so the factor was clamped to 1.
    pub upsampling_clamped: bool,
}

/// density(target) / density(source), clamped to 1.
pub fn resample_factor(source: &BeamSpec, target: &BeamSpec) -> Result<FactorOutcome> {
    let raw = beam_density(target)? / beam_density(source)?;
    let upsampling_clamped = raw > 1.0;
    if upsampling_clamped {
        warn!("target beam density exceeds source ({raw:.4}x); upsampling is impossible, keeping all beams");
    }
    Ok(FactorOutcome {
        factor: ResampleFactor::new(raw.min(1.0))?,
        raw,
        upsampling_clamped,
    })
}

/// Points sharing one recovered beam.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamCluster {
    /// Mean elevation in radians.
    pub elevation: f64,
    /// Indices into the source cloud, ascending.
    pub indices: Vec<usize>,
}

/// Group points by elevation: sorted elevations are split wherever two
/// neighbours differ by more than `merge_threshold_deg`. Clusters come out
/// in ascending elevation and partition the point set.
pub fn estimate_beams(cloud: &crate::cloud::PointCloud, merge_threshold_deg: f64) -> Vec<BeamCluster> {
    if cloud.is_empty() {
        return Vec::new();
    }
    let threshold = merge_threshold_deg.to_radians();
    let elevations: Vec<f64> = cloud.coords().iter().map(|p| to_spherical(p).elevation).collect();
    let mut order: Vec<usize> = (0..elevations.len()).collect();
    order.sort_by(|&a, &b| elevations[a].total_cmp(&elevations[b]).then(a.cmp(&b)));

    let mut clusters = Vec::new();
    let mut current = vec![order[0]];
    for w in order.windows(2) {
        if elevations[w[1]] - elevations[w[0]] > threshold {
            clusters.push(std::mem::take(&mut current));
        }
        current.push(w[1]);
    }
    clusters.push(current);

    clusters
        .into_iter()
        .map(|mut indices| {
            let elevation = indices.iter().map(|&i| elevations[i]).sum::<f64>() / indices.len() as f64;
            indices.sort_unstable();
            BeamCluster { elevation, indices }
        })
        .collect()
}

/// Indices of the beams to keep: `max(1, round(r·K))` of them, evenly spaced
/// over `0..K` with a random phase.
pub fn select_beams(k: usize, factor: ResampleFactor, phase: f64) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    let keep = ((factor.value() * k as f64).round() as usize).clamp(1, k);
    let stride = k as f64 / keep as f64;
    (0..keep)
        .map(|i| (((i as f64 + phase) * stride).floor() as usize).min(k - 1))
        .collect()
}

/// Keep the points of a uniformly spaced subset of the recovered beams.
///
/// The output is a subsequence of the input (same records, same order) with
/// labels filtered identically; `factor = 1` returns the input unchanged.
pub fn beam_resample(
    cloud: &LabeledCloud,
    factor: ResampleFactor,
    seed: u64,
    merge_threshold_deg: f64,
) -> LabeledCloud {
    if cloud.is_empty() || factor == ResampleFactor::IDENTITY {
        return cloud.clone();
    }
    let beams = estimate_beams(cloud.cloud(), merge_threshold_deg);
    let phase: f64 = rng::stream(seed, Stream::Resample, 0).gen_range(0.0..1.0);
    let mut keep = vec![false; cloud.len()];
    for b in select_beams(beams.len(), factor, phase) {
        for &i in &beams[b].indices {
            keep[i] = true;
        }
    }
    let indices: Vec<usize> = (0..cloud.len()).filter(|&i| keep[i]).collect();
    cloud.select(&indices)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipAxis {
    /// Mirror across the x axis: y → −y, yaw → −yaw.
    X,
    /// Mirror across the y axis: x → −x, yaw → π − yaw.
    Y,
}

/// Mirror points and boxes. Labels are unchanged.
pub fn flip(cloud: &LabeledCloud, boxes: &[BoxLabel], axis: FlipAxis) -> (LabeledCloud, Vec<BoxLabel>) {
    let mirror = |p: &Vector3<f64>| match axis {
        FlipAxis::X => Vector3::new(p.x, -p.y, p.z),
        FlipAxis::Y => Vector3::new(-p.x, p.y, p.z),
    };
    let boxes = boxes
        .iter()
        .map(|b| {
            let (yaw, velocity) = match axis {
                FlipAxis::X => (-b.yaw, [b.velocity[0], -b.velocity[1]]),
                FlipAxis::Y => (PI - b.yaw, [-b.velocity[0], b.velocity[1]]),
            };
            BoxLabel {
                center: mirror(&b.center),
                yaw: wrap_angle(yaw),
                velocity,
                ..*b
            }
        })
        .collect();
    (cloud.map_coords(mirror), boxes)
}

/// Flip along `axis` with probability `prob`, decided by `seed`.
pub fn random_flip(
    cloud: &LabeledCloud,
    boxes: &[BoxLabel],
    axis: FlipAxis,
    prob: f64,
    seed: u64,
) -> (LabeledCloud, Vec<BoxLabel>, bool) {
    let stream_index = match axis {
        FlipAxis::X => 1,
        FlipAxis::Y => 2,
    };
    let mut rng = rng::stream(seed, Stream::Augment, stream_index);
    if rng.gen_bool(prob.clamp(0.0, 1.0)) {
        let (c, b) = flip(cloud, boxes, axis);
        (c, b, true)
    } else {
        (cloud.clone(), boxes.to_vec(), false)
    }
}

/// Rotate points, box centers, yaws and velocities by `angle` about +z.
pub fn rotate(cloud: &LabeledCloud, boxes: &[BoxLabel], angle: f64) -> (LabeledCloud, Vec<BoxLabel>) {
    let pose = Pose::from_yaw(angle, Vector3::zeros());
    let boxes = boxes.iter().map(|b| b.transformed(&pose)).collect();
    (cloud.map_coords(|p| pose.apply(p)), boxes)
}

/// Rotate by `angle`, or by an angle drawn uniformly from
/// `[-range, range]` under `seed` when `angle` is `None`.
pub fn random_rotate(
    cloud: &LabeledCloud,
    boxes: &[BoxLabel],
    angle: Option<f64>,
    range: f64,
    seed: u64,
) -> (LabeledCloud, Vec<BoxLabel>, f64) {
    let angle = angle.unwrap_or_else(|| {
        if range > 0.0 {
            rng::stream(seed, Stream::Augment, 3).gen_range(-range..=range)
        } else {
            0.0
        }
    });
    let (c, b) = rotate(cloud, boxes, angle);
    (c, b, angle)
}

/// Augmentation settings for the pre-training pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Sensors to imitate; one is drawn uniformly per frame and epoch.
    #[serde(default)]
    pub target_beam_specs: Vec<BeamSpec>,
    #[serde(default)]
    pub flip_prob_x: f64,
    #[serde(default)]
    pub flip_prob_y: f64,
    /// Degrees, symmetric about 0.
    #[serde(default)]
    pub rotation_range_deg: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub merge_threshold_deg: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_MERGE_THRESHOLD_DEG
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            target_beam_specs: Vec::new(),
            flip_prob_x: 0.0,
            flip_prob_y: 0.0,
            rotation_range_deg: 0.0,
            seed: 0,
            merge_threshold_deg: DEFAULT_MERGE_THRESHOLD_DEG,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for p in [self.flip_prob_x, self.flip_prob_y] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("flip probability {p} outside [0, 1]")));
            }
        }
        if !(self.rotation_range_deg >= 0.0) {
            return Err(Error::invalid("rotation_range_deg must be non-negative"));
        }
        if !(self.merge_threshold_deg > 0.0) {
            return Err(Error::invalid("merge_threshold_deg must be positive"));
        }
        self.target_beam_specs.iter().try_for_each(BeamSpec::validate)
    }

    /// Full augmentation of one frame for `(epoch, frame)`: optional beam
    /// re-sampling toward a randomly chosen target sensor, then x/y flips and
    /// a rotation. Deterministic in `(input, seed, epoch, frame)`.
    pub fn apply(
        &self,
        cloud: &LabeledCloud,
        boxes: &[BoxLabel],
        source: &BeamSpec,
        epoch: u64,
        frame: u64,
    ) -> Result<(LabeledCloud, Vec<BoxLabel>)> {
        let frame_seed = rng::child_seed(self.seed, Stream::Augment, (epoch << 32) | (frame & 0xffff_ffff));
        let mut cloud = cloud.clone();
        if !self.target_beam_specs.is_empty() {
            let pick = rng::stream(frame_seed, Stream::Augment, 0).gen_range(0..self.target_beam_specs.len());
            let factor = resample_factor(source, &self.target_beam_specs[pick])?.factor;
            cloud = beam_resample(&cloud, factor, frame_seed, self.merge_threshold_deg);
        }
        let (cloud, boxes, _) = random_flip(&cloud, boxes, FlipAxis::X, self.flip_prob_x, frame_seed);
        let (cloud, boxes, _) = random_flip(&cloud, &boxes, FlipAxis::Y, self.flip_prob_y, frame_seed);
        let (cloud, boxes, _) = random_rotate(&cloud, &boxes, None, self.rotation_range_deg.to_radians(), frame_seed);
        Ok((cloud, boxes))
    }
}
