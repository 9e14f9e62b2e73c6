use nalgebra::Vector3;

use super::{BeamSpec, Scene};
use crate::cloud::{from_spherical, BoxLabel, LabeledCloud, Pose, SphericalPoint};
use crate::error::Result;

/// Nearest surface along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Distance along the unit direction.
    pub range: f64,
    pub class_id: u8,
}

/// Entry distance of a ray into a box, `None` on a miss or when the origin
/// is inside the box.
fn ray_box(origin: &Vector3<f64>, dir: &Vector3<f64>, b: &BoxLabel) -> Option<f64> {
    let o = b.to_local(origin);
    let (s, c) = b.yaw.sin_cos();
    let d = Vector3::new(c * dir.x + s * dir.y, -s * dir.x + c * dir.y, dir.z);
    let h = b.half_extents();
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for axis in 0..3 {
        if d[axis].abs() < 1e-15 {
            if o[axis].abs() > h[axis] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[axis];
        let t1 = (-h[axis] - o[axis]) * inv;
        let t2 = (h[axis] - o[axis]) * inv;
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        t_near = t_near.max(lo);
        t_far = t_far.min(hi);
        if t_near > t_far {
            return None;
        }
    }
    (t_near > 0.0).then_some(t_near)
}

/// Cast one world-frame ray against the ground plane and `boxes`.
pub fn cast_ray(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    ground: Option<(f64, u8)>,
    boxes: &[(BoxLabel, u8)],
) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    if let Some((gz, class_id)) = ground {
        if dir.z < 0.0 && origin.z > gz {
            let range = (gz - origin.z) / dir.z;
            best = Some(Hit { range, class_id });
        }
    }
    for (b, class_id) in boxes {
        if let Some(range) = ray_box(origin, dir, b) {
            if best.is_none_or(|h| range < h.range) {
                best = Some(Hit {
                    range,
                    class_id: *class_id,
                });
            }
        }
    }
    best
}

/// Sweep every (beam, azimuth) pair from `sensor_pose` at scene time `time`.
///
/// Points are returned in the sensor frame, ordered beam-major. Each point
/// is `range · direction` with the direction built from the nominal beam
/// angles, so its elevation is the beam elevation. The single feature is
/// range / `max_range`. Misses and returns beyond `max_range` are dropped.
pub fn scan(scene: &Scene, beams: &BeamSpec, sensor_pose: &Pose, time: f64) -> Result<LabeledCloud> {
    beams.validate()?;
    sensor_pose.validate()?;
    let boxes: Vec<(BoxLabel, u8)> = scene
        .boxes_at(time)
        .into_iter()
        .zip(&scene.objects)
        .map(|(b, o)| (b, o.surface_class))
        .collect();
    let ground = scene.ground_z.map(|z| (z, scene.ground_class));
    let origin = *sensor_pose.translation();
    let elevations = beams.elevations();
    let azimuths = beams.azimuths();

    let mut out = LabeledCloud::empty(1);
    for &elevation in &elevations {
        for &azimuth in &azimuths {
            let local_dir = from_spherical(&SphericalPoint {
                r: 1.0,
                azimuth,
                elevation,
            });
            let dir = sensor_pose.rotate(&local_dir);
            if let Some(hit) = cast_ray(&origin, &dir, ground, &boxes) {
                if hit.range <= beams.max_range {
                    out.push(local_dir * hit.range, &[hit.range / beams.max_range], hit.class_id)?;
                }
            }
        }
    }
    Ok(out)
}
