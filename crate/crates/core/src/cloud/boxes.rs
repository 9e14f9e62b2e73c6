use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::Pose;
use crate::error::{Error, Result};

/// Slack added to each half-extent in containment tests, so that points
/// sampled exactly on a face count as inside.
pub const CONTAINMENT_SLACK: f64 = 1e-6;

/// One annotated object: an upright box rotated by `yaw` about z.
///
/// Serializes to the flat JSON-lines record
/// `{cx,cy,cz,l,w,h,yaw,vx,vy,class_id,is_dynamic}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxRecord", into = "BoxRecord")]
pub struct BoxLabel {
    pub center: Vector3<f64>,
    /// Length (along heading), width, height.
    pub size: Vector3<f64>,
    pub yaw: f64,
    pub velocity: [f64; 2],
    pub class_id: u8,
    pub is_dynamic: bool,
}

impl BoxLabel {
    pub fn validate(&self, n_cls: u8) -> Result<()> {
        if !self.size.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::invalid(format!(
                "box sizes must be positive, got {:?}",
                self.size
            )));
        }
        if !(self.center.iter().all(|v| v.is_finite())
            && self.yaw.is_finite()
            && self.velocity.iter().all(|v| v.is_finite()))
        {
            return Err(Error::invalid("box has non-finite fields"));
        }
        if self.class_id == 0 || self.class_id > n_cls {
            return Err(Error::invalid(format!(
                "box class {} outside [1, {n_cls}]",
                self.class_id
            )));
        }
        Ok(())
    }

    /// Box frame → parent frame.
    pub fn pose(&self) -> Pose {
        Pose::from_yaw(self.yaw, self.center)
    }

    /// Coordinates of `p` in the box frame (origin at the center, x along
    /// the heading).
    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let (s, c) = self.yaw.sin_cos();
        let d = p - self.center;
        Vector3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    pub fn half_extents(&self) -> Vector3<f64> {
        self.size * 0.5
    }

    /// Inclusive containment (faces count as inside).
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let l = self.to_local(p);
        let h = self.half_extents();
        l.x.abs() <= h.x + CONTAINMENT_SLACK
            && l.y.abs() <= h.y + CONTAINMENT_SLACK
            && l.z.abs() <= h.z + CONTAINMENT_SLACK
    }

    /// Footprint containment in the xy-plane only.
    pub fn footprint_contains(&self, x: f64, y: f64) -> bool {
        let l = self.to_local(&Vector3::new(x, y, self.center.z));
        let h = self.half_extents();
        l.x.abs() <= h.x && l.y.abs() <= h.y
    }

    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }

    /// Express this box in another frame (`pose` maps the current frame into
    /// the target frame). Only yaw-type rotations are meaningful for boxes.
    pub fn transformed(&self, pose: &Pose) -> BoxLabel {
        let v = pose.rotate(&Vector3::new(self.velocity[0], self.velocity[1], 0.0));
        BoxLabel {
            center: pose.apply(&self.center),
            yaw: super::spherical::wrap_angle(self.yaw + pose.yaw()),
            velocity: [v.x, v.y],
            ..*self
        }
    }

    /// Circumscribed radius of the footprint.
    pub fn footprint_radius(&self) -> f64 {
        0.5 * self.size.x.hypot(self.size.y)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxRecord {
    cx: f64,
    cy: f64,
    cz: f64,
    l: f64,
    w: f64,
    h: f64,
    yaw: f64,
    vx: f64,
    vy: f64,
    class_id: u8,
    is_dynamic: bool,
}

impl TryFrom<BoxRecord> for BoxLabel {
    type Error = Error;

    fn try_from(r: BoxRecord) -> Result<Self> {
        let b = BoxLabel {
            center: Vector3::new(r.cx, r.cy, r.cz),
            size: Vector3::new(r.l, r.w, r.h),
            yaw: r.yaw,
            velocity: [r.vx, r.vy],
            class_id: r.class_id,
            is_dynamic: r.is_dynamic,
        };
        b.validate(u8::MAX)?;
        Ok(b)
    }
}

impl From<BoxLabel> for BoxRecord {
    fn from(b: BoxLabel) -> Self {
        BoxRecord {
            cx: b.center.x,
            cy: b.center.y,
            cz: b.center.z,
            l: b.size.x,
            w: b.size.y,
            h: b.size.z,
            yaw: b.yaw,
            vx: b.velocity[0],
            vy: b.velocity[1],
            class_id: b.class_id,
            is_dynamic: b.is_dynamic,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn car() -> BoxLabel {
        BoxLabel {
            center: Vector3::new(5.0, 2.0, 0.75),
            size: Vector3::new(4.0, 2.0, 1.5),
            yaw: 0.5,
            velocity: [1.0, 0.0],
            class_id: 1,
            is_dynamic: true,
        }
    }

    #[test]
    fn center_and_corners_are_inside() {
        let b = car();
        assert!(b.contains(&b.center));
        let corner = b.pose().apply(&b.half_extents());
        assert!(b.contains(&corner));
        let outside = b.pose().apply(&(b.half_extents() * 1.01));
        assert!(!b.contains(&outside));
    }

    #[test]
    fn validation() {
        let mut b = car();
        assert!(b.validate(15).is_ok());
        b.size.y = 0.0;
        assert!(b.validate(15).is_err());
        let mut b = car();
        b.class_id = 16;
        assert!(b.validate(15).is_err());
    }

    #[test]
    fn json_keys() {
        let s = serde_json::to_string(&car()).unwrap();
        assert!(s.starts_with(r#"{"cx":5.0,"cy":2.0,"cz":0.75,"l":4.0,"w":2.0,"h":1.5,"yaw":0.5"#));
        let back: BoxLabel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, car());
    }
}
