use std::f64::consts::PI;

use nalgebra::Vector3;

/// Range / azimuth / elevation. Azimuth is measured from +y toward +x,
/// elevation from the xy-plane toward +z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalPoint {
    pub r: f64,
    /// Radians in (−π, π].
    pub azimuth: f64,
    /// Radians in [−π/2, π/2].
    pub elevation: f64,
}

/// r = |p|, azimuth = atan2(x, y), elevation = atan2(z, √(x²+y²)).
///
/// The origin maps to azimuth = elevation = 0.
pub fn to_spherical(p: &Vector3<f64>) -> SphericalPoint {
    let horiz = p.x.hypot(p.y);
    let r = horiz.hypot(p.z);
    if r == 0.0 {
        return SphericalPoint {
            r: 0.0,
            azimuth: 0.0,
            elevation: 0.0,
        };
    }
    let mut azimuth = p.x.atan2(p.y);
    if azimuth <= -PI {
        azimuth += 2.0 * PI;
    }
    SphericalPoint {
        r,
        azimuth,
        elevation: p.z.atan2(horiz),
    }
}

pub fn from_spherical(s: &SphericalPoint) -> Vector3<f64> {
    let (se, ce) = s.elevation.sin_cos();
    let (sa, ca) = s.azimuth.sin_cos();
    Vector3::new(s.r * ce * sa, s.r * ce * ca, s.r * se)
}

/// Smallest signed difference between two angles, in (−π, π].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let mut d = (a - b).rem_euclid(2.0 * PI);
    if d > PI {
        d -= 2.0 * PI;
    }
    d
}

/// Wrap an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let w = angle_diff(a, 0.0);
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}
