use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_azimuth_steps() -> u32 {
    720
}

fn default_max_range() -> f64 {
    120.0
}

/// Beam layout of a spinning LiDAR. Angles are in degrees at this boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamSpec {
    pub n_beams: u32,
    /// Upper VFOV limit, degrees.
    pub alpha_up: f64,
    /// Lower VFOV limit, degrees.
    pub alpha_low: f64,
    #[serde(default = "default_azimuth_steps")]
    pub azimuth_steps: u32,
    /// Returns beyond this range (meters) are dropped.
    #[serde(default = "default_max_range")]
    pub max_range: f64,
}

impl BeamSpec {
    pub fn new(n_beams: u32, alpha_up: f64, alpha_low: f64, azimuth_steps: u32) -> Result<Self> {
        let spec = Self {
            n_beams,
            alpha_up,
            alpha_low,
            azimuth_steps,
            max_range: default_max_range(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_beams == 0 {
            return Err(Error::invalid("n_beams must be at least 1"));
        }
        if self.azimuth_steps == 0 {
            return Err(Error::invalid("azimuth_steps must be at least 1"));
        }
        if !(self.alpha_up.is_finite() && self.alpha_low.is_finite()) || self.alpha_up <= self.alpha_low {
            return Err(Error::invalid(format!(
                "degenerate VFOV: alpha_up {} must exceed alpha_low {}",
                self.alpha_up, self.alpha_low
            )));
        }
        if !(self.alpha_low >= -90.0 && self.alpha_up <= 90.0) {
            return Err(Error::invalid("VFOV must lie within [-90, 90] degrees"));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::invalid("max_range must be positive"));
        }
        Ok(())
    }

    /// Nominal beam elevations in radians, ascending. Beams are spaced
    /// uniformly with the first and last on the VFOV limits; a single beam
    /// sits at the VFOV midpoint.
    pub fn elevations(&self) -> Vec<f64> {
        let n = self.n_beams as usize;
        if n == 1 {
            return vec![(0.5 * (self.alpha_up + self.alpha_low)).to_radians()];
        }
        let step = (self.alpha_up - self.alpha_low) / (n - 1) as f64;
        (0..n)
            .map(|i| (self.alpha_low + step * i as f64).to_radians())
            .collect()
    }

    /// Azimuth samples in radians, starting at 0 (straight ahead, +y) and
    /// wrapped into (−π, π].
    pub fn azimuths(&self) -> Vec<f64> {
        let n = self.azimuth_steps as usize;
        let step = std::f64::consts::TAU / n as f64;
        (0..n).map(|i| crate::cloud::wrap_angle(step * i as f64)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elevations_span_vfov() {
        let b = BeamSpec::new(5, 10.0, -30.0, 4).unwrap();
        let e = b.elevations();
        assert_eq!(e.len(), 5);
        assert!((e[0] - (-30f64).to_radians()).abs() < 1e-15);
        assert!((e[4] - 10f64.to_radians()).abs() < 1e-15);
        let single = BeamSpec::new(1, -44.0, -46.0, 1).unwrap();
        assert!((single.elevations()[0] - (-45f64).to_radians()).abs() < 1e-15);
    }

    #[test]
    fn rejects_degenerate() {
        assert!(BeamSpec::new(0, 10.0, 0.0, 1).is_err());
        assert!(BeamSpec::new(4, 10.0, 10.0, 1).is_err());
        assert!(BeamSpec::new(4, 10.0, 0.0, 0).is_err());
    }

    #[test]
    fn azimuths_start_ahead() {
        let b = BeamSpec::new(1, 1.0, 0.0, 4).unwrap();
        let a = b.azimuths();
        assert_eq!(a[0], 0.0);
        assert!((a[2] - std::f64::consts::PI).abs() < 1e-15);
        assert!(a[3] < 0.0);
    }
}
