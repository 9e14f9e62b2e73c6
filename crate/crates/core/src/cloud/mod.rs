//! Point-cloud data model, rigid transforms, spherical coordinates and the
//! binary frame formats.

mod boxes;
pub mod io;
mod points;
mod pose;
mod spherical;

pub use boxes::BoxLabel;
pub use points::{CartesianPoint, LabeledCloud, PointCloud, PointLabels};
pub use pose::Pose;
pub use spherical::{angle_diff, from_spherical, to_spherical, wrap_angle, SphericalPoint};

pub use nalgebra::{Matrix3, Vector3};

use crate::Result;

/// Map every coordinate through `pose` (p' = R p + t). Features and order are
/// untouched.
pub fn transform(cloud: &PointCloud, pose: &Pose) -> Result<PointCloud> {
    pose.validate()?;
    let coords = cloud.coords().iter().map(|p| pose.apply(p)).collect();
    PointCloud::from_parts(coords, cloud.features().to_vec(), cloud.feature_dim())
}
