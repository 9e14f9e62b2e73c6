use nalgebra::Vector3;

use crate::error::{Error, Result};

/// One point: coordinates in meters plus `d` opaque features.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianPoint {
    pub position: Vector3<f64>,
    pub features: Vec<f64>,
}

/// N points sharing a feature dimensionality `d`, stored as parallel arrays.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    feature_dim: usize,
    coords: Vec<Vector3<f64>>,
    features: Vec<f64>,
}

impl PointCloud {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            coords: Vec::new(),
            features: Vec::new(),
        }
    }

    pub fn with_capacity(feature_dim: usize, n: usize) -> Self {
        Self {
            feature_dim,
            coords: Vec::with_capacity(n),
            features: Vec::with_capacity(n * feature_dim),
        }
    }

    pub fn from_parts(coords: Vec<Vector3<f64>>, features: Vec<f64>, feature_dim: usize) -> Result<Self> {
        if features.len() != coords.len() * feature_dim {
            return Err(Error::shape(format!(
                "{} feature values for {} points of dimension {}",
                features.len(),
                coords.len(),
                feature_dim
            )));
        }
        if let Some(i) = coords.iter().position(|p| !is_finite(p)) {
            return Err(Error::invalid(format!("point {i} has non-finite coordinates")));
        }
        Ok(Self {
            feature_dim,
            coords,
            features,
        })
    }

    pub fn push(&mut self, position: Vector3<f64>, features: &[f64]) -> Result<()> {
        if features.len() != self.feature_dim {
            return Err(Error::shape(format!(
                "expected {} features, got {}",
                self.feature_dim,
                features.len()
            )));
        }
        if !is_finite(&position) {
            return Err(Error::invalid("non-finite coordinates"));
        }
        self.coords.push(position);
        self.features.extend_from_slice(features);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn coords(&self) -> &[Vector3<f64>] {
        &self.coords
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn point_features(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn point(&self, i: usize) -> CartesianPoint {
        CartesianPoint {
            position: self.coords[i],
            features: self.point_features(i).to_vec(),
        }
    }

    /// Points at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let mut out = PointCloud::with_capacity(self.feature_dim, indices.len());
        for &i in indices {
            out.coords.push(self.coords[i]);
            out.features.extend_from_slice(self.point_features(i));
        }
        out
    }

    /// Append all points of `other`.
    pub fn extend(&mut self, other: &PointCloud) -> Result<()> {
        if other.feature_dim != self.feature_dim {
            return Err(Error::shape(format!(
                "feature dimension {} vs {}",
                self.feature_dim, other.feature_dim
            )));
        }
        self.coords.extend_from_slice(&other.coords);
        self.features.extend_from_slice(&other.features);
        Ok(())
    }

    /// Replace coordinates in place through `f`; features are kept.
    pub fn map_coords(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> PointCloud {
        PointCloud {
            feature_dim: self.feature_dim,
            coords: self.coords.iter().map(f).collect(),
            features: self.features.clone(),
        }
    }
}

fn is_finite(p: &Vector3<f64>) -> bool {
    p.iter().all(|v| v.is_finite())
}

/// Per-point semantic labels in `[0, n_cls]`; 0 means empty.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PointLabels(pub Vec<u8>);

impl PointLabels {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn select(&self, indices: &[usize]) -> PointLabels {
        PointLabels(indices.iter().map(|&i| self.0[i]).collect())
    }
}

/// A cloud with one label per point. The length pairing is checked on every
/// construction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledCloud {
    cloud: PointCloud,
    labels: PointLabels,
}

impl LabeledCloud {
    pub fn new(cloud: PointCloud, labels: PointLabels) -> Result<Self> {
        if cloud.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} labels for {} points",
                labels.len(),
                cloud.len()
            )));
        }
        Ok(Self { cloud, labels })
    }

    pub fn empty(feature_dim: usize) -> Self {
        Self {
            cloud: PointCloud::new(feature_dim),
            labels: PointLabels::default(),
        }
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn labels(&self) -> &PointLabels {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    pub fn into_parts(self) -> (PointCloud, PointLabels) {
        (self.cloud, self.labels)
    }

    pub fn push(&mut self, position: Vector3<f64>, features: &[f64], label: u8) -> Result<()> {
        self.cloud.push(position, features)?;
        self.labels.0.push(label);
        Ok(())
    }

    pub fn extend(&mut self, other: &LabeledCloud) -> Result<()> {
        self.cloud.extend(&other.cloud)?;
        self.labels.0.extend_from_slice(&other.labels.0);
        Ok(())
    }

    pub fn select(&self, indices: &[usize]) -> LabeledCloud {
        LabeledCloud {
            cloud: self.cloud.select(indices),
            labels: self.labels.select(indices),
        }
    }

    pub fn map_coords(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> LabeledCloud {
        LabeledCloud {
            cloud: self.cloud.map_coords(f),
            labels: self.labels.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_bad_feature_width() {
        let mut c = PointCloud::new(2);
        assert!(c.push(Vector3::new(f64::NAN, 0.0, 0.0), &[0.0, 0.0]).is_err());
        assert!(c.push(Vector3::new(0.0, 0.0, 0.0), &[0.0]).is_err());
        assert!(c.push(Vector3::new(0.0, 0.0, 0.0), &[0.0, 1.0]).is_ok());
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn label_length_must_match() {
        let mut c = PointCloud::new(0);
        c.push(Vector3::zeros(), &[]).unwrap();
        assert!(LabeledCloud::new(c.clone(), PointLabels(vec![])).is_err());
        assert!(LabeledCloud::new(c, PointLabels(vec![3])).is_ok());
    }
}
