use std::collections::HashMap;

use super::{GridSpec, OccupancyGrid};
use crate::balance::LossWeights;
use crate::cloud::LabeledCloud;
use crate::error::{Error, Result};

/// Most frequent label; ties go to the larger loss weight, then the smaller
/// class id. `None` for no votes.
pub fn plurality(votes: impl IntoIterator<Item = u8>, weights: &LossWeights) -> Option<u8> {
    let mut counts = [0u32; 256];
    for v in votes {
        counts[v as usize] += 1;
    }
    plurality_of_counts(&counts, weights)
}

/// [`plurality`] over a histogram indexed by label.
pub(crate) fn plurality_of_counts(counts: &[u32], weights: &LossWeights) -> Option<u8> {
    let mut best: Option<(u32, u8)> = None;
    for (label, &n) in counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let label = label as u8;
        best = match best {
            None => Some((n, label)),
            Some((bn, bl)) if n > bn || (n == bn && weights.tie_prefers(label, bl)) => Some((n, label)),
            keep => keep,
        };
    }
    best.map(|(_, l)| l)
}

/// Bin points into BEV cells and give each cell the plurality label of its
/// points. Points outside the raster or the z range are ignored; cells
/// without points stay 0.
pub fn voxelize_bev(cloud: &LabeledCloud, spec: &GridSpec, weights: &LossWeights) -> Result<OccupancyGrid> {
    spec.validate()?;
    if weights.n_cls() < spec.n_cls {
        return Err(Error::shape(format!(
            "{} loss weights for n_cls = {}",
            weights.as_slice().len(),
            spec.n_cls
        )));
    }
    let n_labels = spec.n_cls as usize + 1;
    let labels = cloud.labels().as_slice();
    let mut tallies: HashMap<usize, Vec<u32>> = HashMap::new();
    for (p, &l) in cloud.cloud().coords().iter().zip(labels) {
        if l > spec.n_cls {
            return Err(Error::invalid(format!("point label {l} exceeds n_cls {}", spec.n_cls)));
        }
        if !spec.z_in_range(p.z) {
            continue;
        }
        if let Some(cell) = spec.cell_of(p.x, p.y) {
            tallies.entry(cell).or_insert_with(|| vec![0; n_labels])[l as usize] += 1;
        }
    }
    let mut grid = OccupancyGrid::empty(spec.clone());
    let out = grid.labels_mut();
    for (cell, counts) in tallies {
        out[cell] = plurality_of_counts(&counts, weights).unwrap_or(0);
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn empty_cloud_gives_zero_grid() {
        let spec = GridSpec::centered(8, 8, 1.0, -2.0, 4.0, 15);
        let g = voxelize_bev(&LabeledCloud::empty(1), &spec, &LossWeights::default_schema()).unwrap();
        assert_eq!(g.nonzero_count(), 0);
    }

    #[test]
    fn single_point_single_cell() {
        let spec = GridSpec::centered(8, 8, 1.0, -2.0, 4.0, 15);
        let mut c = LabeledCloud::empty(0);
        c.push(Vector3::new(1.5, -2.5, 0.0), &[], 3).unwrap();
        let g = voxelize_bev(&c, &spec, &LossWeights::default_schema()).unwrap();
        assert_eq!(g.nonzero_count(), 1);
        assert_eq!(g.get(1, 5), 3);
    }

    #[test]
    fn ties_follow_weight_then_id() {
        let w = LossWeights::default_schema();
        assert_eq!(plurality([15, 1], &w), Some(1));
        assert_eq!(plurality([15, 13], &w), Some(13));
        assert_eq!(plurality([15, 15, 1], &w), Some(15));
        assert_eq!(plurality([4, 1], &w), Some(1));
        assert_eq!(plurality([], &w), None);
    }

    #[test]
    fn out_of_range_z_is_ignored() {
        let spec = GridSpec::centered(2, 2, 1.0, 0.0, 1.0, 15);
        let mut c = LabeledCloud::empty(0);
        c.push(Vector3::new(0.5, 0.5, 1.5), &[], 3).unwrap();
        c.push(Vector3::new(0.5, 0.5, -0.1), &[], 3).unwrap();
        let g = voxelize_bev(&c, &spec, &LossWeights::default_schema()).unwrap();
        assert_eq!(g.nonzero_count(), 0);
    }
}
