use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{aggregate, voxelize_bev, GridSpec, KnnIndex, OccupancyGrid};
use crate::balance::LossWeights;
use crate::cloud::LabeledCloud;
use crate::error::Result;
use crate::synth::{SequenceFrame, SequenceMeta};

fn default_radius() -> f64 {
    0.4
}
fn default_k() -> usize {
    5
}
fn default_speed() -> f64 {
    0.2
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccOptions {
    /// Fill empty cells near fused points by KNN labeling.
    #[serde(default = "default_true")]
    pub densify: bool,
    /// Horizontal reach (m) from a cell's column axis to the nearest fused
    /// point for the cell to be filled.
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Boxes moving faster than this (m/s) count as dynamic even when their
    /// `is_dynamic` flag is false.
    #[serde(default = "default_speed")]
    pub dynamic_speed_threshold: f64,
}

impl Default for OccOptions {
    fn default() -> Self {
        Self {
            densify: true,
            radius: default_radius(),
            k: default_k(),
            dynamic_speed_threshold: default_speed(),
        }
    }
}

/// Occupancy ground truth for `keyframe`, in that frame's sensor coordinates.
///
/// split → aggregate → keyframe frame → voxel vote, then optional
/// densification: every still-empty cell whose column axis passes within
/// `radius` of an in-range fused point takes the KNN label of its centre,
/// measured in the xy-plane.
pub fn make_occupancy(
    frames: &[SequenceFrame],
    meta: &SequenceMeta,
    spec: &GridSpec,
    keyframe: usize,
    options: &OccOptions,
    weights: &LossWeights,
) -> Result<OccupancyGrid> {
    meta.validate()?;
    spec.validate()?;
    let promoted: Vec<SequenceFrame> = frames
        .iter()
        .map(|f| SequenceFrame {
            cloud: f.cloud.clone(),
            boxes: f
                .boxes
                .iter()
                .map(|b| {
                    let mut b = *b;
                    b.is_dynamic |= b.speed() > options.dynamic_speed_threshold;
                    b
                })
                .collect(),
        })
        .collect();
    let world = aggregate(&promoted, &meta.ego_poses, keyframe)?;
    let to_key = meta.ego_poses[keyframe].inverse();
    let fused = world.map_coords(|p| to_key.apply(p));
    let mut grid = voxelize_bev(&fused, spec, weights)?;
    if options.densify && options.k > 0 {
        densify(&mut grid, &fused, options, weights)?;
    }
    Ok(grid)
}

fn densify(grid: &mut OccupancyGrid, fused: &LabeledCloud, options: &OccOptions, weights: &LossWeights) -> Result<()> {
    let spec = grid.spec().clone();
    let reach = options.radius + spec.cell_size;
    let keep: Vec<usize> = fused
        .cloud()
        .coords()
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            spec.z_in_range(p.z)
                && p.x >= spec.origin_x - reach
                && p.y >= spec.origin_y - reach
                && p.x <= spec.origin_x + spec.w as f64 * spec.cell_size + reach
                && p.y <= spec.origin_y + spec.h as f64 * spec.cell_size + reach
        })
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Ok(());
    }
    let flat = fused.select(&keep).map_coords(|p| Vector3::new(p.x, p.y, 0.0));
    let index = KnnIndex::new(&flat);
    let r2 = options.radius * options.radius;
    let labels = grid.labels_mut();
    for row in 0..spec.h {
        for col in 0..spec.w {
            let cell = row * spec.w + col;
            if labels[cell] != 0 {
                continue;
            }
            let (cx, cy) = spec.cell_center(row, col);
            let q = Vector3::new(cx, cy, 0.0);
            if index.nearest(&q, 1).first().is_some_and(|&(d2, _)| d2 <= r2) {
                labels[cell] = index.label(&q, options.k, weights);
            }
        }
    }
    Ok(())
}
