use crate::cloud::{BoxLabel, PointCloud};

/// Partition of a frame's points.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub static_points: Vec<usize>,
    /// (point index, box index), ascending by point index.
    pub dynamic_points: Vec<(usize, usize)>,
}

/// A point is dynamic iff some box with `is_dynamic` contains it (faces
/// inclusive); it is tagged with the first such box.
pub fn split_dynamic_static(frame: &PointCloud, boxes: &[BoxLabel]) -> Split {
    let dynamic: Vec<(usize, &BoxLabel)> = boxes.iter().enumerate().filter(|(_, b)| b.is_dynamic).collect();
    let mut out = Split::default();
    for (i, p) in frame.coords().iter().enumerate() {
        match dynamic.iter().find(|(_, b)| b.contains(p)) {
            Some(&(j, _)) => out.dynamic_points.push((i, j)),
            None => out.static_points.push(i),
        }
    }
    out
}
