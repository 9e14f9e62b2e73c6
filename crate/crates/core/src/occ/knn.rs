use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector3;

use super::plurality;
use crate::balance::LossWeights;
use crate::cloud::LabeledCloud;
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 8;

#[derive(Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

/// Exact k-nearest-neighbour index over a labeled cloud.
///
/// Neighbours are ranked by (squared distance, point index), so equidistant
/// points resolve toward the lower index.
#[derive(Debug)]
pub struct KnnIndex<'a> {
    cloud: &'a LabeledCloud,
    order: Vec<usize>,
    root: Node,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dist2(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

impl<'a> KnnIndex<'a> {
    pub fn new(cloud: &'a LabeledCloud) -> Self {
        let mut order: Vec<usize> = (0..cloud.len()).collect();
        let n = order.len();
        let root = Self::build(cloud.cloud().coords(), &mut order, 0, n);
        Self { cloud, order, root }
    }

    fn build(pts: &[Vector3<f64>], order: &mut [usize], start: usize, end: usize) -> Node {
        if end - start <= LEAF_SIZE {
            return Node::Leaf { start, end };
        }
        let slice = &mut order[start..end];
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &i in slice.iter() {
            lo = lo.inf(&pts[i]);
            hi = hi.sup(&pts[i]);
        }
        let axis = (hi - lo).imax();
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
        let value = pts[slice[mid]][axis];
        let mid = start + mid;
        Node::Split {
            axis,
            value,
            left: Box::new(Self::build(pts, order, start, mid)),
            right: Box::new(Self::build(pts, order, mid, end)),
        }
    }

    /// The `k` nearest points as (squared distance, index), nearest first.
    pub fn nearest(&self, q: &Vector3<f64>, k: usize) -> Vec<(f64, usize)> {
        let k = k.min(self.cloud.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(&self.root, q, k, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.d2, c.index)).collect()
    }

    fn search(&self, node: &Node, q: &Vector3<f64>, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match node {
            Node::Leaf { start, end } => {
                let pts = self.cloud.cloud().coords();
                for &index in &self.order[*start..*end] {
                    let c = Candidate {
                        d2: dist2(q, &pts[index]),
                        index,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[*axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, heap);
                // Equal distance must still be explored for the index tie-break.
                if heap.len() < k || diff * diff <= heap.peek().unwrap().d2 {
                    self.search(far, q, k, heap);
                }
            }
        }
    }

    /// Majority label among the `k` nearest points; ties use the loss-weight
    /// priority (larger weight, then smaller class id).
    pub fn label(&self, q: &Vector3<f64>, k: usize, weights: &LossWeights) -> u8 {
        let labels = self.cloud.labels().as_slice();
        let votes = self.nearest(q, k).into_iter().map(|(_, i)| labels[i]);
        plurality(votes, weights).unwrap_or(0)
    }
}

/// Label each query by majority vote of its `k` nearest fused points.
pub fn knn_label(fused: &LabeledCloud, queries: &[Vector3<f64>], k: usize, weights: &LossWeights) -> Result<Vec<u8>> {
    if fused.is_empty() {
        return Err(Error::invalid("KNN labeling needs a non-empty fused cloud"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let index = KnnIndex::new(fused);
    Ok(queries.iter().map(|q| index.label(q, k, weights)).collect())
}
