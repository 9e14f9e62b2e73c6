#![allow(dead_code)]

use nalgebra::Vector3;
use occspot_core::cloud::BoxLabel;
use occspot_core::synth::Scene;

/// Signed distance from `p` to the surface of `b` (negative inside).
pub fn box_sdf(b: &BoxLabel, p: &Vector3<f64>) -> f64 {
    let (s, c) = b.yaw.sin_cos();
    let d = p - b.center;
    let local = Vector3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z);
    let q = local.abs() - b.size * 0.5;
    let outside = q.sup(&Vector3::zeros()).norm();
    let inside = q.max().min(0.0);
    outside + inside
}

/// Distance to the nearest scene surface and that surface's label.
pub fn nearest_surface(scene: &Scene, boxes: &[BoxLabel], p: &Vector3<f64>) -> (f64, u8) {
    let mut best = (f64::INFINITY, 0u8);
    if let Some(gz) = scene.ground_z {
        best = ((p.z - gz).abs(), scene.ground_class);
    }
    for (b, o) in boxes.iter().zip(&scene.objects) {
        let d = box_sdf(b, p).abs();
        if d < best.0 {
            best = (d, o.surface_class);
        }
    }
    best
}

pub mod grad;
