use nalgebra::Vector3;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::BoxLabel;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::schema::*;

/// Axis-aligned placement bounds for object footprints, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arena {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Arena {
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMix {
    pub class_id: u8,
    pub weight: f64,
}

fn default_arena() -> Arena {
    Arena {
        x_min: -16.0,
        x_max: 16.0,
        y_min: -16.0,
        y_max: 16.0,
    }
}

fn default_class_mix() -> Vec<ClassMix> {
    [
        (CAR, 30.0),
        (TRUCK, 4.0),
        (BUS, 2.0),
        (PEDESTRIAN, 12.0),
        (CYCLIST, 3.0),
        (BICYCLE, 3.0),
        (MOTORCYCLE, 2.0),
        (TRAFFIC_CONE, 6.0),
        (BARRIER, 6.0),
        (POLE, 8.0),
        (SIGN, 4.0),
        (VEGETATION, 10.0),
        (BUILDING, 6.0),
        (SIDEWALK, 4.0),
    ]
    .into_iter()
    .map(|(class_id, weight)| ClassMix { class_id, weight })
    .collect()
}

fn default_n_objects() -> usize {
    16
}
fn default_dynamic_fraction() -> f64 {
    0.5
}
fn default_keep_out() -> f64 {
    3.0
}
fn default_min_gap() -> f64 {
    0.3
}
fn default_ground_class() -> u8 {
    ROAD
}
fn default_n_cls() -> u8 {
    DEFAULT_N_CLS
}
fn default_max_attempts() -> usize {
    200
}
fn default_true() -> bool {
    true
}

/// Parameters for [`build_scene`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default = "default_arena")]
    pub arena: Arena,
    #[serde(default = "default_n_objects")]
    pub n_objects: usize,
    #[serde(default = "default_class_mix")]
    pub class_mix: Vec<ClassMix>,
    /// Probability that a movable object is dynamic.
    #[serde(default = "default_dynamic_fraction")]
    pub dynamic_fraction: f64,
    /// No footprint may come closer than this to the world origin.
    #[serde(default = "default_keep_out")]
    pub keep_out_radius: f64,
    /// Minimum clearance between footprint circles.
    #[serde(default = "default_min_gap")]
    pub min_gap: f64,
    #[serde(default)]
    pub ground_z: f64,
    #[serde(default = "default_true")]
    pub ground: bool,
    #[serde(default = "default_ground_class")]
    pub ground_class: u8,
    #[serde(default = "default_n_cls")]
    pub n_cls: u8,
    /// Placement retries per object before giving up.
    #[serde(default = "default_max_attempts")]
    pub max_attempts: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let a = &self.arena;
        if !(a.x_max > a.x_min && a.y_max > a.y_min) {
            return Err(Error::invalid("arena bounds are empty"));
        }
        if self.n_objects > 0 {
            let total: f64 = self.class_mix.iter().map(|c| c.weight).sum();
            if !(total > 0.0) || self.class_mix.iter().any(|c| !(c.weight >= 0.0)) {
                return Err(Error::invalid(
                    "class_mix weights must be non-negative with positive sum",
                ));
            }
        }
        for c in &self.class_mix {
            if c.class_id == 0 || c.class_id > self.n_cls {
                return Err(Error::invalid(format!("class_mix class {} out of range", c.class_id)));
            }
        }
        if self.ground_class == 0 || self.ground_class > self.n_cls {
            return Err(Error::invalid("ground_class out of range"));
        }
        if !(0.0..=1.0).contains(&self.dynamic_fraction) {
            return Err(Error::invalid("dynamic_fraction must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Nominal (l, w, h) in meters and maximum speed in m/s (0 = never moves).
fn class_profile(class_id: u8) -> ([f64; 3], f64) {
    match class_id {
        CAR => ([4.5, 1.9, 1.6], 10.0),
        TRUCK => ([8.0, 2.5, 3.2], 8.0),
        BUS => ([10.0, 2.8, 3.3], 8.0),
        PEDESTRIAN => ([0.7, 0.7, 1.75], 1.5),
        CYCLIST => ([1.8, 0.7, 1.7], 5.0),
        BICYCLE => ([1.7, 0.6, 1.1], 5.0),
        MOTORCYCLE => ([2.1, 0.8, 1.4], 10.0),
        TRAFFIC_CONE => ([0.4, 0.4, 0.8], 0.0),
        BARRIER => ([2.0, 0.5, 1.0], 0.0),
        POLE => ([0.3, 0.3, 5.0], 0.0),
        SIGN => ([0.3, 0.9, 2.6], 0.0),
        VEGETATION => ([2.5, 2.5, 3.0], 0.0),
        BUILDING => ([7.0, 5.0, 6.0], 0.0),
        SIDEWALK => ([6.0, 2.0, 0.15], 0.0),
        _ => ([1.0, 1.0, 1.0], 0.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    /// World-frame box at time 0.
    pub bbox: BoxLabel,
    /// Label given to points on this object's surface.
    pub surface_class: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    /// Height of the ground plane; `None` for no ground.
    pub ground_z: Option<f64>,
    pub ground_class: u8,
    pub objects: Vec<SceneObject>,
    pub rng_seed: u64,
}

impl Scene {
    /// World-frame boxes at time `t` seconds (dynamic boxes displaced by
    /// velocity · t).
    pub fn boxes_at(&self, t: f64) -> Vec<BoxLabel> {
        self.objects
            .iter()
            .map(|o| {
                let mut b = o.bbox;
                if b.is_dynamic {
                    b.center.x += b.velocity[0] * t;
                    b.center.y += b.velocity[1] * t;
                }
                b
            })
            .collect()
    }
}

/// Place `spec.n_objects` non-overlapping objects inside the arena.
///
/// Deterministic in `seed`. Fails when an object cannot be placed within
/// `spec.max_attempts` tries.
pub fn build_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = rng::stream(seed, Stream::Scene, 0);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(spec.n_objects);
    let ground_z = spec.ground_z;
    let class_pick = if spec.n_objects > 0 {
        Some(
            WeightedIndex::new(spec.class_mix.iter().map(|c| c.weight))
                .map_err(|e| Error::invalid(format!("class_mix: {e}")))?,
        )
    } else {
        None
    };
    let a = spec.arena;

    for k in 0..spec.n_objects {
        // Class, size and pose are redrawn together on every attempt so a
        // crowded arena can still take a smaller object.
        let mut placed = None;
        let mut last_class = 0;
        for _ in 0..spec.max_attempts {
            let class_id = spec.class_mix[class_pick.as_ref().unwrap().sample(&mut rng)].class_id;
            last_class = class_id;
            let (nominal, max_speed) = class_profile(class_id);
            let size = Vector3::new(
                nominal[0] * rng.gen_range(0.9..1.1),
                nominal[1] * rng.gen_range(0.9..1.1),
                nominal[2] * rng.gen_range(0.9..1.1),
            );
            let radius = 0.5 * size.x.hypot(size.y);
            if a.x_max - a.x_min < 2.0 * radius || a.y_max - a.y_min < 2.0 * radius {
                continue;
            }
            let cx = rng.gen_range(a.x_min + radius..=a.x_max - radius);
            let cy = rng.gen_range(a.y_min + radius..=a.y_max - radius);
            let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            if cx.hypot(cy) < spec.keep_out_radius + radius {
                continue;
            }
            let clear = objects.iter().all(|o| {
                let d = (o.bbox.center.x - cx).hypot(o.bbox.center.y - cy);
                d > o.bbox.footprint_radius() + radius + spec.min_gap
            });
            if clear {
                placed = Some((class_id, size, max_speed, cx, cy, yaw));
                break;
            }
        }
        let (class_id, size, max_speed, cx, cy, yaw) = placed.ok_or_else(|| {
            Error::invalid(format!(
                "could not place object {k} (last tried class {last_class}) without overlap after {} \
                 attempts (arena too crowded for n_objects = {})",
                spec.max_attempts, spec.n_objects
            ))
        })?;
        let dynamic = max_speed > 0.0 && rng.gen_bool(spec.dynamic_fraction);
        let velocity = if dynamic {
            let speed = rng.gen_range(0.3 * max_speed..=max_speed);
            [speed * yaw.cos(), speed * yaw.sin()]
        } else {
            [0.0, 0.0]
        };
        let bbox = BoxLabel {
            center: Vector3::new(cx, cy, ground_z + 0.5 * size.z),
            size,
            yaw,
            velocity,
            class_id,
            is_dynamic: dynamic,
        };
        bbox.validate(spec.n_cls)?;
        objects.push(SceneObject {
            bbox,
            surface_class: class_id,
        });
    }

    Ok(Scene {
        ground_z: spec.ground.then_some(ground_z),
        ground_class: spec.ground_class,
        objects,
        rng_seed: seed,
    })
}
