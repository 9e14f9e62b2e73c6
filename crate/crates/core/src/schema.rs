//! The default 15-class semantic schema.
//!
//! Index 0 is always "empty". Foreground classes are the traffic
//! participants that receive the larger loss weight.

pub const EMPTY: u8 = 0;
pub const DEFAULT_N_CLS: u8 = 15;

pub const CAR: u8 = 1;
pub const TRUCK: u8 = 2;
pub const BUS: u8 = 3;
pub const PEDESTRIAN: u8 = 4;
pub const CYCLIST: u8 = 5;
pub const BICYCLE: u8 = 6;
pub const MOTORCYCLE: u8 = 7;
pub const TRAFFIC_CONE: u8 = 8;
pub const BARRIER: u8 = 9;
pub const POLE: u8 = 10;
pub const SIGN: u8 = 11;
pub const VEGETATION: u8 = 12;
pub const BUILDING: u8 = 13;
pub const SIDEWALK: u8 = 14;
pub const ROAD: u8 = 15;

pub const NAMES: [&str; 16] = [
    "empty",
    "car",
    "truck",
    "bus",
    "pedestrian",
    "cyclist",
    "bicycle",
    "motorcycle",
    "traffic_cone",
    "barrier",
    "pole",
    "sign",
    "vegetation",
    "building",
    "sidewalk",
    "road",
];

/// Car, pedestrian, cyclist, bicycle, motorcycle.
pub const DEFAULT_FOREGROUND: [u8; 5] = [CAR, PEDESTRIAN, CYCLIST, BICYCLE, MOTORCYCLE];

pub fn default_background() -> Vec<u8> {
    (1..=DEFAULT_N_CLS)
        .filter(|c| !DEFAULT_FOREGROUND.contains(c))
        .collect()
}

pub fn class_name(id: u8) -> &'static str {
    NAMES.get(id as usize).copied().unwrap_or("unknown")
}
