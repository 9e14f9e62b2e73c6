use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::cloud::io::{read_f32, read_header, read_u32, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::schema::DEFAULT_N_CLS;

pub const GRID_MAGIC: &[u8; 4] = b"SPOG";

/// BEV raster: `h` rows along y, `w` columns along x, starting at
/// (`origin_x`, `origin_y`); only points with z in [`z_min`, `z_max`] count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
    pub h: usize,
    pub w: usize,
    pub z_min: f64,
    pub z_max: f64,
    #[serde(default = "default_n_cls")]
    pub n_cls: u8,
}

fn default_n_cls() -> u8 {
    DEFAULT_N_CLS
}

impl Default for GridSpec {
    /// 512 × 512 cells of 0.2 m centred on the sensor, z in [−2, 4] m.
    fn default() -> Self {
        Self::centered(512, 512, 0.2, -2.0, 4.0, DEFAULT_N_CLS)
    }
}

impl GridSpec {
    /// Grid centred on the origin.
    pub fn centered(h: usize, w: usize, cell_size: f64, z_min: f64, z_max: f64, n_cls: u8) -> Self {
        Self {
            origin_x: -(w as f64) * cell_size / 2.0,
            origin_y: -(h as f64) * cell_size / 2.0,
            cell_size,
            h,
            w,
            z_min,
            z_max,
            n_cls,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::invalid("cell_size must be positive"));
        }
        if !(self.z_max > self.z_min) {
            return Err(Error::invalid("z_max must exceed z_min"));
        }
        if self.h == 0 || self.w == 0 {
            return Err(Error::invalid("grid needs at least one cell"));
        }
        if self.n_cls == 0 {
            return Err(Error::invalid("n_cls must be at least 1"));
        }
        if !(self.origin_x.is_finite() && self.origin_y.is_finite()) {
            return Err(Error::invalid("grid origin must be finite"));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.h * self.w
    }

    /// Index k with `origin + k * size <= v < origin + (k + 1) * size`, with
    /// the edges evaluated exactly as written. The division alone can land
    /// one cell off for points on an edge.
    fn axis_index(&self, v: f64, origin: f64) -> f64 {
        let mut k = ((v - origin) / self.cell_size).floor();
        if v < origin + k * self.cell_size {
            k -= 1.0;
        } else if v >= origin + (k + 1.0) * self.cell_size {
            k += 1.0;
        }
        k
    }

    /// Row-major (y-major) cell index of (x, y), if inside the raster.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        let fx = self.axis_index(x, self.origin_x);
        let fy = self.axis_index(y, self.origin_y);
        if fx >= 0.0 && fy >= 0.0 && fx < self.w as f64 && fy < self.h as f64 {
            Some(fy as usize * self.w + fx as usize)
        } else {
            None
        }
    }

    pub fn z_in_range(&self, z: f64) -> bool {
        z >= self.z_min && z <= self.z_max
    }

    /// Center of cell (`row`, `col`) in the xy-plane.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.cell_size,
            self.origin_y + (row as f64 + 0.5) * self.cell_size,
        )
    }
}

/// Per-cell semantic labels in [0, n_cls], row-major; 0 = empty.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    spec: GridSpec,
    labels: Vec<u8>,
}

impl OccupancyGrid {
    pub fn empty(spec: GridSpec) -> Self {
        let labels = vec![0; spec.n_cells()];
        Self { spec, labels }
    }

    pub fn new(spec: GridSpec, labels: Vec<u8>) -> Result<Self> {
        spec.validate()?;
        if labels.len() != spec.n_cells() {
            return Err(Error::shape(format!(
                "{} labels for a {}x{} grid",
                labels.len(),
                spec.h,
                spec.w
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > spec.n_cls) {
            return Err(Error::invalid(format!("label {bad} exceeds n_cls {}", spec.n_cls)));
        }
        Ok(Self { spec, labels })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.spec.w + col]
    }

    pub(crate) fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn nonzero_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }
}

/// `SPOG` layout: magic, u32 version, f32 origin_x, f32 origin_y,
/// f32 cell_size, u32 H, u32 W, u8 n_cls, H·W u8 labels (row-major).
///
/// The z range is not part of the format; [`read_grid`] restores the
/// default [−2, 4] m.
pub fn write_grid(mut w: impl Write, grid: &OccupancyGrid) -> Result<()> {
    let s = &grid.spec;
    let mut buf = Vec::with_capacity(29 + grid.labels.len());
    buf.extend_from_slice(GRID_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [s.origin_x, s.origin_y, s.cell_size] {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for v in [s.h, s.w] {
        let v = u32::try_from(v).map_err(|_| Error::format("grid", "dimension exceeds u32"))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.push(s.n_cls);
    buf.extend_from_slice(&grid.labels);
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_grid(r: impl Read) -> Result<OccupancyGrid> {
    let mut r = std::io::BufReader::new(r);
    read_header(&mut r, GRID_MAGIC, "grid")?;
    let origin_x = read_f32(&mut r)? as f64;
    let origin_y = read_f32(&mut r)? as f64;
    let cell_size = read_f32(&mut r)? as f64;
    let h = read_u32(&mut r)? as usize;
    let w = read_u32(&mut r)? as usize;
    let mut n = [0u8; 1];
    r.read_exact(&mut n)?;
    let spec = GridSpec {
        origin_x,
        origin_y,
        cell_size,
        h,
        w,
        n_cls: n[0],
        ..GridSpec::default()
    };
    spec.validate().map_err(|e| Error::format("grid", e.to_string()))?;
    let mut labels = vec![0u8; h * w];
    r.read_exact(&mut labels)?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::format("grid", "trailing bytes"));
    }
    OccupancyGrid::new(spec, labels).map_err(|e| Error::format("grid", e.to_string()))
}
