//! Little-endian binary formats for frames (`SPTC`), point labels (`SPTL`)
//! and JSON-lines box files.

use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::Vector3;

use super::{BoxLabel, PointCloud, PointLabels};
use crate::error::{Error, Result};

pub const FRAME_MAGIC: &[u8; 4] = b"SPTC";
pub const LABEL_MAGIC: &[u8; 4] = b"SPTL";
pub const FORMAT_VERSION: u32 = 1;

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f32(r: &mut impl Read) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

pub(crate) fn read_header(r: &mut impl Read, magic: &[u8; 4], kind: &'static str) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::format(kind, format!("bad magic {m:?}")));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::format(kind, format!("unsupported version {version}")));
    }
    Ok(())
}

fn count_u32(n: usize, kind: &'static str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::format(kind, format!("count {n} exceeds u32")))
}

fn ensure_eof(r: &mut impl Read, kind: &'static str) -> Result<()> {
    let mut b = [0u8; 1];
    if r.read(&mut b)? != 0 {
        return Err(Error::format(kind, "trailing bytes"));
    }
    Ok(())
}

/// Coordinates and features are narrowed to f32.
pub fn write_frame(mut w: impl Write, cloud: &PointCloud) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + cloud.len() * 4 * (3 + cloud.feature_dim()));
    buf.extend_from_slice(FRAME_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&count_u32(cloud.len(), "frame")?.to_le_bytes());
    buf.extend_from_slice(&count_u32(cloud.feature_dim(), "frame")?.to_le_bytes());
    for (i, p) in cloud.coords().iter().enumerate() {
        for v in p.iter().chain(cloud.point_features(i)) {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_frame(r: impl Read) -> Result<PointCloud> {
    let mut r = BufReader::new(r);
    read_header(&mut r, FRAME_MAGIC, "frame")?;
    let n = read_u32(&mut r)? as usize;
    let d = read_u32(&mut r)? as usize;
    let mut coords = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n * d);
    for _ in 0..n {
        let x = read_f32(&mut r)? as f64;
        let y = read_f32(&mut r)? as f64;
        let z = read_f32(&mut r)? as f64;
        coords.push(Vector3::new(x, y, z));
        for _ in 0..d {
            features.push(read_f32(&mut r)? as f64);
        }
    }
    ensure_eof(&mut r, "frame")?;
    PointCloud::from_parts(coords, features, d)
}

pub fn write_labels(mut w: impl Write, labels: &PointLabels) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + labels.len());
    buf.extend_from_slice(LABEL_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&count_u32(labels.len(), "label")?.to_le_bytes());
    buf.extend_from_slice(labels.as_slice());
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_labels(r: impl Read) -> Result<PointLabels> {
    let mut r = BufReader::new(r);
    read_header(&mut r, LABEL_MAGIC, "label")?;
    let n = read_u32(&mut r)? as usize;
    let mut labels = vec![0u8; n];
    r.read_exact(&mut labels)?;
    ensure_eof(&mut r, "label")?;
    Ok(PointLabels(labels))
}

pub fn write_boxes(mut w: impl Write, boxes: &[BoxLabel]) -> Result<()> {
    for b in boxes {
        serde_json::to_writer(&mut w, b)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_boxes(r: impl Read) -> Result<Vec<BoxLabel>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let b: BoxLabel =
            serde_json::from_str(&line).map_err(|e| Error::format("box", format!("line {}: {e}", i + 1)))?;
        out.push(b);
    }
    Ok(out)
}
