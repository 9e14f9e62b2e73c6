//! `SPCK` checkpoints: magic, u32 version, u32 header length, JSON header,
//! then every parameter tensor as little-endian f32 in
//! [`ModelParams::tensors`] order.

use std::io::{BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, ModelParams};
use crate::cloud::io::{read_f32, read_header, read_u32, FORMAT_VERSION};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SPCK";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub seed: u64,
    pub tensors: Vec<TensorShape>,
    /// Free-form training settings, kept for provenance.
    #[serde(default)]
    pub hyper: serde_json::Value,
}

pub fn write_checkpoint(mut w: impl Write, params: &ModelParams, seed: u64, hyper: serde_json::Value) -> Result<()> {
    let header = CheckpointHeader {
        config: params.config.clone(),
        seed,
        tensors: ModelParams::tensor_names()
            .into_iter()
            .zip(params.tensors())
            .map(|(name, t)| TensorShape { name, len: t.len() })
            .collect(),
        hyper,
    };
    let json = serde_json::to_vec(&header)?;
    let json_len = u32::try_from(json.len()).map_err(|_| Error::format("checkpoint", "header too large"))?;
    let mut buf = Vec::with_capacity(12 + json.len() + 4 * params.n_params());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&json_len.to_le_bytes());
    buf.extend_from_slice(&json);
    for t in params.tensors() {
        for &x in t {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(r: impl Read) -> Result<(ModelParams, CheckpointHeader)> {
    let mut r = BufReader::new(r);
    read_header(&mut r, CHECKPOINT_MAGIC, "checkpoint")?;
    let len = read_u32(&mut r)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    header.config.validate()?;
    let mut params = ModelParams::zeros(&header.config);
    let names = ModelParams::tensor_names();
    if header.tensors.len() != names.len() {
        return Err(Error::format(
            "checkpoint",
            "tensor list does not match the model layout",
        ));
    }
    for ((shape, name), t) in header.tensors.iter().zip(&names).zip(params.tensors_mut()) {
        if &shape.name != name || shape.len != t.len() {
            return Err(Error::format(
                "checkpoint",
                format!(
                    "tensor {} has {} values, layout expects {name} with {}",
                    shape.name,
                    shape.len,
                    t.len()
                ),
            ));
        }
        for x in t.iter_mut() {
            *x = read_f32(&mut r)? as f64;
        }
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::format("checkpoint", "trailing bytes"));
    }
    if !params.is_finite() {
        return Err(Error::format("checkpoint", "non-finite parameter"));
    }
    Ok((params, header))
}
