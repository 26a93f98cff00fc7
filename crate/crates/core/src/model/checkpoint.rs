//! Binary checkpoint container.
//!
//! Layout: the magic bytes `SRB1`, a little-endian `u64` manifest length, the
//! UTF-8 manifest, then every parameter as raw row-major little-endian `f32`.
//! Manifest lines are `config <key> <value>` followed by
//! `param <name> <d0>x<d1>... <byte offset>`, offsets counted from the start
//! of the data section.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{ModelConfig, ModelParams};

pub const MAGIC: &[u8; 4] = b"SRB1";

fn manifest(params: &ModelParams) -> String {
    let c = params.config();
    let mut m = String::new();
    for (k, v) in c.dims() {
        m.push_str(&format!("config {k} {v}\n"));
    }
    m.push_str(&format!("config dropout {}\n", c.dropout));
    m.push_str(&format!("config lambda {}\n", c.lambda));
    let mut offset = 0usize;
    for (name, t) in params.iter() {
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        m.push_str(&format!("param {name} {} {offset}\n", shape.join("x")));
        offset += t.numel() * 4;
    }
    m
}

pub fn to_bytes(params: &ModelParams) -> Vec<u8> {
    let manifest = manifest(params);
    let data_len: usize = params.numel() * 4;
    let mut out = Vec::with_capacity(12 + manifest.len() + data_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    for (_, t) in params.iter() {
        for v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("missing SRB1 header"));
    }
    let len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    let data_start = 12usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated manifest"))?;
    let text = std::str::from_utf8(&bytes[12..data_start]).map_err(|_| bad("manifest is not UTF-8"))?;
    let data = &bytes[data_start..];

    let mut config = ModelConfig::toy();
    let mut named = Vec::new();
    let mut expected_offset = 0usize;
    for line in text.lines() {
        let fields: Vec<&str> = line.split(' ').collect();
        match fields[..] {
            ["config", key, value] => {
                let int = || value.parse::<usize>().map_err(|_| bad(format!("bad value for {key}")));
                let float = || value.parse::<f64>().map_err(|_| bad(format!("bad value for {key}")));
                match key {
                    "vocab_size" => config.vocab_size = int()?,
                    "embed_dim" => config.embed_dim = int()?,
                    "hidden_dim" => config.hidden_dim = int()?,
                    "encoder_layers" => config.encoder_layers = int()?,
                    "decoder_layers" => config.decoder_layers = int()?,
                    "gate_hidden_dim" => config.gate_hidden_dim = int()?,
                    "dropout" => config.dropout = float()?,
                    "lambda" => config.lambda = float()?,
                    other => return Err(bad(format!("unknown config key {other}"))),
                }
            }
            ["param", name, shape, offset] => {
                let shape: Vec<usize> = shape
                    .split('x')
                    .map(|d| d.parse().map_err(|_| bad(format!("bad shape for {name}"))))
                    .collect::<Result<_>>()?;
                let offset: usize = offset.parse().map_err(|_| bad(format!("bad offset for {name}")))?;
                if offset != expected_offset {
                    return Err(bad(format!("offset of {name} is {offset}, expected {expected_offset}")));
                }
                let numel: usize = shape.iter().product();
                let end = offset + numel * 4;
                let raw = data.get(offset..end).ok_or_else(|| bad(format!("data for {name} is truncated")))?;
                let values = raw
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect();
                named.push((name.to_string(), Tensor::new(shape, values)?));
                expected_offset = end;
            }
            _ => return Err(bad(format!("bad manifest line {line:?}"))),
        }
    }
    if expected_offset != data.len() {
        return Err(bad("trailing bytes after parameter data"));
    }
    ModelParams::from_named(&config, named)
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Loads a checkpoint and checks its shapes against `expected`.
pub fn load_compatible(path: &Path, expected: &ModelConfig) -> Result<ModelParams> {
    let params = load(path)?;
    params.config().check_compatible(expected)?;
    Ok(params)
}
