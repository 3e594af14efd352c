//! JSON network checkpoints.
//!
//! Parameter arrays are stored row-major as base64-encoded little-endian
//! 64-bit floats, so a save/load cycle is bit-exact.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::siren::{Layer, SirenConfig, SirenNetwork};

pub const FORMAT: &str = "inr-denoise-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointDoc {
    format: String,
    version: u32,
    config: SirenConfig,
    layers: Vec<LayerDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerDoc {
    outputs: usize,
    inputs: usize,
    weight: String,
    bias: String,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(text: &str, expected: usize) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::Checkpoint(format!("bad base64: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(Error::Checkpoint(format!(
            "expected {expected} floats, found {} bytes",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn to_json(net: &SirenNetwork) -> String {
    let doc = CheckpointDoc {
        format: FORMAT.into(),
        version: VERSION,
        config: *net.config(),
        layers: net
            .layers()
            .iter()
            .map(|l| LayerDoc {
                outputs: l.outputs(),
                inputs: l.inputs(),
                weight: encode(l.weight()),
                bias: encode(l.bias()),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("checkpoint serializes")
}

pub fn from_json(text: &str) -> Result<SirenNetwork> {
    let doc: CheckpointDoc =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if doc.format != FORMAT || doc.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            doc.format, doc.version
        )));
    }
    let layers = doc
        .layers
        .iter()
        .map(|l| {
            Layer::new(
                l.outputs,
                l.inputs,
                decode(&l.weight, l.outputs * l.inputs)?,
                decode(&l.bias, l.outputs)?,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    SirenNetwork::from_layers(doc.config, layers)
}

pub fn save(net: &SirenNetwork, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_json(net)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: impl AsRef<Path>) -> Result<SirenNetwork> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_json(&text)
}
