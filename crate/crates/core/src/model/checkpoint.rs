//! Versioned JSON checkpoints.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "config": { ...ModelConfig... },
//!   "parameters": [ { "name": "lstm0.w_f", "values": [[...], ...] }, ... ],
//!   "spectral_u_vectors": [ { "name": "lstm0.w_f", "u": [...] }, ... ],
//!   "scaler": { "min": 0.0, "max": 1.0 }
//! }
//! ```
//!
//! Numbers are written in shortest round-trip form, so a save/load cycle is
//! bit-exact. `scaler` is optional.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::data::Scaler;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format_version: u32,
    config: ModelConfig,
    parameters: Vec<NamedMatrix>,
    spectral_u_vectors: Vec<NamedVector>,
    #[serde(default)]
    scaler: Option<Scaler>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedMatrix {
    name: String,
    values: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedVector {
    name: String,
    u: Vec<f64>,
}

pub fn to_json(model: &Model) -> Result<String> {
    let file = CheckpointFile {
        format_version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        parameters: model
            .params
            .iter()
            .zip(&model.info)
            .map(|(p, i)| NamedMatrix {
                name: i.name.clone(),
                values: p.to_rows(),
            })
            .collect(),
        spectral_u_vectors: model
            .spectral
            .iter()
            .zip(&model.info)
            .filter_map(|(s, i)| {
                s.as_ref().map(|s| NamedVector {
                    name: i.name.clone(),
                    u: s.u.clone(),
                })
            })
            .collect(),
        scaler: model.scaler,
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn from_json(text: &str) -> Result<Model> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let found = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Checkpoint("missing format_version".into()))?;
    if found != u64::from(CHECKPOINT_VERSION) {
        return Err(Error::Version {
            found: found.try_into().unwrap_or(u32::MAX),
            expected: CHECKPOINT_VERSION,
        });
    }
    let file: CheckpointFile = serde_json::from_value(value).map_err(|e| Error::Checkpoint(e.to_string()))?;

    // Layout comes from the config; values are then overwritten by name.
    let mut model = Model::build(file.config, &mut RngStream::new(0))?;
    if file.parameters.len() != model.params.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameters, found {}",
            model.params.len(),
            file.parameters.len()
        )));
    }
    for named in file.parameters {
        let idx = model
            .param_index(&named.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {}", named.name)))?;
        let m = Matrix::from_rows(&named.values)
            .map_err(|_| Error::Checkpoint(format!("ragged values for {}", named.name)))?;
        if m.shape() != model.params[idx].shape() {
            return Err(Error::Checkpoint(format!(
                "{}: expected shape {:?}, found {:?}",
                named.name,
                model.params[idx].shape(),
                m.shape()
            )));
        }
        model.params[idx] = m;
    }
    let expected_u = model.spectral.iter().filter(|s| s.is_some()).count();
    if file.spectral_u_vectors.len() != expected_u {
        return Err(Error::Checkpoint(format!(
            "expected {expected_u} spectral vectors, found {}",
            file.spectral_u_vectors.len()
        )));
    }
    for named in file.spectral_u_vectors {
        let idx = model
            .param_index(&named.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown spectral vector {}", named.name)))?;
        let rows = model.params[idx].rows();
        match &mut model.spectral[idx] {
            Some(state) if named.u.len() == rows => state.u = named.u,
            _ => return Err(Error::Checkpoint(format!("bad spectral vector for {}", named.name))),
        }
    }
    if model.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Checkpoint("non-finite parameter values".into()));
    }
    model.scaler = file.scaler;
    Ok(model)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = to_json(model)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}
