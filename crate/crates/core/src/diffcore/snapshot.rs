//! Versioned JSON persistence for named arrays:
//! `{format_version, config, params: {name: {shape, data}}}` where `data` is
//! base64 of the row-major little-endian `f64` bytes.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde_json::{json, Map, Value};

use super::{ParamRegistry, Tensor};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Named arrays plus an opaque config blob.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub config: Value,
    pub params: BTreeMap<String, Tensor>,
}

fn field_err(field: impl Into<String>, msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        field: field.into(),
        msg: msg.into(),
    }
}

fn encode(t: &Tensor) -> String {
    let mut bytes = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

fn decode(name: &str, shape: (usize, usize), data: &str) -> Result<Tensor> {
    let bytes = STANDARD
        .decode(data)
        .map_err(|e| field_err(format!("params.{name}.data"), e.to_string()))?;
    if bytes.len() != shape.0 * shape.1 * 8 {
        return Err(field_err(
            format!("params.{name}.data"),
            format!("{} bytes for shape {:?}", bytes.len(), shape),
        ));
    }
    let vals = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(shape.0, shape.1, vals)
}

impl Snapshot {
    /// Copy every registry parameter whose name starts with `prefix`.
    pub fn capture(registry: &ParamRegistry, prefix: &str, config: Value) -> Self {
        let params = registry
            .ids()
            .filter(|&id| registry.name(id).starts_with(prefix))
            .map(|id| (registry.name(id).to_string(), registry.value(id).clone()))
            .collect();
        Snapshot { config, params }
    }

    /// Register every array into `registry` (names must be new).
    pub fn register_into(&self, registry: &mut ParamRegistry) -> Result<()> {
        for (name, t) in &self.params {
            registry.register(name.clone(), t.clone())?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let params: Map<String, Value> = self
            .params
            .iter()
            .map(|(name, t)| {
                (
                    name.clone(),
                    json!({ "shape": [t.rows(), t.cols()], "data": encode(t) }),
                )
            })
            .collect();
        let doc = json!({
            "format_version": FORMAT_VERSION,
            "config": self.config,
            "params": params,
        });
        serde_json::to_string_pretty(&doc).expect("json values serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text).map_err(|e| field_err("<document>", e.to_string()))?;
        let version = doc
            .get("format_version")
            .and_then(Value::as_u64)
            .ok_or_else(|| field_err("format_version", "missing or not an integer"))?;
        if version != FORMAT_VERSION as u64 {
            return Err(Error::Version {
                found: version as u32,
                expected: FORMAT_VERSION,
            });
        }
        let config = doc
            .get("config")
            .cloned()
            .ok_or_else(|| field_err("config", "missing"))?;
        let raw = doc
            .get("params")
            .and_then(Value::as_object)
            .ok_or_else(|| field_err("params", "missing or not an object"))?;
        let mut params = BTreeMap::new();
        for (name, entry) in raw {
            let shape = entry
                .get("shape")
                .and_then(Value::as_array)
                .filter(|s| s.len() == 2)
                .and_then(|s| Some((s[0].as_u64()? as usize, s[1].as_u64()? as usize)))
                .ok_or_else(|| field_err(format!("params.{name}.shape"), "expected [rows, cols]"))?;
            let data = entry
                .get("data")
                .and_then(Value::as_str)
                .ok_or_else(|| field_err(format!("params.{name}.data"), "missing"))?;
            params.insert(name.clone(), decode(name, shape, data)?);
        }
        Ok(Snapshot { config, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
