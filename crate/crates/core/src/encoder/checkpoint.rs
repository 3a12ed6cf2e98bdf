use std::path::Path;

use super::{Encoder, EncoderConfig, BACKBONE_PREFIX};
use crate::diffcore::{ParamRegistry, Snapshot};
use crate::error::{Error, Result};

/// A saved backbone: encoder config plus every `backbone.*` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: EncoderConfig,
    pub snapshot: Snapshot,
}

impl Checkpoint {
    pub fn capture(encoder: &Encoder, registry: &ParamRegistry) -> Self {
        let config = serde_json::to_value(&encoder.config).expect("config serializes");
        Checkpoint {
            config: encoder.config.clone(),
            snapshot: Snapshot::capture(registry, BACKBONE_PREFIX, config),
        }
    }

    /// Register the saved arrays into `registry` and bind an encoder to them.
    pub fn restore(&self, registry: &mut ParamRegistry) -> Result<Encoder> {
        self.snapshot.register_into(registry)?;
        Encoder::bind(self.config.clone(), registry)
    }

    pub fn to_json(&self) -> String {
        self.snapshot.to_json()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let snapshot = Snapshot::from_json(text)?;
        let config: EncoderConfig = serde_json::from_value(snapshot.config.clone()).map_err(|e| Error::Checkpoint {
            field: "config".to_string(),
            msg: e.to_string(),
        })?;
        let ckpt = Checkpoint { config, snapshot };
        // Validate shapes against the config before handing it out.
        ckpt.restore(&mut ParamRegistry::new())?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.snapshot.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
