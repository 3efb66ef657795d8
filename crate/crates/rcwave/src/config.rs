//! Run configuration: a TOML file with nested sections plus repeatable
//! dotted-key command-line overrides. Unknown keys are rejected, and the
//! effective configuration is persisted next to every run's outputs so a
//! run can be reproduced from its own artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::discriminators::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::objectives::LossWeights;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory of WAVs for `ingest`.
    pub wav_dir: Option<PathBuf>,
    /// Newline-delimited training manifest (paths relative to its parent).
    pub train_manifest: Option<PathBuf>,
    /// Fixed probe clip for the contribution tracker; defaults to the
    /// first training clip.
    pub probe_wav: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub training: TrainConfig,
    pub losses: LossWeights,
    pub data: DataConfig,
}

impl RunConfig {
    /// Load from an optional file and apply `key.path=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut tree: toml::Value = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Value>()
                    .map_err(|e| Error::format(p, e.to_string()))?
            }
            None => toml::Value::Table(Default::default()),
        };
        for ov in overrides {
            apply_override(&mut tree, ov)?;
        }
        tree.try_into::<RunConfig>()
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::spectral::write_atomic(path, self.to_toml().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.training.validate()?;
        self.losses.validate()
    }
}

/// Insert `section.key=value` into a TOML tree, creating tables as needed.
/// The value text is itself parsed as TOML (so `0.5`, `true`, `[1,2]`, and
/// quoted strings all work); bare words fall back to strings.
fn apply_override(tree: &mut toml::Value, spec: &str) -> Result<()> {
    let (key, raw_value) = spec.split_once('=').ok_or_else(|| {
        Error::InvalidArgument(format!("override `{spec}` is not of the form key=value"))
    })?;
    let parsed: toml::Value = match format!("v = {raw_value}").parse::<toml::Value>() {
        Ok(toml::Value::Table(t)) => t.get("v").cloned().unwrap(),
        _ => toml::Value::String(raw_value.trim().to_string()),
    };
    let mut node = tree;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::InvalidArgument(format!("bad override key `{key}`")));
    }
    for part in &parts[..parts.len() - 1] {
        let table = node.as_table_mut().ok_or_else(|| {
            Error::InvalidArgument(format!("override key `{key}` crosses a non-table value"))
        })?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node.as_table_mut().ok_or_else(|| {
        Error::InvalidArgument(format!("override key `{key}` crosses a non-table value"))
    })?;
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}
