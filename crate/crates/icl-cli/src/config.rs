//! JSON run configuration. A config file carries a schema version, the
//! command it configures, and a `params` object whose keys mirror the
//! command's flags; unknown keys anywhere are rejected. Command-line flags
//! override file values field by field.

use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{CliError, Result};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema_version: u32,
    /// Which subcommand this file configures; must match the one invoked.
    pub command: String,
    #[serde(default = "empty_params")]
    pub params: serde_json::Value,
    #[serde(skip)]
    pub path: String,
}

fn empty_params() -> serde_json::Value {
    serde_json::Value::Object(serde_json::Map::new())
}

pub fn load(path: &str) -> Result<ConfigFile> {
    let body = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_string(),
        source,
    })?;
    let mut cfg: ConfigFile = serde_json::from_str(&body).map_err(|e| CliError::Config {
        path: path.to_string(),
        detail: e.to_string(),
    })?;
    if cfg.schema_version != CONFIG_SCHEMA_VERSION {
        return Err(CliError::Config {
            path: path.to_string(),
            detail: format!(
                "unsupported schema_version {} (this build reads {})",
                cfg.schema_version, CONFIG_SCHEMA_VERSION
            ),
        });
    }
    cfg.path = path.to_string();
    Ok(cfg)
}

/// Extracts the file's params as the command-specific type, enforcing that
/// the file targets the invoked command. `T::default()` when no file was
/// given.
pub fn params_for<T: DeserializeOwned + Default>(
    cfg: Option<&ConfigFile>,
    command: &str,
) -> Result<T> {
    let Some(cfg) = cfg else {
        return Ok(T::default());
    };
    if cfg.command != command {
        return Err(CliError::Config {
            path: cfg.path.clone(),
            detail: format!(
                "config targets command `{}` but `{}` was invoked",
                cfg.command, command
            ),
        });
    }
    serde_json::from_value(cfg.params.clone()).map_err(|e| CliError::Config {
        path: cfg.path.clone(),
        detail: e.to_string(),
    })
}
