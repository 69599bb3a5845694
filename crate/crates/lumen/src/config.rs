//! Service configuration: a TOML file with `LUMEN_*` environment overrides.
//!
//! ```toml
//! store = "lumen-store"
//! overlay_alpha = 0.5
//! log = "info"
//!
//! [server]
//! bind = "127.0.0.1:8080"
//! workers = 4
//!
//! [lvm]
//! provider = "openai"
//! endpoint = "https://api.openai.com/v1/chat/completions"
//! credential_ref = "OPENAI_API_KEY"
//!
//! [perturbation]
//! n_masks = 4000
//! grid = [7, 7]
//! keep_prob = 0.5
//! seed = 0
//! batch_size = 32
//! ```

use std::path::{Path, PathBuf};

use lumen_core::saliency::perturbation::PerturbationParams;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lvm::LvmConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        source: toml::de::Error,
    },
    #[error("environment variable {name}: {message}")]
    Env { name: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerConfig {
    pub bind: String,
    /// Concurrent explanation runs.
    pub workers: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub store: PathBuf,
    pub overlay_alpha: f64,
    pub log: String,
    pub server: ServerConfig,
    pub lvm: LvmConfig,
    pub perturbation: PerturbationParams,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            store: PathBuf::from("lumen-store"),
            overlay_alpha: crate::pipeline::DEFAULT_OVERLAY_ALPHA,
            log: "info".into(),
            server: ServerConfig::default(),
            lvm: LvmConfig::mock(),
            perturbation: PerturbationParams::default(),
        }
    }
}

fn parse_env<T: std::str::FromStr>(name: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Env {
        name: name.into(),
        message: e.to_string(),
    })
}

impl Config {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.into(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// Applies `LUMEN_*` overrides from `vars`.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
        for (name, value) in vars {
            match name.as_str() {
                "LUMEN_STORE" => self.store = value.into(),
                "LUMEN_BIND" => self.server.bind = value,
                "LUMEN_WORKERS" => self.server.workers = parse_env(&name, &value)?,
                "LUMEN_LOG" => self.log = value,
                "LUMEN_OVERLAY_ALPHA" => self.overlay_alpha = parse_env(&name, &value)?,
                "LUMEN_LVM_PROVIDER" => self.lvm.provider = value,
                "LUMEN_LVM_ENDPOINT" => self.lvm.endpoint = value,
                "LUMEN_LVM_CREDENTIAL_REF" => self.lvm.credential_ref = Some(value),
                "LUMEN_LVM_MODEL" => self.lvm.model = Some(value),
                "LUMEN_LVM_TIMEOUT" => self.lvm.timeout = parse_env(&name, &value)?,
                "LUMEN_LVM_MAX_RETRIES" => self.lvm.max_retries = parse_env(&name, &value)?,
                "LUMEN_LVM_MAX_OUTPUT_TOKENS" => self.lvm.max_output_tokens = parse_env(&name, &value)?,
                "LUMEN_MASKS" => self.perturbation.n_masks = parse_env(&name, &value)?,
                "LUMEN_SEED" => self.perturbation.seed = parse_env(&name, &value)?,
                _ => {}
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.overlay_alpha) {
            return Err(ConfigError::Invalid(format!("overlay_alpha {} not in [0,1]", self.overlay_alpha)));
        }
        if self.server.workers == 0 {
            return Err(ConfigError::Invalid("server.workers must be >= 1".into()));
        }
        self.lvm.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// File (when given) plus the process environment.
    pub fn resolve(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut c = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        c.apply_env(std::env::vars())?;
        Ok(c)
    }
}
