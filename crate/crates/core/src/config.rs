//! Layered configuration: flags > environment > config file > defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::pipeline::DEFAULT_REFLECTION_CAP;

pub const ENV_API_BASE: &str = "R2C_API_BASE";
pub const ENV_API_KEY: &str = "R2C_API_KEY";
pub const ENV_MODEL: &str = "R2C_MODEL";
pub const ENV_CONFIG: &str = "R2C_CONFIG";

pub const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";
pub const DEFAULT_MODEL: &str = "gpt-4o-mini";
pub const DEFAULT_TIMEOUT_SECS: u64 = 60;

/// A credential. Never printed.
#[derive(Clone, PartialEq, Eq, Deserialize)]
#[serde(transparent)]
pub struct Secret(String);

impl Secret {
    pub fn new(s: impl Into<String>) -> Self {
        Secret(s.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(<redacted>)")
    }
}

/// One configuration source. Every field is optional; absent fields fall
/// through to the next layer.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub api_base: Option<String>,
    pub api_key: Option<Secret>,
    pub model: Option<String>,
    pub kb_root: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub runner: Option<String>,
    pub runs: Option<usize>,
    pub ks: Option<Vec<usize>>,
    pub workers: Option<usize>,
    pub timeout_secs: Option<u64>,
    pub reflection_cap: Option<u32>,
}

impl ConfigLayer {
    /// Fields set in `self` win over those in `lower`.
    pub fn over(self, lower: ConfigLayer) -> ConfigLayer {
        ConfigLayer {
            api_base: self.api_base.or(lower.api_base),
            api_key: self.api_key.or(lower.api_key),
            model: self.model.or(lower.model),
            kb_root: self.kb_root.or(lower.kb_root),
            out: self.out.or(lower.out),
            runner: self.runner.or(lower.runner),
            runs: self.runs.or(lower.runs),
            ks: self.ks.or(lower.ks),
            workers: self.workers.or(lower.workers),
            timeout_secs: self.timeout_secs.or(lower.timeout_secs),
            reflection_cap: self.reflection_cap.or(lower.reflection_cap),
        }
    }

    /// Reads the three backend variables through `get` (usually `std::env::var`).
    pub fn from_env(get: impl Fn(&str) -> Option<String>) -> ConfigLayer {
        let nonempty = |k: &str| get(k).filter(|v| !v.is_empty());
        ConfigLayer {
            api_base: nonempty(ENV_API_BASE),
            api_key: nonempty(ENV_API_KEY).map(Secret),
            model: nonempty(ENV_MODEL),
            ..ConfigLayer::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<ConfigLayer, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<ConfigLayer, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::File { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml(&text).map_err(|e| ConfigError::File { path: path.display().to_string(), message: e.to_string() })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config file {path}: {message}")]
    File { path: String, message: String },
    #[error("kb root not found: {0}")]
    KbRootNotFound(String),
    #[error("invalid setting {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub api_base: String,
    pub api_key: Option<Secret>,
    pub model: String,
    pub kb_root: PathBuf,
    pub out: PathBuf,
    /// Runner program and leading arguments, split on whitespace.
    pub runner: Option<String>,
    pub runs: usize,
    pub ks: Vec<usize>,
    pub workers: usize,
    pub timeout: Duration,
    pub reflection_cap: u32,
}

impl Config {
    pub fn defaults() -> ConfigLayer {
        ConfigLayer {
            api_base: Some(DEFAULT_API_BASE.into()),
            api_key: None,
            model: Some(DEFAULT_MODEL.into()),
            kb_root: Some(PathBuf::from("kb")),
            out: Some(PathBuf::from("runs")),
            runner: None,
            runs: Some(crate::eval::DEFAULT_RUNS),
            ks: Some(vec![1]),
            workers: Some(1),
            timeout_secs: Some(DEFAULT_TIMEOUT_SECS),
            reflection_cap: Some(DEFAULT_REFLECTION_CAP),
        }
    }

    /// Merges the layers highest-first and validates the result.
    pub fn resolve(flags: ConfigLayer, env: ConfigLayer, file: Option<ConfigLayer>) -> Result<Config, ConfigError> {
        let merged = flags.over(env).over(file.unwrap_or_default()).over(Self::defaults());
        let invalid = |field, reason: &str| ConfigError::Invalid { field, reason: reason.into() };
        let runs = merged.runs.expect("default");
        let workers = merged.workers.expect("default");
        let ks = merged.ks.expect("default");
        let timeout_secs = merged.timeout_secs.expect("default");
        if runs == 0 {
            return Err(invalid("runs", "must be at least 1"));
        }
        if workers == 0 {
            return Err(invalid("workers", "must be at least 1"));
        }
        if timeout_secs == 0 {
            return Err(invalid("timeout", "must be at least 1 second"));
        }
        if ks.is_empty() || ks.iter().any(|&k| k == 0 || k > runs) {
            return Err(invalid("k", &format!("each k must lie in 1..={runs}")));
        }
        Ok(Config {
            api_base: merged.api_base.expect("default"),
            api_key: merged.api_key,
            model: merged.model.expect("default"),
            kb_root: merged.kb_root.expect("default"),
            out: merged.out.expect("default"),
            runner: merged.runner,
            runs,
            ks,
            workers,
            timeout: Duration::from_secs(timeout_secs),
            reflection_cap: merged.reflection_cap.expect("default"),
        })
    }

    pub fn check_kb_root(&self) -> Result<(), ConfigError> {
        if self.kb_root.is_dir() {
            Ok(())
        } else {
            Err(ConfigError::KbRootNotFound(self.kb_root.display().to_string()))
        }
    }
}
