//! Run configuration: one UTF-8 JSON file wiring the manifest, per-stage
//! backends, trigger parameters, retry policy, and output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, HttpBackend, HttpBackendConfig, MockBackend};
use crate::synthesis::RetryPolicy;
use crate::trigger::TriggerParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Http,
}

/// Settings for one stage's backend. Grounding, reasoning, and synthesis
/// may each target a different backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub model_id: String,
    /// Base URL for `kind = http`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    /// Fixture directory for `kind = mock`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixtures_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_s: Option<f64>,
}

fn default_max_concurrency() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    pub grounding: BackendConfig,
    pub reasoning: BackendConfig,
    pub synthesis: BackendConfig,
    #[serde(default)]
    pub trigger: TriggerParams,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_max_concurrency")]
    pub max_concurrency: usize,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn validate_backend(stage: &str, cfg: &BackendConfig) -> Result<(), ConfigError> {
    match cfg.kind {
        BackendKind::Http if cfg.url.is_none() => Err(ConfigError::Invalid(format!(
            "{stage}: http backend requires a url"
        ))),
        BackendKind::Mock => match &cfg.fixtures_dir {
            None => Err(ConfigError::Invalid(format!(
                "{stage}: mock backend requires fixtures_dir"
            ))),
            Some(dir) if !dir.is_dir() => Err(ConfigError::Invalid(format!(
                "{stage}: fixtures_dir {} does not exist",
                dir.display()
            ))),
            Some(_) => Ok(()),
        },
        _ => Ok(()),
    }
}

/// Loads a run configuration, resolving relative paths against the config
/// file's directory and validating that referenced inputs exist.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.to_path_buf(), source: e })?;
    let mut config: RunConfig = serde_json::from_str(&text)
        .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), reason: e.to_string() })?;

    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    config.manifest = resolve(&base, &config.manifest);
    config.output_dir = resolve(&base, &config.output_dir);
    for backend in [&mut config.grounding, &mut config.reasoning, &mut config.synthesis] {
        if let Some(dir) = backend.fixtures_dir.take() {
            backend.fixtures_dir = Some(resolve(&base, &dir));
        }
    }

    if !config.manifest.is_file() {
        return Err(ConfigError::Invalid(format!(
            "manifest {} does not exist",
            config.manifest.display()
        )));
    }
    if config.max_concurrency == 0 {
        return Err(ConfigError::Invalid("max_concurrency must be >= 1".to_string()));
    }
    if config.retry.max_attempts == 0 {
        return Err(ConfigError::Invalid("retry.max_attempts must be >= 1".to_string()));
    }
    for (stage, backend) in [
        ("grounding", &config.grounding),
        ("reasoning", &config.reasoning),
        ("synthesis", &config.synthesis),
    ] {
        validate_backend(stage, backend)?;
    }
    Ok(config)
}

/// Instantiates the backend a stage config describes.
pub fn build_backend(cfg: &BackendConfig) -> Result<Box<dyn Backend>, ConfigError> {
    match cfg.kind {
        BackendKind::Mock => {
            let dir = cfg.fixtures_dir.as_ref().ok_or_else(|| {
                ConfigError::Invalid("mock backend requires fixtures_dir".to_string())
            })?;
            let backend = MockBackend::from_dir(dir)
                .map_err(|e| ConfigError::Io { path: dir.clone(), source: e })?;
            Ok(Box::new(backend))
        }
        BackendKind::Http => {
            let url = cfg
                .url
                .as_ref()
                .ok_or_else(|| ConfigError::Invalid("http backend requires a url".to_string()))?;
            let mut http = HttpBackendConfig::new(url.clone());
            if let Some(secs) = cfg.timeout_s {
                http.timeout = std::time::Duration::from_secs_f64(secs);
            }
            Ok(Box::new(HttpBackend::new(http)))
        }
    }
}
