//! Operator configuration, read from a TOML file.
//!
//! ```toml
//! [backend]
//! kind = "http"
//! url = "https://api.example.com/v1/chat/completions"
//! model_name = "some-model"
//! credential_env_var = "QA_API_KEY"
//! max_retries = 3
//!
//! [generation]
//! temperature = 0.0
//! max_output_tokens = 4096
//!
//! [pipeline]
//! max_stage_retries = 2
//! parallelism = 4
//! strict = false
//! ```
//!
//! The credential itself is only ever read from the environment.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::document::DEFAULT_MAX_BYTES;
use crate::gateway::{Backend, GenerationParams, RetryPolicy, ScriptedBackend};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Http,
    /// Canned replies from a script file; for offline runs and tests.
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub url: Option<String>,
    pub model_name: Option<String>,
    /// Name of the environment variable holding the credential.
    pub credential_env_var: Option<String>,
    pub script: Option<PathBuf>,
    pub max_retries: u32,
    pub timeout_secs: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Http,
            url: None,
            model_name: None,
            credential_env_var: None,
            script: None,
            max_retries: 3,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            temperature: 0.0,
            max_output_tokens: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub max_stage_retries: u32,
    pub parallelism: usize,
    pub strict: bool,
    pub max_document_bytes: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            max_stage_retries: 2,
            parallelism: 4,
            strict: false,
            max_document_bytes: DEFAULT_MAX_BYTES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub prompt_override_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub backend: BackendConfig,
    pub generation: GenerationConfig,
    pub pipeline: PipelineConfig,
    pub paths: PathsConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Loads a config file. Relative `script` and `prompt_override_dir`
    /// paths are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Config::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.backend.script);
        resolve(&mut config.paths.prompt_override_dir);
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = self.generation.temperature;
        if t.is_nan() || t < 0.0 {
            return Err(ConfigError::Invalid(
                "generation.temperature must be >= 0".into(),
            ));
        }
        if self.pipeline.parallelism < 1 {
            return Err(ConfigError::Invalid(
                "pipeline.parallelism must be >= 1".into(),
            ));
        }
        match self.backend.kind {
            BackendKind::Http => {
                if self.backend.url.is_none() {
                    return Err(ConfigError::Invalid(
                        "backend.url is required for the http backend".into(),
                    ));
                }
                if self.backend.model_name.is_none() {
                    return Err(ConfigError::Invalid(
                        "backend.model_name is required for the http backend".into(),
                    ));
                }
            }
            BackendKind::Scripted => {
                if self.backend.script.is_none() {
                    return Err(ConfigError::Invalid(
                        "backend.script is required for the scripted backend".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn generation_params(&self) -> GenerationParams {
        GenerationParams {
            temperature: self.generation.temperature,
            max_output_tokens: self.generation.max_output_tokens,
            model_name: self.backend.model_name.clone().unwrap_or_default(),
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.backend.max_retries,
            ..RetryPolicy::default()
        }
    }

    /// Instantiates the configured live backend.
    pub fn build_backend(&self) -> Result<Arc<dyn Backend>, ConfigError> {
        match self.backend.kind {
            BackendKind::Scripted => {
                let path = self
                    .backend
                    .script
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("backend.script is required".into()))?;
                let backend =
                    ScriptedBackend::from_file(path).map_err(|source| ConfigError::Io {
                        path: path.clone(),
                        source,
                    })?;
                Ok(Arc::new(backend))
            }
            #[cfg(feature = "http")]
            BackendKind::Http => {
                let url = self
                    .backend
                    .url
                    .clone()
                    .ok_or_else(|| ConfigError::Invalid("backend.url is required".into()))?;
                Ok(Arc::new(crate::gateway::HttpBackend::new(
                    url,
                    self.backend.credential_env_var.clone(),
                    std::time::Duration::from_secs(self.backend.timeout_secs),
                )))
            }
            #[cfg(not(feature = "http"))]
            BackendKind::Http => Err(ConfigError::Invalid(
                "built without the `http` feature".into(),
            )),
        }
    }
}
