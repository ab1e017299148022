use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use tsrule::data::DatasetSpec;
use tsrule::llm::{AuthStyle, GenerationSettings, RetryPolicy};
use tsrule::preprocess::PreprocessConfig;
use tsrule::rule::sandbox::SandboxConfig;
use tsrule::train::TrainingConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{field}: path does not exist: {path}")]
    MissingPath { field: &'static str, path: PathBuf },

    #[error("{field} is required")]
    Required { field: &'static str },

    #[error("api_key: environment variable {0} is not set")]
    UnsetVariable(String),

    #[error("api_key: malformed `${{...}}` reference in {0:?}")]
    BadInterpolation(String),

    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendChoice {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default)]
    pub backend: BackendChoice,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// May reference environment variables as `${NAME}`.
    pub api_key: Option<String>,
    #[serde(default = "default_auth")]
    pub auth: AuthStyle,
    pub mock_script: Option<PathBuf>,
    #[serde(default = "default_request_timeout")]
    pub request_timeout_secs: u64,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default)]
    pub generation: Option<GenerationSettings>,
}

fn default_auth() -> AuthStyle {
    AuthStyle::Bearer
}

fn default_request_timeout() -> u64 {
    120
}

fn default_max_attempts() -> u32 {
    RetryPolicy::default().max_attempts
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            backend: BackendChoice::Mock,
            endpoint: None,
            model: None,
            api_key: None,
            auth: default_auth(),
            mock_script: None,
            request_timeout_secs: default_request_timeout(),
            max_attempts: default_max_attempts(),
            generation: None,
        }
    }
}

impl GatewayConfig {
    pub fn request_timeout(&self) -> Duration {
        Duration::from_secs(self.request_timeout_secs)
    }

    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_attempts,
            ..RetryPolicy::default()
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SandboxSection {
    pub command: Vec<String>,
    pub timeout_ms: Option<u64>,
}

impl SandboxSection {
    pub fn sandbox(&self) -> SandboxConfig {
        SandboxConfig::new(self.command.iter().cloned())
    }
}

/// Everything a command needs, loaded from one TOML file. Relative paths are
/// taken relative to the file's directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<DatasetSpec>,
    /// Directory of `<metric_id>.csv` base detector label files.
    pub base_labels: Option<PathBuf>,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub gateway: GatewayConfig,
    pub sandbox: Option<SandboxSection>,
    /// Directory of prompt template overrides.
    pub prompts: Option<PathBuf>,
    #[serde(default = "default_registry")]
    pub registry: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub seed: Option<u64>,
}

fn default_registry() -> PathBuf {
    PathBuf::from("registry")
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            base_labels: None,
            preprocess: PreprocessConfig::default(),
            training: TrainingConfig::default(),
            gateway: GatewayConfig::default(),
            sandbox: None,
            prompts: None,
            registry: default_registry(),
            output_dir: default_output_dir(),
            seed: None,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub registry: Option<PathBuf>,
    pub mock_script: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<RunConfig, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = RunConfig::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.rebase(base);
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(dataset) = &mut self.dataset {
            join(&mut dataset.source);
        }
        for p in [&mut self.base_labels, &mut self.prompts, &mut self.gateway.mock_script]
            .into_iter()
            .flatten()
        {
            join(p);
        }
        join(&mut self.registry);
        join(&mut self.output_dir);
    }

    /// Applies command-line overrides, interpolates the credential and checks
    /// that every input path exists.
    pub fn finalize(mut self, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
        if let Some(seed) = overrides.seed.or(self.seed) {
            self.seed = Some(seed);
            self.training.seed = seed;
        }
        if let Some(registry) = &overrides.registry {
            self.registry = registry.clone();
        }
        if let Some(out) = &overrides.out {
            self.output_dir = out.clone();
        }
        if let Some(script) = &overrides.mock_script {
            self.gateway.mock_script = Some(script.clone());
            self.gateway.backend = BackendChoice::Mock;
        }
        if let Some(key) = &self.gateway.api_key {
            self.gateway.api_key = Some(interpolate(key)?);
        }

        let inputs = [
            ("dataset.source", self.dataset.as_ref().map(|d| &d.source)),
            ("base_labels", self.base_labels.as_ref()),
            ("prompts", self.prompts.as_ref()),
            ("gateway.mock_script", self.gateway.mock_script.as_ref()),
        ];
        for (field, path) in inputs {
            if let Some(path) = path {
                if !path.exists() {
                    return Err(ConfigError::MissingPath {
                        field,
                        path: path.clone(),
                    });
                }
            }
        }
        for (field, path) in [("registry", &self.registry), ("output_dir", &self.output_dir)] {
            if path.is_file() {
                return Err(ConfigError::Invalid(format!(
                    "{field}: {} is a file, expected a directory",
                    path.display()
                )));
            }
        }

        self.preprocess
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("preprocess: {e}")))?;
        self.training
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("training: {e}")))?;
        if let Some(dataset) = &self.dataset {
            dataset
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("dataset: {e}")))?;
        }
        if let Some(sandbox) = &self.sandbox {
            if sandbox.command.is_empty() {
                return Err(ConfigError::Invalid("sandbox.command is empty".into()));
            }
        }
        Ok(self)
    }

    pub fn require_dataset(&self) -> Result<&DatasetSpec, ConfigError> {
        self.dataset
            .as_ref()
            .ok_or(ConfigError::Required { field: "dataset" })
    }
}

/// Expands `${NAME}` references from the environment.
pub fn interpolate(text: &str) -> Result<String, ConfigError> {
    interpolate_with(text, |name| std::env::var(name).ok())
}

pub fn interpolate_with(
    text: &str,
    lookup: impl Fn(&str) -> Option<String>,
) -> Result<String, ConfigError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find('}')
            .ok_or_else(|| ConfigError::BadInterpolation(text.to_string()))?;
        let name = &after[..end];
        let valid = !name.is_empty()
            && name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !valid {
            return Err(ConfigError::BadInterpolation(text.to_string()));
        }
        let value = lookup(name).ok_or_else(|| ConfigError::UnsetVariable(name.to_string()))?;
        out.push_str(&value);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}
