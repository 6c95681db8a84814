//! TOML configuration shared by the CLI and the service.
//!
//! ```toml
//! [llm]
//! backend = "scripted"        # or "remote"
//! script = "assets/scripts/kitchen.script"
//! base_url = "https://api.openai.com/v1"
//! model = "gpt-3.5-turbo"
//! api_key_env = "OPENAI_API_KEY"
//! watchword = "Assistant,"
//!
//! [experts]
//! enabled = ["captioning", "detection", "ocr"]
//! fixtures = "assets/fixtures"
//! search_corpus = "assets/search_corpus.toml"
//!
//! [experts.remote.ocr]
//! endpoint = "http://localhost:9000/ocr"
//! token = "secret"
//!
//! [limits]
//! max_steps = 10
//! token_budget = 4096
//! reserved_for_completion = 512
//!
//! [storage]
//! data_dir = "data"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actionparse::DEFAULT_WATCHWORD;
use crate::experts::{BuiltinOptions, ExpertError, ExpertRegistry, RemoteEndpoint, SearchCorpus};
use crate::llm::{LlmBackend, LlmError, RemoteChatBackend, RemoteChatConfig, ScriptError, ScriptedBackend};
use crate::orchestrate::Engine;
use crate::prompting::{split_dialogues, PrefixOptions, PromptError, DEFAULT_EXAMPLES_PER_EXPERT};
use crate::serialize::DEFAULT_TAG_THRESHOLD;
use crate::session::{SessionConfig, SessionError, DEFAULT_MAX_STEPS, DEFAULT_RESERVED_FOR_COMPLETION, DEFAULT_TOKEN_BUDGET};

pub const CONFIG_ENV: &str = "MMREACT_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Expert(#[from] ExpertError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Session(#[from] SessionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Scripted,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub backend: BackendKind,
    pub script: Option<PathBuf>,
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    /// Environment variable holding the API key; used when `api_key` is unset.
    pub api_key_env: Option<String>,
    pub temperature: f32,
    pub max_retries: u32,
    pub timeout_secs: u64,
    pub watchword: String,
    pub prefix_template: Option<PathBuf>,
    pub examples_file: Option<PathBuf>,
}

impl Default for LlmSection {
    fn default() -> Self {
        Self {
            backend: BackendKind::Scripted,
            script: None,
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-3.5-turbo".into(),
            api_key: None,
            api_key_env: Some("OPENAI_API_KEY".into()),
            temperature: 0.0,
            max_retries: 2,
            timeout_secs: 60,
            watchword: DEFAULT_WATCHWORD.into(),
            prefix_template: None,
            examples_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteExpertSection {
    pub endpoint: String,
    pub token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertsSection {
    pub enabled: Option<Vec<String>>,
    pub fixtures: PathBuf,
    pub search_corpus: Option<PathBuf>,
    pub tag_threshold: f64,
    pub examples_per_expert: usize,
    pub remote_timeout_secs: u64,
    pub remote: BTreeMap<String, RemoteExpertSection>,
}

impl Default for ExpertsSection {
    fn default() -> Self {
        Self {
            enabled: None,
            fixtures: PathBuf::from("assets/fixtures"),
            search_corpus: None,
            tag_threshold: DEFAULT_TAG_THRESHOLD,
            examples_per_expert: DEFAULT_EXAMPLES_PER_EXPERT,
            remote_timeout_secs: 30,
            remote: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitsSection {
    pub max_steps: u32,
    pub token_budget: u32,
    pub reserved_for_completion: u32,
}

impl Default for LimitsSection {
    fn default() -> Self {
        Self {
            max_steps: DEFAULT_MAX_STEPS,
            token_budget: DEFAULT_TOKEN_BUDGET,
            reserved_for_completion: DEFAULT_RESERVED_FOR_COMPLETION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StorageSection {
    pub data_dir: PathBuf,
}

impl Default for StorageSection {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub llm: LlmSection,
    pub experts: ExpertsSection,
    pub limits: LimitsSection,
    pub storage: StorageSection,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl Config {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut config: Config = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    /// Load the explicitly given file, else the file named by `MMREACT_CONFIG`,
    /// else defaults.
    pub fn discover(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.llm.script, &mut self.llm.prefix_template, &mut self.llm.examples_file, &mut self.experts.search_corpus]
            .into_iter()
            .flatten()
        {
            resolve(base, p);
        }
        resolve(base, &mut self.experts.fixtures);
        resolve(base, &mut self.storage.data_dir);
    }

    pub fn session_config(&self) -> SessionConfig {
        SessionConfig {
            max_steps: self.limits.max_steps,
            token_budget: self.limits.token_budget,
            reserved_for_completion: self.limits.reserved_for_completion,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.session_config().validate()?;
        if self.llm.backend == BackendKind::Scripted && self.llm.script.is_none() {
            return Err(ConfigError::Invalid("the scripted backend needs [llm] script".into()));
        }
        if !(0.0..=1.0).contains(&self.experts.tag_threshold) {
            return Err(ConfigError::Invalid("[experts] tag_threshold must be within [0, 1]".into()));
        }
        if self.llm.watchword.trim().is_empty() {
            return Err(ConfigError::Invalid("[llm] watchword must not be empty".into()));
        }
        Ok(())
    }

    pub fn prefix_options(&self) -> Result<PrefixOptions, ConfigError> {
        let mut options = PrefixOptions {
            watchword: self.llm.watchword.clone(),
            examples_per_expert: self.experts.examples_per_expert,
            ..PrefixOptions::default()
        };
        if let Some(p) = &self.llm.prefix_template {
            options.template = read(p)?;
        }
        if let Some(p) = &self.llm.examples_file {
            options.example_dialogues = split_dialogues(&read(p)?);
        }
        Ok(options)
    }

    pub fn registry(&self) -> Result<ExpertRegistry, ConfigError> {
        let mut options = BuiltinOptions::new(&self.experts.fixtures);
        if let Some(p) = &self.experts.search_corpus {
            options.search_corpus = SearchCorpus::load(p).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        options.enabled = self.experts.enabled.clone();
        options.remote_timeout = Duration::from_secs(self.experts.remote_timeout_secs);
        options.remote = self
            .experts
            .remote
            .iter()
            .map(|(name, r)| {
                (
                    name.clone(),
                    RemoteEndpoint {
                        endpoint: r.endpoint.clone(),
                        token: r.token.clone(),
                    },
                )
            })
            .collect();
        Ok(ExpertRegistry::builtin(&options)?)
    }

    pub fn backend(&self) -> Result<Arc<dyn LlmBackend>, ConfigError> {
        match self.llm.backend {
            BackendKind::Scripted => {
                let script = self
                    .llm
                    .script
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("the scripted backend needs [llm] script".into()))?;
                Ok(Arc::new(ScriptedBackend::from_file(script)?))
            }
            BackendKind::Remote => {
                let mut remote = RemoteChatConfig::new(&self.llm.base_url, &self.llm.model);
                remote.api_key = self
                    .llm
                    .api_key
                    .clone()
                    .or_else(|| self.llm.api_key_env.as_ref().and_then(|v| std::env::var(v).ok()));
                remote.temperature = self.llm.temperature;
                remote.max_retries = self.llm.max_retries;
                remote.timeout = Duration::from_secs(self.llm.timeout_secs);
                remote.stop = vec![format!("\n{}", crate::serialize::OBSERVATION_HEADER_PREFIX)];
                Ok(Arc::new(RemoteChatBackend::new(remote)?))
            }
        }
    }

    /// Engine with the configured registry and backend.
    pub fn engine(&self) -> Result<Engine, ConfigError> {
        self.validate()?;
        self.engine_with_backend(self.backend()?)
    }

    /// Engine with the configured registry and a caller-supplied backend.
    pub fn engine_with_backend(&self, backend: Arc<dyn LlmBackend>) -> Result<Engine, ConfigError> {
        let registry = Arc::new(self.registry()?);
        let mut engine = Engine::new(registry, backend, &self.prefix_options()?)?;
        engine.tag_threshold = self.experts.tag_threshold;
        Ok(engine)
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}
