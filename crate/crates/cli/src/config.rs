//! Run configuration: defaults, TOML file, environment, then flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use claimdecomp::corpus::FieldMap;
use claimdecomp::decompose::Method;
use claimdecomp::retrieval::{DEFAULT_B, DEFAULT_CHUNK_WORDS, DEFAULT_K1, DEFAULT_TOP_K};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const ENV_LLM_URL: &str = "CLAIMDECOMP_LLM_URL";
pub const ENV_LLM_API_KEY: &str = "CLAIMDECOMP_LLM_API_KEY";
pub const ENV_NLI_URL: &str = "CLAIMDECOMP_NLI_URL";
pub const ENV_MODEL: &str = "CLAIMDECOMP_MODEL";
pub const ENV_VALIDATOR_MODEL: &str = "CLAIMDECOMP_VALIDATOR_MODEL";
pub const ENV_CACHE_DIR: &str = "CLAIMDECOMP_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: Option<String>,
    pub api_key: Option<String>,
    pub model: String,
    pub validator_model: String,
    pub max_inflight: usize,
    pub max_retries: u32,
    pub timeout_secs: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            url: None,
            api_key: None,
            model: "gpt-3.5-turbo-instruct".into(),
            validator_model: "inst-llama".into(),
            max_inflight: 8,
            max_retries: 4,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub chunk_words: usize,
    pub top_k: usize,
    pub k1: f64,
    pub b: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            chunk_words: DEFAULT_CHUNK_WORDS,
            top_k: DEFAULT_TOP_K,
            k1: DEFAULT_K1,
            b: DEFAULT_B,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ValidatorKind {
    #[default]
    Llm,
    Nli,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidatorConfig {
    pub kind: ValidatorKind,
    pub nli_url: Option<String>,
    /// JSON file of scripted NLI verdicts, for offline runs.
    pub mock_nli: Option<PathBuf>,
    /// Must contain `{context}` and `{claim}`.
    pub template: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub generations: Option<PathBuf>,
    pub parses: Option<PathBuf>,
    pub methods: Vec<String>,
    /// Example bank per method name; `rnd` defaults to the bundled bank.
    pub banks: BTreeMap<String, PathBuf>,
    pub knowledge: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    /// Serve every completion from the cache; misses are errors.
    pub cache_only: bool,
    /// JSON file of scripted completions used instead of the endpoint.
    pub mock: Option<PathBuf>,
    pub endpoint: EndpointConfig,
    pub retrieval: RetrievalConfig,
    pub validator: ValidatorConfig,
    pub fields: FieldMap,
    pub length_penalty_gamma: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            generations: None,
            parses: None,
            methods: Vec::new(),
            banks: BTreeMap::new(),
            knowledge: None,
            index: None,
            out_dir: PathBuf::from("out"),
            cache_dir: None,
            cache_only: false,
            mock: None,
            endpoint: EndpointConfig::default(),
            retrieval: RetrievalConfig::default(),
            validator: ValidatorConfig::default(),
            fields: FieldMap::default(),
            length_penalty_gamma: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Apply environment overrides read through `var`.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) {
        if let Some(v) = var(ENV_LLM_URL) {
            self.endpoint.url = Some(v);
        }
        if let Some(v) = var(ENV_LLM_API_KEY) {
            self.endpoint.api_key = Some(v);
        }
        if let Some(v) = var(ENV_NLI_URL) {
            self.validator.nli_url = Some(v);
        }
        if let Some(v) = var(ENV_MODEL) {
            self.endpoint.model = v;
        }
        if let Some(v) = var(ENV_VALIDATOR_MODEL) {
            self.endpoint.validator_model = v;
        }
        if let Some(v) = var(ENV_CACHE_DIR) {
            self.cache_dir = Some(PathBuf::from(v));
        }
    }

    pub fn parsed_methods(&self) -> Result<Vec<Method>> {
        if self.methods.is_empty() {
            return Err(CliError::Config("no method selected".into()));
        }
        let mut out = Vec::new();
        for name in &self.methods {
            let m: Method = name.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        Ok(out)
    }

    /// Existing input file, or a config error naming the setting.
    pub fn require<'a>(&self, path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
        let path = path
            .as_deref()
            .ok_or_else(|| CliError::Config(format!("missing setting: {what}")))?;
        if !path.exists() {
            return Err(CliError::Config(format!("{what} not found: {}", path.display())));
        }
        Ok(path)
    }

    pub fn check(&self) -> Result<()> {
        if self.endpoint.max_inflight == 0 {
            return Err(CliError::Config("max_inflight must be at least 1".into()));
        }
        if self.cache_only && self.cache_dir.is_none() {
            return Err(CliError::Config("cache-only mode needs a cache directory".into()));
        }
        for (name, path) in &self.banks {
            name.parse::<Method>()?;
            if !path.exists() {
                return Err(CliError::Config(format!("bank for {name} not found: {}", path.display())));
            }
        }
        Ok(())
    }
}
