//! Optional TOML config file shared by the `experiment` and `serve` commands.
//!
//! ```toml
//! [experiment]
//! policies = ["thompson", "ucb1", "epsilon_greedy:0.2", "uniform_random", "always_liked", "always_disliked"]
//! accuracies = [0.6, 0.7, 0.8, 0.9, 1.0]
//! steps = 10
//! repetitions = 100
//! seed = 0
//!
//! [session]
//! max_turns = 10
//! policy = "thompson"
//! ablation = false
//! seed = 0
//!
//! [generator]
//! backend = "http"          # or "mock"
//! endpoint = "http://localhost:8080/completion"
//! model = "llama-2-13b-chat"
//! timeout_ms = 30000
//! auth_token_env = "GENERATOR_TOKEN"
//!
//! [server]
//! port = 8787
//! data_dir = "data"
//! ```
//!
//! Every key is optional. Command-line flags override file values.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::comms::GeneratorBackend;
use crate::oracle::{OracleConfig, OraclePolicy};
use crate::session::SessionConfig;

pub const DEFAULT_PORT: u16 = 8787;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid value: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub policies: Option<Vec<String>>,
    pub accuracies: Option<Vec<f64>>,
    pub steps: Option<usize>,
    pub repetitions: Option<usize>,
    pub seed: Option<u64>,
    pub liked_arm: Option<usize>,
    pub k_arms: Option<usize>,
    pub out: Option<PathBuf>,
}

impl ExperimentSection {
    /// Oracle config with file values applied over the defaults.
    pub fn to_oracle_config(&self) -> Result<OracleConfig, ConfigError> {
        let mut cfg = OracleConfig::default();
        if let Some(p) = &self.policies {
            cfg.policies = p
                .iter()
                .map(|s| s.parse::<OraclePolicy>())
                .collect::<Result<_, _>>()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if let Some(a) = &self.accuracies {
            cfg.accuracies = a.clone();
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.repetitions {
            cfg.repetitions = v;
        }
        if let Some(v) = self.seed {
            cfg.master_seed = v;
        }
        if let Some(v) = self.liked_arm {
            cfg.liked_arm = v;
        }
        if let Some(v) = self.k_arms {
            cfg.k_arms = v;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub port: u16,
    pub data_dir: Option<PathBuf>,
    pub debug: bool,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            port: DEFAULT_PORT,
            data_dir: None,
            debug: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub experiment: ExperimentSection,
    pub session: SessionConfig,
    pub generator: GeneratorBackend,
    pub server: ServerSection,
}

impl FileConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }
}
