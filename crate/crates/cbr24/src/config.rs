//! TOML run configuration. Every field has a default, so an absent file or
//! an empty table is a valid configuration.

use crate::evaluation::{
    ExperimentSettings, GenerationSettings, Mode, DEFAULT_HOLDOUT, DEFAULT_MASTER_SEED,
    DEFAULT_RUNS,
};
use crate::network::TrainConfig;
use crate::provider::{
    NullProvider, OracleProvider, Provider, RemoteConfig, RemoteProvider, TipFollowerProvider,
};
use crate::query::QueryKind;
use crate::retrieval::ComponentWeights;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("provider kind 'remote' requires a nonempty endpoint url")]
    RemoteEndpointMissing,
    #[error("building remote provider: {0}")]
    RemoteClient(String),
    #[error("retrieval weights are invalid: {0}")]
    BadWeights(crate::retrieval::SimilarityError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Repository root holding repo.jsonl and images/.
    pub repository: PathBuf,
    /// Where reports, transcripts, and checkpoints land.
    pub output: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            repository: PathBuf::from("repo"),
            output: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub runs: u32,
    pub holdout: usize,
    pub ks: Vec<usize>,
    pub master_seed: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            runs: DEFAULT_RUNS,
            holdout: DEFAULT_HOLDOUT,
            ks: (1..=5).collect(),
            master_seed: DEFAULT_MASTER_SEED,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: u32,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainingSection {
            learning_rate: d.learning_rate,
            momentum: d.momentum,
            epochs: d.epochs,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub mode: Mode,
    /// Per problem-component weights. Math-24 cases carry one component,
    /// so the default singleton weight reduces to plain cosine.
    pub weights: Vec<f64>,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        RetrievalSection {
            mode: Mode::Latent,
            weights: vec![1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    Null,
    Oracle,
    TipFollower,
    Remote,
}

impl std::str::FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "null" => Ok(ProviderKind::Null),
            "oracle" => Ok(ProviderKind::Oracle),
            "tip-follower" => Ok(ProviderKind::TipFollower),
            "remote" => Ok(ProviderKind::Remote),
            other => Err(format!(
                "unknown provider '{other}' (expected null|oracle|tip-follower|remote)"
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    pub kind: ProviderKind,
    pub endpoint: String,
    pub model: String,
    /// Environment variable that holds the API key. The key itself never
    /// lives in configuration.
    pub api_key_env: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub retries: u32,
}

impl Default for ProviderSection {
    fn default() -> Self {
        ProviderSection {
            kind: ProviderKind::Null,
            endpoint: String::new(),
            model: String::new(),
            api_key_env: String::new(),
            temperature: 0.0,
            timeout_secs: 60,
            retries: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSection {
    pub kinds: Vec<QueryKind>,
    /// Similarity mode used to pick the TC context case.
    pub tc_mode: Mode,
}

impl Default for GenerationSection {
    fn default() -> Self {
        GenerationSection {
            kinds: QueryKind::ALL.to_vec(),
            tc_mode: Mode::Latent,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsSection,
    pub experiment: ExperimentSection,
    pub training: TrainingSection,
    pub retrieval: RetrievalSection,
    pub provider: ProviderSection,
    pub generation: GenerationSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            source: Box::new(e),
        })
    }

    /// Missing path means defaults throughout.
    pub fn load_or_default(path: Option<&Path>) -> Result<RunConfig, ConfigError> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(RunConfig::default()),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.training.learning_rate,
            momentum: self.training.momentum,
            epochs: self.training.epochs,
            seed: self.experiment.master_seed,
        }
    }

    pub fn experiment_settings(&self) -> ExperimentSettings {
        ExperimentSettings {
            runs: self.experiment.runs,
            holdout: self.experiment.holdout,
            ks: self.experiment.ks.clone(),
            master_seed: self.experiment.master_seed,
            train: self.train_config(),
        }
    }

    pub fn generation_settings(&self) -> GenerationSettings {
        GenerationSettings {
            runs: self.experiment.runs,
            holdout: self.experiment.holdout,
            master_seed: self.experiment.master_seed,
            train: self.train_config(),
            kinds: self.generation.kinds.clone(),
            tc_mode: self.generation.tc_mode,
        }
    }

    pub fn component_weights(&self) -> Result<ComponentWeights, ConfigError> {
        let weights = ComponentWeights(self.retrieval.weights.clone());
        weights.validate().map_err(ConfigError::BadWeights)?;
        Ok(weights)
    }

    pub fn make_provider(&self) -> Result<Box<dyn Provider>, ConfigError> {
        match self.provider.kind {
            ProviderKind::Null => Ok(Box::new(NullProvider)),
            ProviderKind::Oracle => Ok(Box::new(OracleProvider)),
            ProviderKind::TipFollower => Ok(Box::new(TipFollowerProvider)),
            ProviderKind::Remote => {
                if self.provider.endpoint.is_empty() {
                    return Err(ConfigError::RemoteEndpointMissing);
                }
                let remote = RemoteProvider::new(RemoteConfig {
                    endpoint: self.provider.endpoint.clone(),
                    model: self.provider.model.clone(),
                    api_key_env: self.provider.api_key_env.clone(),
                    temperature: self.provider.temperature,
                    timeout_secs: self.provider.timeout_secs,
                    retries: self.provider.retries,
                })
                .map_err(|e| ConfigError::RemoteClient(e.to_string()))?;
                Ok(Box::new(remote))
            }
        }
    }
}
