//! Versioned TOML run configuration.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::{EnvConfig, EnvError};
use crate::policy::{Actor, MadConfig, MadPolicy, PolicyError, PolicyKind};
use crate::ppo::{BaselineConfig, BaselinePolicy, Critic, CriticConfig, PpoConfig, PpoError};
use crate::tensor::TensorError;

pub const SCHEMA_VERSION: u32 = 1;

pub const PRESETS: &[&str] = &["five_agents", "smoke"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("config schema_version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("unknown preset {0:?}; available: five_agents, smoke")]
    UnknownPreset(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn default_kind() -> PolicyKind {
    PolicyKind::Mad
}

fn default_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub schema_version: u32,
    #[serde(default = "default_kind")]
    pub policy: PolicyKind,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub mad: MadConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub critic: CriticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            policy: PolicyKind::Mad,
            env: EnvConfig::default(),
            ppo: PpoConfig::default(),
            mad: MadConfig::default(),
            baseline: BaselineConfig::default(),
            critic: CriticConfig::default(),
        }
    }
}

impl RunConfig {
    /// `five_agents`: the default training setup. `smoke`: a seconds-long run.
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name {
            "five_agents" => Ok(Self::default()),
            "smoke" => Ok(Self {
                env: EnvConfig { n_agents: 3, episode_len: 20, ..EnvConfig::default() },
                ppo: PpoConfig {
                    horizon: 20,
                    n_envs: 2,
                    iterations: 2,
                    epochs: 1,
                    checkpoint_every: 1,
                    ..PpoConfig::default()
                },
                ..Self::default()
            }),
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Version { found: self.schema_version, expected: SCHEMA_VERSION });
        }
        self.env.validate()?;
        self.ppo.validate()?;
        self.mad.validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config is always serializable");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn build_actor(&self, kind: PolicyKind, rng: &mut impl Rng) -> Result<Box<dyn Actor>, ConfigError> {
        Ok(match kind {
            PolicyKind::Mad => Box::new(MadPolicy::new(&self.mad, rng)?),
            PolicyKind::Baseline => Box::new(BaselinePolicy::new(&self.baseline, rng)?),
        })
    }

    pub fn build_critic(&self, rng: &mut impl Rng) -> Result<Critic, ConfigError> {
        Ok(Critic::new(&self.critic, rng)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        for name in PRESETS {
            let cfg = RunConfig::preset(name).unwrap();
            let text = cfg.to_toml_string().unwrap();
            assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn minimal_file_takes_defaults() {
        let cfg = RunConfig::from_toml_str("schema_version = 1\npolicy = \"baseline\"\n[env]\nn_agents = 7\n").unwrap();
        assert_eq!(cfg.policy, PolicyKind::Baseline);
        assert_eq!(cfg.env.n_agents, 7);
        assert_eq!(cfg.ppo, PpoConfig::default());
    }

    #[test]
    fn rejects_future_schema() {
        assert!(matches!(
            RunConfig::from_toml_str("schema_version = 2\n"),
            Err(ConfigError::Version { found: 2, expected: SCHEMA_VERSION })
        ));
    }

    #[test]
    fn rejects_unknown_fields_and_presets() {
        assert!(matches!(RunConfig::from_toml_str("schema_version = 1\n[env]\nbogus = 1\n"), Err(ConfigError::Parse(_))));
        assert!(matches!(RunConfig::preset("ten_agents"), Err(ConfigError::UnknownPreset(_))));
    }

    #[test]
    fn rejects_invalid_values() {
        assert!(RunConfig::from_toml_str("schema_version = 1\n[ppo]\nlearning_rate = -1.0\n").is_err());
        assert!(RunConfig::from_toml_str("schema_version = 1\n[env]\nn_agents = 0\n").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.ppo.seed = 9;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
