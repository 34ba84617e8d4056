//! JSON checkpoints of actor and critic parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::policy::{Actor, MadPolicy, PolicyError, PolicyKind};
use crate::ppo::{BaselinePolicy, Critic};
use crate::tensor::{NamedMatrix, Params, TensorError};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint config hash {stored} does not match its config ({computed})")]
    HashMismatch { stored: String, computed: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: PolicyKind,
    pub iteration: usize,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
    pub actor: Vec<NamedMatrix>,
    pub critic: Vec<NamedMatrix>,
}

impl Checkpoint {
    pub fn capture<A: Actor + ?Sized>(
        config: &RunConfig,
        iteration: usize,
        seed: u64,
        actor: &A,
        critic: &Critic,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            kind: actor.kind(),
            iteration,
            seed,
            config_hash: config.hash(),
            config: config.clone(),
            actor: actor.params().to_named(),
            critic: critic.params().to_named(),
        }
    }

    pub fn to_json(&self) -> Result<String, CheckpointError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let ck: Self = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version { found: ck.version, expected: CHECKPOINT_VERSION });
        }
        let computed = ck.config.hash();
        if computed != ck.config_hash {
            return Err(CheckpointError::HashMismatch { stored: ck.config_hash, computed });
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_json()?)
            .map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn actor(&self) -> Result<Box<dyn Actor>, CheckpointError> {
        let params = Params::from_named(self.actor.clone())?;
        Ok(match self.kind {
            PolicyKind::Mad => Box::new(MadPolicy::with_params(&self.config.mad, &params)?),
            PolicyKind::Baseline => Box::new(BaselinePolicy::with_params(&self.config.baseline, &params)?),
        })
    }

    pub fn critic(&self) -> Result<Critic, CheckpointError> {
        Ok(Critic::with_params(&self.config.critic, &Params::from_named(self.critic.clone())?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(kind: PolicyKind) -> (RunConfig, Checkpoint) {
        let cfg = RunConfig::preset("smoke").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let actor = cfg.build_actor(kind, &mut rng).unwrap();
        let critic = cfg.build_critic(&mut rng).unwrap();
        let ck = Checkpoint::capture(&cfg, 3, 5, actor.as_ref(), &critic);
        (cfg, ck)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for kind in [PolicyKind::Mad, PolicyKind::Baseline] {
            let (_, ck) = sample(kind);
            let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
            assert_eq!(back, ck);
            let restored = back.actor().unwrap();
            for (a, b) in restored.params().to_named().iter().zip(&ck.actor) {
                assert_eq!(a.name, b.name);
                assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            assert_eq!(back.critic().unwrap().params().to_named(), ck.critic);
        }
    }

    #[test]
    fn tampered_config_is_detected() {
        let (_, mut ck) = sample(PolicyKind::Mad);
        ck.config.ppo.seed += 1;
        let text = serde_json::to_string(&ck).unwrap();
        assert!(matches!(Checkpoint::from_json(&text), Err(CheckpointError::HashMismatch { .. })));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let (_, mut ck) = sample(PolicyKind::Baseline);
        ck.version = 99;
        let text = serde_json::to_string(&ck).unwrap();
        assert!(matches!(Checkpoint::from_json(&text), Err(CheckpointError::Version { found: 99, .. })));
    }
}
