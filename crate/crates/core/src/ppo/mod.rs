//! Proximal policy optimisation with a centralised graph critic.

mod adam;
mod baseline;
mod buffer;
mod critic;
mod evaluate;
mod gae;
mod trainer;
mod update;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvError;
use crate::policy::PolicyError;
use crate::tensor::TensorError;

pub use adam::{clip_global_norm, clip_split_norm, global_norm, Adam};
pub use baseline::{BaselineConfig, BaselinePolicy};
pub use buffer::{collect_rollouts, RolloutBuffer, Segment, StepRecord, Worker};
pub use critic::{Critic, CriticConfig, CRITIC_FEATURES};
pub use evaluate::{episode_seed, evaluate, run_episode, EpisodeResult, EvalStats};
pub use gae::{gae, normalize};
pub use trainer::{train, CurveRow, TrainEvent};
pub use update::{advantages, policy_loss, ppo_update, recompute_log_probs, value_loss, UpdateStats};

#[derive(Debug, Error)]
pub enum PpoError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{rewards} rewards but {values} values")]
    LengthMismatch { rewards: usize, values: usize },
    #[error(
        "non-finite probability ratio at segment {segment}, step {step}: new log-prob {new_log_prob}, old log-prob {old_log_prob}"
    )]
    NonFiniteRatio { segment: usize, step: usize, new_log_prob: f64, old_log_prob: f64 },
    #[error("{steps} consecutive non-finite losses at iteration {iteration}; aborting")]
    NonFiniteStreak { iteration: usize, steps: usize },
    #[error("invalid PPO config: {0}")]
    Config(String),
    #[error("checkpoint hook failed: {0}")]
    Hook(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    /// Segments per minibatch.
    pub minibatch_segments: usize,
    pub learning_rate: f64,
    /// Learning-rate multiplier for parameters under the `magnitude.` prefix.
    pub magnitude_lr_scale: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    /// Multiplies rewards before advantage estimation.
    pub reward_scale: f64,
    pub horizon: usize,
    pub n_envs: usize,
    pub iterations: usize,
    pub checkpoint_every: usize,
    /// Consecutive skipped (non-finite) gradient steps tolerated before aborting.
    pub max_nonfinite_steps: usize,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            gae_lambda: 0.9,
            clip: 0.2,
            epochs: 10,
            minibatch_segments: 2,
            learning_rate: 1.5e-3,
            magnitude_lr_scale: 0.1,
            entropy_coef: 0.0,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            reward_scale: 0.01,
            horizon: 200,
            n_envs: 8,
            iterations: 50,
            checkpoint_every: 10,
            max_nonfinite_steps: 5,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(PpoError::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(PpoError::Config(format!("gae_lambda must lie in [0, 1], got {}", self.gae_lambda)));
        }
        if !(self.clip > 0.0) {
            return Err(PpoError::Config(format!("clip must be positive, got {}", self.clip)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(PpoError::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.magnitude_lr_scale >= 0.0 && self.magnitude_lr_scale.is_finite()) {
            return Err(PpoError::Config(format!(
                "magnitude_lr_scale must be non-negative, got {}",
                self.magnitude_lr_scale
            )));
        }
        if self.horizon == 0 || self.n_envs == 0 || self.minibatch_segments == 0 {
            return Err(PpoError::Config("horizon, n_envs and minibatch_segments must be positive".into()));
        }
        Ok(())
    }
}
