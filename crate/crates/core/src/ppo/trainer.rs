use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{collect_rollouts, ppo_update, Adam, Critic, PpoConfig, PpoError, UpdateStats, Worker};
use crate::env::EnvConfig;
use crate::policy::Actor;

/// One learning-curve line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub seed: u64,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub wall_s: f64,
}

/// Progress notifications; returning an error aborts training.
pub enum TrainEvent<'a, A: ?Sized> {
    /// Parameters after `iteration` updates (0 = initial).
    Checkpoint { iteration: usize, actor: &'a A, critic: &'a Critic },
    Iteration { row: &'a CurveRow, stats: &'a UpdateStats },
}

/// Alternates collection and PPO updates for `cfg.iterations` iterations.
pub fn train<A: Actor + ?Sized>(
    actor: &mut A,
    critic: &mut Critic,
    env_config: &EnvConfig,
    cfg: &PpoConfig,
    hook: &mut dyn FnMut(TrainEvent<'_, A>) -> Result<(), String>,
) -> Result<Vec<CurveRow>, PpoError> {
    cfg.validate()?;
    env_config.validate()?;
    hook(TrainEvent::Checkpoint { iteration: 0, actor, critic }).map_err(PpoError::Hook)?;
    let mut workers: Vec<Worker> =
        (0..cfg.n_envs).map(|i| Worker::new(i, env_config, cfg.seed, &*actor)).collect::<Result<_, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    let mut actor_opt =
        Adam::new(actor.params(), cfg.learning_rate).scale_group(actor.params(), "magnitude.", cfg.magnitude_lr_scale);
    let mut critic_opt = Adam::new(critic.params(), cfg.learning_rate);
    let start = Instant::now();
    let mut curve = Vec::with_capacity(cfg.iterations);
    let mut last_mean = f64::NAN;
    let mut last_std = f64::NAN;
    for iteration in 0..cfg.iterations {
        let buffer = collect_rollouts(&mut workers, &*actor, critic, cfg.horizon)?;
        if !buffer.episode_returns.is_empty() {
            let n = buffer.episode_returns.len() as f64;
            last_mean = buffer.episode_returns.iter().sum::<f64>() / n;
            last_std = (buffer.episode_returns.iter().map(|r| (r - last_mean).powi(2)).sum::<f64>() / n).sqrt();
        }
        let stats = ppo_update(actor, critic, &buffer, cfg, &mut actor_opt, &mut critic_opt, &mut rng).map_err(|e| match e {
            PpoError::NonFiniteStreak { steps, .. } => PpoError::NonFiniteStreak { iteration, steps },
            other => other,
        })?;
        let row = CurveRow {
            iteration,
            seed: cfg.seed,
            mean_reward: last_mean,
            std_reward: last_std,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            wall_s: start.elapsed().as_secs_f64(),
        };
        hook(TrainEvent::Iteration { row: &row, stats: &stats }).map_err(PpoError::Hook)?;
        curve.push(row);
        let done = iteration + 1;
        if cfg.checkpoint_every > 0 && (done % cfg.checkpoint_every == 0 || done == cfg.iterations) {
            hook(TrainEvent::Checkpoint { iteration: done, actor, critic }).map_err(PpoError::Hook)?;
        }
    }
    Ok(curve)
}
