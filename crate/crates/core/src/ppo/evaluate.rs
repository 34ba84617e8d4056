use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::PpoError;
use crate::env::{at_goal, colliding, Env, EnvConfig};
use crate::policy::{act, ActionMode, Actor, Observation};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub reward: f64,
    /// Global error-coordinate state norm for `t = 0..=T`.
    #[serde(skip)]
    pub norms: Vec<f64>,
    /// Agents inside their goal radius at the final step.
    pub goals_reached: usize,
    /// Agent-steps spent overlapping something.
    pub collisions: usize,
    pub n_agents: usize,
}

impl EpisodeResult {
    pub fn reward_per_agent(&self) -> f64 {
        self.reward / self.n_agents as f64
    }

    pub fn max_norm(&self) -> f64 {
        self.norms.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct EvalStats {
    pub episodes: Vec<EpisodeResult>,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub mean_reward_per_agent: f64,
    pub goal_reach_rate: f64,
    pub collisions: usize,
}

impl EvalStats {
    pub fn from_episodes(episodes: Vec<EpisodeResult>) -> Self {
        if episodes.is_empty() {
            return Self::default();
        }
        let n = episodes.len() as f64;
        let mean = episodes.iter().map(|e| e.reward).sum::<f64>() / n;
        let var = episodes.iter().map(|e| (e.reward - mean).powi(2)).sum::<f64>() / n;
        let agents: usize = episodes.iter().map(|e| e.n_agents).sum();
        Self {
            mean_reward: mean,
            std_reward: var.sqrt(),
            mean_reward_per_agent: episodes.iter().map(EpisodeResult::reward_per_agent).sum::<f64>() / n,
            goal_reach_rate: episodes.iter().map(|e| e.goals_reached).sum::<usize>() as f64 / agents as f64,
            collisions: episodes.iter().map(|e| e.collisions).sum(),
            episodes,
        }
    }
}

/// One full episode from the layout drawn by `seed`.
pub fn run_episode<A: Actor + ?Sized>(
    actor: &A,
    config: &EnvConfig,
    seed: u64,
    mode: ActionMode,
) -> Result<EpisodeResult, PpoError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut env, mut w) = Env::new(config.clone(), &mut rng)?;
    let mut carry = actor.initial_carry(env.n_agents());
    let mut norms = Vec::with_capacity(config.episode_len + 1);
    norms.push(env.state().error_norm());
    let mut reward = 0.0;
    let mut collisions = 0;
    while !env.done() {
        let obs = Observation::new(env.state(), env.graph(), &w)?;
        let (action, next) = act(actor, &obs, &carry, mode, &mut rng)?;
        let out = env.step(&action.actions(), &mut rng)?;
        reward += out.reward;
        collisions += colliding(&env.config, env.state()).iter().filter(|&&c| c).count();
        norms.push(env.state().error_norm());
        w = out.disturbance;
        carry = next;
    }
    let goals_reached = at_goal(&env.config, env.state()).iter().filter(|&&g| g).count();
    Ok(EpisodeResult { reward, norms, goals_reached, collisions, n_agents: env.n_agents() })
}

/// `episodes` independent episodes; episode `k` uses seed stream `(seed, k)`.
pub fn evaluate<A: Actor + ?Sized>(
    actor: &A,
    config: &EnvConfig,
    episodes: usize,
    mode: ActionMode,
    seed: u64,
) -> Result<EvalStats, PpoError> {
    let results: Result<Vec<_>, _> =
        (0..episodes).into_par_iter().map(|k| run_episode(actor, config, episode_seed(seed, k), mode)).collect();
    Ok(EvalStats::from_episodes(results?))
}

pub fn episode_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64)
}
