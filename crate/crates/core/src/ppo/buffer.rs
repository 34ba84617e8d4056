use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Critic, PpoError};
use crate::env::{Env, EnvConfig};
use crate::policy::{act, ActionMode, ActionRecord, Actor, CarryState, Observation};

#[derive(Clone, Debug)]
pub struct StepRecord {
    pub obs: Observation,
    pub action: ActionRecord,
    pub reward: f64,
    pub value: f64,
    /// `t / episode_len`, the critic's time feature.
    pub progress: f64,
}

/// A contiguous run of steps from one environment within one episode.
#[derive(Clone, Debug)]
pub struct Segment {
    pub env_id: usize,
    pub initial_carry: CarryState,
    pub steps: Vec<StepRecord>,
    /// `V(x_T)` if the segment was cut by the horizon, 0 at episode end.
    pub bootstrap: f64,
    pub terminal: bool,
}

#[derive(Clone, Debug, Default)]
pub struct RolloutBuffer {
    pub segments: Vec<Segment>,
    /// Undiscounted rewards of the episodes completed during collection.
    pub episode_returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.steps.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One environment with its own random stream and recurrent state.
pub struct Worker {
    pub id: usize,
    env: Env,
    rng: ChaCha8Rng,
    carry: CarryState,
    w: Vec<[f64; 4]>,
    episode_return: f64,
}

impl Worker {
    pub fn new<A: Actor + ?Sized>(id: usize, config: &EnvConfig, seed: u64, actor: &A) -> Result<Self, PpoError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id as u64 + 1);
        let (env, w) = Env::new(config.clone(), &mut rng)?;
        let carry = actor.initial_carry(env.n_agents());
        Ok(Self { id, env, rng, carry, w, episode_return: 0.0 })
    }

    fn observe(&self) -> Result<(Observation, f64), PpoError> {
        let obs = Observation::new(self.env.state(), self.env.graph(), &self.w)?;
        let progress = self.env.state().t as f64 / self.env.config.episode_len.max(1) as f64;
        Ok((obs, progress))
    }

    fn collect<A: Actor + ?Sized>(
        &mut self,
        actor: &A,
        critic: &Critic,
        horizon: usize,
    ) -> Result<(Vec<Segment>, Vec<f64>), PpoError> {
        let mut segments = Vec::new();
        let mut returns = Vec::new();
        let mut current = Segment {
            env_id: self.id,
            initial_carry: self.carry.clone(),
            steps: Vec::new(),
            bootstrap: 0.0,
            terminal: false,
        };
        for _ in 0..horizon {
            let (obs, progress) = self.observe()?;
            let value = critic.evaluate(&obs, progress)?;
            let (action, next) = act(actor, &obs, &self.carry, ActionMode::Sample, &mut self.rng)?;
            let out = self.env.step(&action.actions(), &mut self.rng)?;
            current.steps.push(StepRecord { obs, action, reward: out.reward, value, progress });
            self.episode_return += out.reward;
            self.w = out.disturbance;
            self.carry = next;
            if out.done {
                current.terminal = true;
                returns.push(self.episode_return);
                self.episode_return = 0.0;
                self.w = self.env.reset(&mut self.rng)?;
                self.carry = actor.initial_carry(self.env.n_agents());
                let finished = std::mem::replace(
                    &mut current,
                    Segment {
                        env_id: self.id,
                        initial_carry: self.carry.clone(),
                        steps: Vec::new(),
                        bootstrap: 0.0,
                        terminal: false,
                    },
                );
                segments.push(finished);
            }
        }
        if !current.steps.is_empty() {
            let (obs, progress) = self.observe()?;
            current.bootstrap = critic.evaluate(&obs, progress)?;
            segments.push(current);
        }
        Ok((segments, returns))
    }
}

/// Runs every worker for `horizon` steps with frozen parameters.
pub fn collect_rollouts<A: Actor + ?Sized>(
    workers: &mut [Worker],
    actor: &A,
    critic: &Critic,
    horizon: usize,
) -> Result<RolloutBuffer, PpoError> {
    let results: Vec<_> = workers.par_iter_mut().map(|w| w.collect(actor, critic, horizon)).collect();
    let mut buffer = RolloutBuffer::default();
    for r in results {
        let (segments, returns) = r?;
        buffer.segments.extend(segments);
        buffer.episode_returns.extend(returns);
    }
    Ok(buffer)
}
