//! Drivers shared by the command-line tool and the acceptance suite.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, RunConfig};
use crate::policy::{ActionMode, Actor, PolicyKind};
use crate::ppo::{episode_seed, run_episode, PpoError};

/// Error-coordinate state norms of one rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormTrace {
    pub n_agents: usize,
    pub run: usize,
    pub norms: Vec<f64>,
}

impl NormTrace {
    pub fn peak(&self) -> f64 {
        self.norms.iter().copied().fold(0.0, f64::max)
    }

    pub fn last(&self) -> f64 {
        self.norms.last().copied().unwrap_or(0.0)
    }

    /// Final norm relative to the peak (0 for an all-zero trace).
    pub fn final_fraction(&self) -> f64 {
        let peak = self.peak();
        if peak > 0.0 {
            self.last() / peak
        } else {
            0.0
        }
    }
}

/// One row of the transfer table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub n_agents: usize,
    pub episode: usize,
    pub reward: f64,
}

fn stream(seed: u64, a: u64, b: u64) -> u64 {
    episode_seed(episode_seed(seed, a as usize), b as usize)
}

/// A freshly initialised actor for run `run` at size `n_agents`.
pub fn untrained_actor(
    config: &RunConfig,
    kind: PolicyKind,
    seed: u64,
    n_agents: usize,
    run: usize,
) -> Result<Box<dyn Actor>, ConfigError> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream(seed, n_agents as u64, run as u64));
    rng.set_stream(1);
    config.build_actor(kind, &mut rng)
}

/// Rolls out `runs` episodes for every size in `agents`, sampling actions.
///
/// With `actor = None` every run gets its own untrained policy of `kind`.
pub fn stability_traces(
    config: &RunConfig,
    kind: PolicyKind,
    actor: Option<&dyn Actor>,
    agents: &[usize],
    runs: usize,
    seed: u64,
) -> Result<Vec<NormTrace>, ConfigError> {
    let jobs: Vec<(usize, usize)> = agents.iter().flat_map(|&n| (0..runs).map(move |r| (n, r))).collect();
    jobs.into_par_iter()
        .map(|(n, run)| {
            let env = config.env.with_agents(n);
            let episode = stream(seed, n as u64, run as u64 + 1_000_000);
            let result = match actor {
                Some(a) => run_episode(a, &env, episode, ActionMode::Sample),
                None => run_episode(untrained_actor(config, kind, seed, n, run)?.as_ref(), &env, episode, ActionMode::Sample),
            }
            .map_err(ConfigError::from)?;
            Ok(NormTrace { n_agents: n, run, norms: result.norms })
        })
        .collect()
}

/// Episode rewards of `actor` on fresh layouts for every size in `agents`.
///
/// Episode `k` uses the same seed as episode `k` of [`crate::ppo::evaluate`].
pub fn transfer_rewards(
    config: &RunConfig,
    actor: &dyn Actor,
    agents: &[usize],
    episodes: usize,
    seed: u64,
    mode: ActionMode,
) -> Result<Vec<(TransferRow, f64)>, PpoError> {
    let jobs: Vec<(usize, usize)> = agents.iter().flat_map(|&n| (0..episodes).map(move |e| (n, e))).collect();
    jobs.into_par_iter()
        .map(|(n, episode)| {
            let env = config.env.with_agents(n);
            let r = run_episode(actor, &env, episode_seed(seed, episode), mode)?;
            let max_norm = r.max_norm();
            Ok((TransferRow { n_agents: n, episode, reward: r.reward }, max_norm))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn traces_cover_grid_and_are_reproducible() {
        let cfg = RunConfig::preset("smoke").unwrap();
        let a = stability_traces(&cfg, PolicyKind::Mad, None, &[1, 2], 2, 7).unwrap();
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|t| t.norms.len() == cfg.env.episode_len + 1));
        let b = stability_traces(&cfg, PolicyKind::Mad, None, &[1, 2], 2, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn final_fraction_of_flat_trace() {
        let t = NormTrace { n_agents: 1, run: 0, norms: vec![2.0, 4.0, 1.0] };
        assert_eq!(t.final_fraction(), 0.25);
        assert_eq!(NormTrace { n_agents: 1, run: 0, norms: vec![0.0] }.final_fraction(), 0.0);
    }
}
