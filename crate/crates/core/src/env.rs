//! Multi-agent particle navigation world.
//!
//! Agents are 2-D point masses with linear drag, a speed limit and soft
//! pairwise contact forces. Obstacles are static discs. Agent `i` has state
//! `x = [v_x, v_y, p_x, p_y]`; graph nodes list agents first, then obstacles.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{distance, CommGraph, EntityKind, GraphError};
use crate::tensor::{softplus, Matrix};

pub const STATE_DIM: usize = 4;
pub const ACTION_DIM: usize = 2;
/// `[v (2), p (2), goal (2), is_agent, is_obstacle]`
pub const NODE_FEATURES: usize = 8;

pub const COLLISION_REWARD: f64 = -5.0;
pub const GOAL_REWARD: f64 = 5.0;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("could not place {what} after {attempts} attempts; the world is too crowded")]
    SpawnExhausted { what: &'static str, attempts: usize },
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("non-finite action for agent {agent}")]
    NonFiniteAction { agent: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub n_agents: usize,
    pub n_obstacles: usize,
    /// World half-width is `half_width_base * sqrt(n_agents)`.
    pub half_width_base: f64,
    pub dt: f64,
    pub damping: f64,
    pub mass: f64,
    pub max_speed: f64,
    pub comm_radius: f64,
    pub agent_radius: f64,
    pub obstacle_radius: f64,
    pub goal_radius: f64,
    /// Minimum spacing between goals and between goals and obstacles.
    pub goal_separation: f64,
    pub contact_force: f64,
    pub contact_margin: f64,
    pub noise_std: f64,
    pub episode_len: usize,
    pub spawn_attempts: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_agents: 5,
            n_obstacles: 0,
            half_width_base: 1.0,
            dt: 0.1,
            damping: 0.25,
            mass: 1.0,
            max_speed: 1.0,
            comm_radius: 1.0,
            agent_radius: 0.05,
            obstacle_radius: 0.1,
            goal_radius: 0.1,
            goal_separation: 0.25,
            contact_force: 100.0,
            contact_margin: 0.01,
            noise_std: 0.0,
            episode_len: 200,
            spawn_attempts: 10_000,
        }
    }
}

impl EnvConfig {
    pub fn with_agents(&self, n: usize) -> Self {
        Self { n_agents: n, ..self.clone() }
    }

    pub fn half_width(&self) -> f64 {
        self.half_width_base * (self.n_agents.max(1) as f64).sqrt()
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let positive = [
            ("dt", self.dt),
            ("mass", self.mass),
            ("max_speed", self.max_speed),
            ("comm_radius", self.comm_radius),
            ("agent_radius", self.agent_radius),
            ("obstacle_radius", self.obstacle_radius),
            ("goal_radius", self.goal_radius),
            ("half_width_base", self.half_width_base),
            ("contact_margin", self.contact_margin),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EnvError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.damping) {
            return Err(EnvError::Config(format!("damping must lie in [0, 1], got {}", self.damping)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(EnvError::Config(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        if !(self.contact_force >= 0.0 && self.contact_force.is_finite()) {
            return Err(EnvError::Config(format!("contact_force must be >= 0, got {}", self.contact_force)));
        }
        if self.n_agents == 0 {
            return Err(EnvError::Config("n_agents must be at least 1".into()));
        }
        Ok(())
    }
}

/// Positions, velocities and goals of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    /// `[v_x, v_y, p_x, p_y]` per agent.
    pub agents: Vec<[f64; 4]>,
    pub goals: Vec<[f64; 2]>,
    pub obstacles: Vec<[f64; 2]>,
    pub t: usize,
}

impl WorldState {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn position(&self, i: usize) -> [f64; 2] {
        [self.agents[i][2], self.agents[i][3]]
    }

    pub fn velocity(&self, i: usize) -> [f64; 2] {
        [self.agents[i][0], self.agents[i][1]]
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        (0..self.n_agents()).map(|i| self.position(i)).collect()
    }

    /// `‖[v, p - p_goal]‖_2` over all agents.
    pub fn error_norm(&self) -> f64 {
        self.agents
            .iter()
            .zip(&self.goals)
            .map(|(x, g)| x[0] * x[0] + x[1] * x[1] + (x[2] - g[0]).powi(2) + (x[3] - g[1]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Per-agent `[v, p - p_goal]` rows.
    pub fn error_matrix(&self) -> Matrix {
        Matrix::from_fn(self.n_agents(), STATE_DIM, |i, c| {
            let x = self.agents[i];
            if c < 2 {
                x[c]
            } else {
                x[c] - self.goals[i][c - 2]
            }
        })
    }
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub reward: f64,
    pub agent_rewards: Vec<f64>,
    /// Reconstructed `w_{t+1}` per agent.
    pub disturbance: Vec<[f64; 4]>,
    /// The noise actually injected, kept for diagnostics.
    pub injected: Vec<[f64; 4]>,
    pub graph: CommGraph,
    pub done: bool,
}

#[derive(Clone, Debug)]
pub struct Env {
    pub config: EnvConfig,
    state: WorldState,
    graph: CommGraph,
}

impl Env {
    /// Builds the environment and samples the first layout.
    pub fn new(config: EnvConfig, rng: &mut impl Rng) -> Result<(Self, Vec<[f64; 4]>), EnvError> {
        config.validate()?;
        let state = spawn(&config, rng)?;
        let graph = build_graph(&config, &state)?;
        let w0 = state.agents.clone();
        Ok((Self { config, state, graph }, w0))
    }

    /// Samples a fresh layout and returns `w_0 = x_0`.
    pub fn reset(&mut self, rng: &mut impl Rng) -> Result<Vec<[f64; 4]>, EnvError> {
        self.state = spawn(&self.config, rng)?;
        self.graph = build_graph(&self.config, &self.state)?;
        Ok(self.state.agents.clone())
    }

    /// Starts from an explicit layout.
    pub fn from_state(config: EnvConfig, state: WorldState) -> Result<Self, EnvError> {
        config.validate()?;
        if state.goals.len() != state.agents.len() {
            return Err(EnvError::Config("one goal per agent required".into()));
        }
        let graph = build_graph(&config, &state)?;
        Ok(Self { config, state, graph })
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn graph(&self) -> &CommGraph {
        &self.graph
    }

    pub fn n_agents(&self) -> usize {
        self.state.n_agents()
    }

    pub fn done(&self) -> bool {
        self.state.t >= self.config.episode_len
    }

    /// Noise-free one-step map `f(x, u)`.
    pub fn nominal(&self, agents: &[[f64; 4]], u: &[[f64; 2]]) -> Vec<[f64; 4]> {
        nominal_step(&self.config, agents, &self.state.obstacles, u)
    }

    pub fn step(&mut self, u: &[[f64; 2]], rng: &mut impl Rng) -> Result<StepOutput, EnvError> {
        let n = self.n_agents();
        if u.len() != n {
            return Err(EnvError::ActionCount { expected: n, got: u.len() });
        }
        if let Some(agent) = u.iter().position(|a| !a[0].is_finite() || !a[1].is_finite()) {
            return Err(EnvError::NonFiniteAction { agent });
        }
        let predicted = self.nominal(&self.state.agents, u);
        let mut injected = vec![[0.0; 4]; n];
        if self.config.noise_std > 0.0 {
            let normal = Normal::new(0.0, self.config.noise_std).expect("validated std");
            for w in injected.iter_mut() {
                for v in w.iter_mut() {
                    *v = normal.sample(rng);
                }
            }
        }
        let next: Vec<[f64; 4]> = predicted
            .iter()
            .zip(&injected)
            .map(|(x, w)| [x[0] + w[0], x[1] + w[1], x[2] + w[2], x[3] + w[3]])
            .collect();
        let disturbance = reconstruct(&next, &predicted);
        self.state.agents = next;
        self.state.t += 1;
        self.graph = build_graph(&self.config, &self.state)?;
        let (reward, agent_rewards) = reward(&self.config, &self.state);
        Ok(StepOutput {
            reward,
            agent_rewards,
            disturbance,
            injected,
            graph: self.graph.clone(),
            done: self.done(),
        })
    }

    /// `w_t = x_t - f(x_{t-1}, u_{t-1})`.
    pub fn reconstruct_disturbance(&self, x_t: &[[f64; 4]], x_prev: &[[f64; 4]], u_prev: &[[f64; 2]]) -> Vec<[f64; 4]> {
        reconstruct(x_t, &self.nominal(x_prev, u_prev))
    }

    /// Per-node input features for the direction path.
    pub fn node_features(&self) -> Matrix {
        node_features(&self.state)
    }
}

fn reconstruct(x: &[[f64; 4]], predicted: &[[f64; 4]]) -> Vec<[f64; 4]> {
    x.iter()
        .zip(predicted)
        .map(|(a, b)| [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]])
        .collect()
}

/// Contact force on an entity at `pi` from one at `pj`.
pub fn contact_force(config: &EnvConfig, pi: [f64; 2], pj: [f64; 2], d_min: f64) -> [f64; 2] {
    let d = distance(pi, pj);
    if d == 0.0 {
        return [0.0, 0.0];
    }
    let mag = config.contact_force * softplus((d_min - d) / config.contact_margin);
    [mag * (pi[0] - pj[0]) / d, mag * (pi[1] - pj[1]) / d]
}

pub fn nominal_step(
    config: &EnvConfig,
    agents: &[[f64; 4]],
    obstacles: &[[f64; 2]],
    u: &[[f64; 2]],
) -> Vec<[f64; 4]> {
    let n = agents.len();
    let pos = |i: usize| [agents[i][2], agents[i][3]];
    let mut force: Vec<[f64; 2]> = u.to_vec();
    for i in 0..n {
        for j in (i + 1)..n {
            let f = contact_force(config, pos(i), pos(j), 2.0 * config.agent_radius);
            force[i][0] += f[0];
            force[i][1] += f[1];
            force[j][0] -= f[0];
            force[j][1] -= f[1];
        }
        for &o in obstacles {
            let f = contact_force(config, pos(i), o, config.agent_radius + config.obstacle_radius);
            force[i][0] += f[0];
            force[i][1] += f[1];
        }
    }
    let scale = config.dt / config.mass;
    agents
        .iter()
        .zip(&force)
        .map(|(x, f)| {
            let mut v = [
                (1.0 - config.damping) * x[0] + f[0] * scale,
                (1.0 - config.damping) * x[1] + f[1] * scale,
            ];
            let speed = v[0].hypot(v[1]);
            if speed > config.max_speed {
                v = [v[0] * config.max_speed / speed, v[1] * config.max_speed / speed];
            }
            [v[0], v[1], x[2] + v[0] * config.dt, x[3] + v[1] * config.dt]
        })
        .collect()
}

/// Global reward and its per-agent terms.
pub fn reward(config: &EnvConfig, state: &WorldState) -> (f64, Vec<f64>) {
    let hits = colliding(config, state);
    let terms: Vec<f64> = (0..state.n_agents())
        .map(|i| {
            let d = distance(state.position(i), state.goals[i]);
            agent_reward(d, hits[i], d < config.goal_radius)
        })
        .collect();
    (terms.iter().sum(), terms)
}

/// Whether each agent overlaps another agent or an obstacle.
pub fn colliding(config: &EnvConfig, state: &WorldState) -> Vec<bool> {
    let n = state.n_agents();
    (0..n)
        .map(|i| {
            let p = state.position(i);
            (0..n).any(|j| j != i && distance(p, state.position(j)) < 2.0 * config.agent_radius)
                || state
                    .obstacles
                    .iter()
                    .any(|&o| distance(p, o) < config.agent_radius + config.obstacle_radius)
        })
        .collect()
}

/// Whether each agent is within the goal radius.
pub fn at_goal(config: &EnvConfig, state: &WorldState) -> Vec<bool> {
    (0..state.n_agents()).map(|i| distance(state.position(i), state.goals[i]) < config.goal_radius).collect()
}

pub fn agent_reward(goal_distance: f64, colliding: bool, at_goal: bool) -> f64 {
    let mut r = -goal_distance;
    if colliding {
        r += COLLISION_REWARD;
    }
    if at_goal {
        r += GOAL_REWARD;
    }
    r
}

pub fn build_graph(config: &EnvConfig, state: &WorldState) -> Result<CommGraph, GraphError> {
    let mut positions = state.positions();
    positions.extend_from_slice(&state.obstacles);
    let mut kinds = vec![EntityKind::Agent; state.n_agents()];
    kinds.extend(std::iter::repeat_n(EntityKind::Obstacle, state.obstacles.len()));
    CommGraph::from_positions(&positions, &kinds, config.comm_radius)
}

pub fn node_features(state: &WorldState) -> Matrix {
    let n = state.n_agents();
    let mut x = Matrix::zeros(n + state.obstacles.len(), NODE_FEATURES);
    for i in 0..n {
        let a = state.agents[i];
        let g = state.goals[i];
        x.row_mut(i).copy_from_slice(&[a[0], a[1], a[2], a[3], g[0], g[1], 1.0, 0.0]);
    }
    for (k, o) in state.obstacles.iter().enumerate() {
        x.row_mut(n + k).copy_from_slice(&[0.0, 0.0, o[0], o[1], o[0], o[1], 0.0, 1.0]);
    }
    x
}

/// `W_t` rows: agent disturbances with the augmentation columns zeroed; obstacle rows are zero.
pub fn disturbance_features(w: &[[f64; 4]], n_obstacles: usize) -> Matrix {
    let mut x = Matrix::zeros(w.len() + n_obstacles, NODE_FEATURES);
    for (i, wi) in w.iter().enumerate() {
        x.row_mut(i)[..4].copy_from_slice(wi);
    }
    x
}

fn spawn(config: &EnvConfig, rng: &mut impl Rng) -> Result<WorldState, EnvError> {
    let hw = config.half_width();
    let attempts = config.spawn_attempts.max(1);
    let sample = |what: &'static str,
                      placed: &[([f64; 2], f64)],
                      radius: f64,
                      rng: &mut dyn rand::RngCore|
     -> Result<[f64; 2], EnvError> {
        for _ in 0..attempts {
            let p = [rng.random_range(-hw..=hw), rng.random_range(-hw..=hw)];
            if placed.iter().all(|&(q, r)| distance(p, q) > r + radius) {
                return Ok(p);
            }
        }
        Err(EnvError::SpawnExhausted { what, attempts })
    };

    let mut bodies: Vec<([f64; 2], f64)> = Vec::new();
    let mut obstacles = Vec::with_capacity(config.n_obstacles);
    for _ in 0..config.n_obstacles {
        let p = sample("obstacle", &bodies, config.obstacle_radius, rng)?;
        bodies.push((p, config.obstacle_radius));
        obstacles.push(p);
    }
    let mut agents = Vec::with_capacity(config.n_agents);
    for _ in 0..config.n_agents {
        let p = sample("agent", &bodies, config.agent_radius, rng)?;
        bodies.push((p, config.agent_radius));
        agents.push([0.0, 0.0, p[0], p[1]]);
    }
    // goals avoid each other and obstacles, but may sit under a starting agent
    let half_sep = 0.5 * config.goal_separation;
    let mut goal_bodies: Vec<([f64; 2], f64)> =
        obstacles.iter().map(|&o| (o, config.obstacle_radius + half_sep)).collect();
    let mut goals = Vec::with_capacity(config.n_agents);
    for _ in 0..config.n_agents {
        let g = sample("goal", &goal_bodies, half_sep, rng)?;
        goal_bodies.push((g, half_sep));
        goals.push(g);
    }
    Ok(WorldState { agents, goals, obstacles, t: 0 })
}
