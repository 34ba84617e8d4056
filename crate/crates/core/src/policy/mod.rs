//! Stochastic policies of the form `u = u_base + m ⊙ tanh(a)`, `a ~ N(μ, σ²)`.
//!
//! The MAD policy produces `m` from the disturbance history and `(μ, σ)` from
//! the state history. The baseline reuses the same action form with a fixed
//! magnitude and no base controller, so one log-probability serves both.

mod mad;
pub mod squash;

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{disturbance_features, node_features, WorldState, ACTION_DIM};
use crate::graph::{CommGraph, GraphContext};
use crate::tensor::{Bound, Matrix, Params, SquashData, Tape, TensorError, Var};

pub use mad::{MadConfig, MadPolicy};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(
        "action outside the support at agent {agent}, dim {dim}: |u - u_base| = {deviation} >= m = {magnitude}"
    )]
    OutsideSupport { agent: usize, dim: usize, deviation: f64, magnitude: f64 },
    #[error("non-finite disturbance for agent {0}")]
    NonFiniteDisturbance(usize),
    #[error("invalid policy config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Mad,
    Baseline,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Mad => "mad",
            PolicyKind::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mad" => Ok(PolicyKind::Mad),
            "baseline" => Ok(PolicyKind::Baseline),
            other => Err(format!("unknown policy kind '{other}' (expected 'mad' or 'baseline')")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionMode {
    Sample,
    /// `a = μ`
    Mean,
}

/// Everything one decision step sees.
#[derive(Clone, Debug)]
pub struct Observation {
    pub n_agents: usize,
    /// Direction-path node features `X_t`.
    pub features: Matrix,
    /// Magnitude-path node features `W_t`.
    pub disturbance: Matrix,
    /// `p - p_goal` per agent.
    pub goal_error: Matrix,
    pub graph: GraphContext,
    pub agent_rows: Arc<[usize]>,
}

impl Observation {
    pub fn new(state: &WorldState, graph: &CommGraph, w: &[[f64; 4]]) -> Result<Self, PolicyError> {
        if let Some(i) = w.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(PolicyError::NonFiniteDisturbance(i));
        }
        let n = state.n_agents();
        Ok(Self {
            n_agents: n,
            features: node_features(state),
            disturbance: disturbance_features(w, state.obstacles.len()),
            goal_error: Matrix::from_fn(n, ACTION_DIM, |i, c| state.agents[i][2 + c] - state.goals[i][c]),
            graph: graph.context(),
            agent_rows: (0..n).collect(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.graph.n
    }
}

/// Recurrent state on a tape.
#[derive(Clone)]
pub struct Carry<'t>(pub Vec<Var<'t>>);

/// Recurrent state between tapes.
#[derive(Clone, Debug, PartialEq)]
pub struct CarryState(pub Vec<Matrix>);

impl CarryState {
    pub fn on<'t>(&self, tape: &'t Tape) -> Carry<'t> {
        Carry(self.0.iter().map(|m| tape.constant(m.clone())).collect())
    }
}

impl<'t> Carry<'t> {
    pub fn value(&self) -> CarryState {
        CarryState(self.0.iter().map(|v| v.value()).collect())
    }
}

pub struct ActorOutput<'t> {
    pub mu: Var<'t>,
    pub log_std: Var<'t>,
    pub magnitude: Var<'t>,
    pub u_base: Matrix,
    pub carry: Carry<'t>,
}

/// A recurrent squashed-Gaussian policy.
pub trait Actor: Send + Sync {
    fn kind(&self) -> PolicyKind;
    fn params(&self) -> &Params;
    fn params_mut(&mut self) -> &mut Params;
    fn initial_carry(&self, n_agents: usize) -> CarryState;
    /// One decision step, recorded on the tape behind `p`.
    fn step<'t>(&self, p: &Bound<'t>, obs: &Observation, carry: Carry<'t>) -> Result<ActorOutput<'t>, PolicyError>;
}

/// One sampled joint action.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionRecord {
    pub u: Matrix,
    pub u_base: Matrix,
    pub magnitude: Matrix,
    pub presquash: Matrix,
    pub log_prob: f64,
    pub mu: Matrix,
    pub log_std: Matrix,
}

impl ActionRecord {
    /// `m ⊙ tanh(a)`, recomputed exactly as at sampling time.
    pub fn deviation(&self) -> Matrix {
        squashed_deviation(&self.magnitude, &self.presquash)
    }

    pub fn squash_data(&self) -> Arc<SquashData> {
        Arc::new(SquashData {
            deviation: self.deviation(),
            presquash: self.presquash.clone(),
            magnitude: self.magnitude.clone(),
        })
    }

    pub fn actions(&self) -> Vec<[f64; 2]> {
        (0..self.u.rows()).map(|i| [self.u.get(i, 0), self.u.get(i, 1)]).collect()
    }
}

fn squashed_deviation(m: &Matrix, a: &Matrix) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |r, c| m.get(r, c) * a.get(r, c).tanh())
}

/// Joint log-density of a stored action under the step outputs, as a tape scalar.
pub fn log_prob_var<'t>(
    out: &ActorOutput<'t>,
    data: Arc<SquashData>,
) -> Result<Var<'t>, TensorError> {
    out.mu.tape().squashed_log_prob(out.mu, out.log_std, out.magnitude, data)?.sum()
}

/// Entropy of the pre-squash Gaussian, summed over agents and dimensions.
pub fn gaussian_entropy<'t>(log_std: Var<'t>) -> Result<Var<'t>, TensorError> {
    let (r, c) = log_std.shape();
    let per_dim = 0.5 * (1.0 + (2.0 * std::f64::consts::PI).ln());
    log_std.sum()?.offset(per_dim * (r * c) as f64)
}

/// Samples (or takes the mean of) the direction and records the action.
pub fn act<A: Actor + ?Sized>(
    actor: &A,
    obs: &Observation,
    carry: &CarryState,
    mode: ActionMode,
    rng: &mut impl Rng,
) -> Result<(ActionRecord, CarryState), PolicyError> {
    let tape = Tape::new();
    let p = actor.params().bind_frozen(&tape);
    let out = actor.step(&p, obs, carry.on(&tape))?;
    let (mu, log_std, magnitude) = (out.mu.value(), out.log_std.value(), out.magnitude.value());
    let presquash = match mode {
        ActionMode::Mean => mu.clone(),
        ActionMode::Sample => Matrix::from_fn(mu.rows(), mu.cols(), |r, c| {
            let eps: f64 = StandardNormal.sample(rng);
            mu.get(r, c) + log_std.get(r, c).exp() * eps
        }),
    };
    let deviation = squashed_deviation(&magnitude, &presquash);
    let u = out.u_base.add(&deviation)?;
    let data = Arc::new(SquashData { deviation, presquash: presquash.clone(), magnitude: magnitude.clone() });
    let log_prob = log_prob_var(&out, data)?.item()?;
    let record = ActionRecord { u, u_base: out.u_base.clone(), magnitude, presquash, log_prob, mu, log_std };
    Ok((record, out.carry.value()))
}

/// `log π` from a stored pre-squash sample.
pub fn log_prob_presquash(a: &Matrix, m: &Matrix, mu: &Matrix, log_std: &Matrix) -> f64 {
    let mut total = 0.0;
    for i in 0..a.len() {
        let (ai, mi) = (a.data()[i], m.data()[i]);
        let e = squash::element(mi * ai.tanh(), ai, mi, mi);
        total += squash::log_prob_element(&e, mu.data()[i], log_std.data()[i], mi);
    }
    total
}

/// `log π` reconstructed from `(u, u_base, m)` alone via `a = atanh((u - u_base) / m)`.
pub fn log_prob_reconstruct(
    u: &Matrix,
    u_base: &Matrix,
    m: &Matrix,
    mu: &Matrix,
    log_std: &Matrix,
) -> Result<f64, PolicyError> {
    let cols = u.cols();
    let mut total = 0.0;
    for i in 0..u.len() {
        let dev = u.data()[i] - u_base.data()[i];
        let mi = m.data()[i];
        if !(dev.abs() < mi) {
            return Err(PolicyError::OutsideSupport { agent: i / cols, dim: i % cols, deviation: dev.abs(), magnitude: mi });
        }
        let a = (dev / mi).atanh();
        let e = squash::Element::Interior { a };
        total += squash::log_prob_element(&e, mu.data()[i], log_std.data()[i], mi);
    }
    Ok(total)
}

/// `u_base = K (p - p_goal)` per agent.
pub fn base_controller(positions: &[[f64; 2]], goals: &[[f64; 2]], gain: f64) -> Vec<[f64; 2]> {
    positions
        .iter()
        .zip(goals)
        .map(|(p, g)| [gain * (p[0] - g[0]), gain * (p[1] - g[1])])
        .collect()
}

/// Runs `actor` on `obs` with frozen parameters and returns `(μ, log σ, m)`.
pub fn evaluate_heads<A: Actor + ?Sized>(
    actor: &A,
    obs: &Observation,
    carry: &CarryState,
) -> Result<(Matrix, Matrix, Matrix, CarryState), PolicyError> {
    let tape = Tape::new();
    let p = actor.params().bind_frozen(&tape);
    let out = actor.step(&p, obs, carry.on(&tape))?;
    Ok((out.mu.value(), out.log_std.value(), out.magnitude.value(), out.carry.value()))
}
