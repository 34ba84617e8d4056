use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{Actor, ActorOutput, Carry, CarryState, Observation, PolicyError, PolicyKind};
use crate::env::{ACTION_DIM, NODE_FEATURES};
use crate::gnn::{attention_support_norm, Gnn, GnnConfig, Support};
use crate::lru::{Lru, LruConfig, StateVars};
use crate::nn::{scaled_init, Linear};
use crate::tensor::{Bound, Matrix, ParamId, Params, Tape, TensorError, Unary, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MadConfig {
    pub magnitude_gnn: GnnConfig,
    pub lru: LruConfig,
    pub direction_gnn: GnnConfig,
    pub rnn_hidden: usize,
    /// Hard cap `m_max` on each magnitude entry.
    pub max_magnitude: f64,
    /// Proportional gain `K` of the base controller.
    pub base_gain: f64,
    /// State-dependent log-std head, or one learned log-std per action dimension.
    pub state_dependent_std: bool,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for MadConfig {
    fn default() -> Self {
        Self {
            magnitude_gnn: GnnConfig {
                input_dim: NODE_FEATURES,
                layer_dims: vec![16, 16],
                output_dim: Some(16),
                output_bias: false,
                ..GnnConfig::default()
            },
            lru: LruConfig {
                input_dim: 16,
                output_dim: ACTION_DIM,
                r_min: 0.9,
                r_max: 0.99,
                init_scale: 10.0,
                ..LruConfig::default()
            },
            direction_gnn: GnnConfig {
                input_dim: NODE_FEATURES,
                layer_dims: vec![32, 32],
                output_dim: Some(32),
                output_bias: true,
                ..GnnConfig::default()
            },
            rnn_hidden: 32,
            max_magnitude: 1.0,
            base_gain: -0.6,
            state_dependent_std: true,
            log_std_min: -2.0,
            log_std_max: 0.5,
        }
    }
}

impl MadConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.max_magnitude > 0.0 && self.max_magnitude.is_finite()) {
            return Err(PolicyError::Config(format!("max_magnitude must be positive, got {}", self.max_magnitude)));
        }
        if self.magnitude_gnn.output_bias {
            return Err(PolicyError::Config("the magnitude GNN output map must have no offset".into()));
        }
        if self.magnitude_gnn.input_dim != NODE_FEATURES || self.direction_gnn.input_dim != NODE_FEATURES {
            return Err(PolicyError::Config(format!("GNN input_dim must be {NODE_FEATURES}")));
        }
        let z_dim = self.magnitude_gnn.output_dim.or(self.magnitude_gnn.layer_dims.last().copied());
        if z_dim != Some(self.lru.input_dim) {
            return Err(PolicyError::Config(format!(
                "LRU input_dim {} does not match magnitude GNN output {:?}",
                self.lru.input_dim, z_dim
            )));
        }
        if self.lru.output_dim != ACTION_DIM {
            return Err(PolicyError::Config(format!("LRU output_dim must be {ACTION_DIM}")));
        }
        if !(self.log_std_min < self.log_std_max) {
            return Err(PolicyError::Config("log_std_min must be below log_std_max".into()));
        }
        if self.rnn_hidden == 0 {
            return Err(PolicyError::Config("rnn_hidden must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Rnn {
    input: ParamId,
    recurrent: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
enum StdHead {
    State(Linear),
    Global(ParamId),
}

/// Magnitude-and-direction policy over a graph of agents.
#[derive(Clone, Debug)]
pub struct MadPolicy {
    pub config: MadConfig,
    params: Params,
    pub magnitude_gnn: Gnn,
    pub lru: Lru,
    pub direction_gnn: Gnn,
    rnn: Rnn,
    mu_head: Linear,
    std_head: StdHead,
}

impl MadPolicy {
    pub fn new(config: &MadConfig, rng: &mut impl Rng) -> Result<Self, PolicyError> {
        config.validate()?;
        let mut params = Params::new();
        let magnitude_gnn = Gnn::new(&mut params, "magnitude.gnn", &config.magnitude_gnn, rng)?;
        let lru = Lru::new(&mut params, "magnitude.lru", &config.lru, rng)?;
        let direction_gnn = Gnn::new(&mut params, "direction.gnn", &config.direction_gnn, rng)?;
        let (v_dim, h) = (direction_gnn.output_dim(), config.rnn_hidden);
        let rnn = Rnn {
            input: params.insert("direction.rnn.input", scaled_init(v_dim, h, 1.0, rng))?,
            recurrent: params.insert("direction.rnn.recurrent", scaled_init(h, h, 0.5, rng))?,
            bias: params.insert("direction.rnn.bias", Matrix::zeros(1, h))?,
        };
        let mu_head = Linear::new(&mut params, "direction.mu", h, ACTION_DIM, 0.1, true, rng)?;
        let std_head = if config.state_dependent_std {
            StdHead::State(Linear::new(&mut params, "direction.log_std", h, ACTION_DIM, 0.1, true, rng)?)
        } else {
            StdHead::Global(params.insert("direction.log_std", Matrix::zeros(1, ACTION_DIM))?)
        };
        Ok(Self { config: config.clone(), params, magnitude_gnn, lru, direction_gnn, rnn, mu_head, std_head })
    }

    /// Rebuilds the structure from `config` and loads `params` into it.
    pub fn with_params(config: &MadConfig, params: &Params) -> Result<Self, PolicyError> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut policy = Self::new(config, &mut rng)?;
        if params.len() != policy.params.len() {
            return Err(PolicyError::Config(format!(
                "checkpoint has {} parameter matrices, policy expects {}",
                params.len(),
                policy.params.len()
            )));
        }
        policy.params.copy_from(params)?;
        Ok(policy)
    }

    /// `m = min(|LRU(Φ(W; θ1))|, m_max)` for the agent rows.
    pub fn magnitude_step<'t>(
        &self,
        p: &Bound<'t>,
        obs: &Observation,
        state: StateVars<'t>,
    ) -> Result<(Var<'t>, StateVars<'t>), TensorError> {
        let tape = state.re.tape();
        let w = tape.constant(obs.disturbance.clone());
        let z = self
            .magnitude_gnn
            .forward(p, w, Support::Attention(&obs.graph))?
            .select_rows(obs.agent_rows.clone())?;
        let coeffs = self.lru.coeffs(p)?;
        let (y, next) = self.lru.step(p, &coeffs, z, state)?;
        let m = y.abs()?.map(Unary::MinConst(self.config.max_magnitude))?;
        Ok((m, next))
    }

    /// `(μ, log σ)` from the direction GNN and shared Elman RNN.
    pub fn direction_step<'t>(
        &self,
        p: &Bound<'t>,
        obs: &Observation,
        hidden: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>, Var<'t>), TensorError> {
        let tape = hidden.tape();
        let x = tape.constant(obs.features.clone());
        let v = self
            .direction_gnn
            .forward(p, x, Support::Attention(&obs.graph))?
            .select_rows(obs.agent_rows.clone())?;
        let h = v
            .matmul(p.get(self.rnn.input))?
            .add(hidden.matmul(p.get(self.rnn.recurrent))?)?
            .add_row(p.get(self.rnn.bias))?
            .tanh()?;
        let mu = self.mu_head.forward(p, h)?;
        let raw = match &self.std_head {
            StdHead::State(head) => head.forward(p, h)?,
            StdHead::Global(id) => tape.constant(Matrix::zeros(obs.n_agents, ACTION_DIM)).add_row(p.get(*id))?,
        };
        let mid = 0.5 * (self.config.log_std_max + self.config.log_std_min);
        let half = 0.5 * (self.config.log_std_max - self.config.log_std_min);
        let log_std = raw.tanh()?.scale(half)?.offset(mid)?;
        Ok((mu, log_std, h))
    }

    /// Certified `γ(LRU) γ(Φ)` bound from `‖w‖_2` to `‖m‖_2` on graphs with `n_nodes` nodes.
    pub fn magnitude_gain_bound(&self, n_nodes: usize) -> f64 {
        self.lru.gain_bound(&self.params)
            * self.magnitude_gnn.gain_bound(&self.params, attention_support_norm(n_nodes, 2.0), 2.0)
    }

    /// Magnitudes alone over a disturbance sequence, without the direction path.
    pub fn magnitude_rollout(&self, observations: &[Observation]) -> Result<Vec<Matrix>, TensorError> {
        let n = observations.first().map_or(0, |o| o.n_agents);
        let mut state = self.lru.initial_state(n);
        let mut out = Vec::with_capacity(observations.len());
        for obs in observations {
            let tape = Tape::new();
            let p = self.params.bind_frozen(&tape);
            let (m, next) = self.magnitude_step(&p, obs, state.on(&tape))?;
            out.push(m.value());
            state = next.value();
        }
        Ok(out)
    }
}


impl Actor for MadPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Mad
    }

    fn params(&self) -> &Params {
        &self.params
    }

    fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    fn initial_carry(&self, n_agents: usize) -> CarryState {
        let lru = self.lru.initial_state(n_agents);
        CarryState(vec![lru.re, lru.im, Matrix::zeros(n_agents, self.config.rnn_hidden)])
    }

    fn step<'t>(&self, p: &Bound<'t>, obs: &Observation, carry: Carry<'t>) -> Result<ActorOutput<'t>, PolicyError> {
        let [re, im, hidden] = carry.0[..] else {
            return Err(PolicyError::Config(format!("MAD carry has 3 parts, got {}", carry.0.len())));
        };
        let (magnitude, lru_next) = self.magnitude_step(p, obs, StateVars { re, im })?;
        let (mu, log_std, hidden_next) = self.direction_step(p, obs, hidden)?;
        let u_base = obs.goal_error.scale(self.config.base_gain);
        Ok(ActorOutput {
            mu,
            log_std,
            magnitude,
            u_base,
            carry: Carry(vec![lru_next.re, lru_next.im, hidden_next]),
        })
    }
}
