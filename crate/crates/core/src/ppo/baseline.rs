use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::env::{ACTION_DIM, NODE_FEATURES};
use crate::gnn::{Gnn, GnnConfig, Support};
use crate::nn::Linear;
use crate::policy::{Actor, ActorOutput, Carry, CarryState, Observation, PolicyError, PolicyKind};
use crate::tensor::{Bound, Matrix, Params};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub gnn: GnnConfig,
    /// Fixed action scale: `u = action_scale * tanh(a)`.
    pub action_scale: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            gnn: GnnConfig {
                input_dim: NODE_FEATURES,
                layer_dims: vec![32, 32],
                output_dim: Some(32),
                output_bias: true,
                ..GnnConfig::default()
            },
            action_scale: 1.0,
            log_std_min: -2.0,
            log_std_max: 0.5,
        }
    }
}

/// Unconstrained GNN-Gaussian actor: no base controller, no magnitude path.
#[derive(Clone, Debug)]
pub struct BaselinePolicy {
    pub config: BaselineConfig,
    params: Params,
    gnn: Gnn,
    mu_head: Linear,
    std_head: Linear,
}

impl BaselinePolicy {
    pub fn new(config: &BaselineConfig, rng: &mut impl Rng) -> Result<Self, PolicyError> {
        if !(config.action_scale > 0.0 && config.action_scale.is_finite()) {
            return Err(PolicyError::Config(format!("action_scale must be positive, got {}", config.action_scale)));
        }
        if !(config.log_std_min < config.log_std_max) {
            return Err(PolicyError::Config("log_std_min must be below log_std_max".into()));
        }
        let mut params = Params::new();
        let gnn = Gnn::new(&mut params, "baseline.gnn", &config.gnn, rng)?;
        let h = gnn.output_dim();
        let mu_head = Linear::new(&mut params, "baseline.mu", h, ACTION_DIM, 0.1, true, rng)?;
        let std_head = Linear::new(&mut params, "baseline.log_std", h, ACTION_DIM, 0.1, true, rng)?;
        Ok(Self { config: config.clone(), params, gnn, mu_head, std_head })
    }

    pub fn with_params(config: &BaselineConfig, params: &Params) -> Result<Self, PolicyError> {
        let mut policy = Self::new(config, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
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
}

impl Actor for BaselinePolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Baseline
    }

    fn params(&self) -> &Params {
        &self.params
    }

    fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    fn initial_carry(&self, _n_agents: usize) -> CarryState {
        CarryState(Vec::new())
    }

    fn step<'t>(&self, p: &Bound<'t>, obs: &Observation, carry: Carry<'t>) -> Result<ActorOutput<'t>, PolicyError> {
        let tape = p.get(self.mu_head.weight).tape();
        let x = tape.constant(obs.features.clone());
        let h = self.gnn.forward(p, x, Support::Attention(&obs.graph))?.select_rows(obs.agent_rows.clone())?;
        let mu = self.mu_head.forward(p, h)?;
        let mid = 0.5 * (self.config.log_std_max + self.config.log_std_min);
        let half = 0.5 * (self.config.log_std_max - self.config.log_std_min);
        let log_std = self.std_head.forward(p, h)?.tanh()?.scale(half)?.offset(mid)?;
        let magnitude = tape.constant(Matrix::filled(obs.n_agents, ACTION_DIM, self.config.action_scale));
        Ok(ActorOutput { mu, log_std, magnitude, u_base: Matrix::zeros(obs.n_agents, ACTION_DIM), carry })
    }
}
