use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::NODE_FEATURES;
use crate::gnn::{Gnn, GnnConfig, Support};
use crate::nn::{Activation, Linear};
use crate::policy::Observation;
use crate::tensor::{Bound, Matrix, Params, Tape, TensorError, Var};

/// Node features, goal offset `p_goal - p`, its length and the fraction of the episode elapsed.
pub const CRITIC_FEATURES: usize = NODE_FEATURES + 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticConfig {
    pub gnn: GnnConfig,
    pub hidden: usize,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            gnn: GnnConfig {
                input_dim: CRITIC_FEATURES,
                layer_dims: vec![32, 32],
                output_dim: Some(32),
                output_bias: true,
                ..GnnConfig::default()
            },
            hidden: 64,
        }
    }
}

/// Centralised value function: graph attention, mean pooling over agents, MLP.
#[derive(Clone, Debug)]
pub struct Critic {
    pub config: CriticConfig,
    params: Params,
    gnn: Gnn,
    hidden: Linear,
    out: Linear,
}

impl Critic {
    pub fn new(config: &CriticConfig, rng: &mut impl Rng) -> Result<Self, TensorError> {
        let mut params = Params::new();
        let gnn_cfg = GnnConfig { input_dim: CRITIC_FEATURES, ..config.gnn.clone() };
        let gnn = Gnn::new(&mut params, "critic.gnn", &gnn_cfg, rng)?;
        let hidden = Linear::new(&mut params, "critic.hidden", gnn.output_dim(), config.hidden, 1.0, true, rng)?;
        let out = Linear::new(&mut params, "critic.out", config.hidden, 1, 0.1, true, rng)?;
        Ok(Self { config: CriticConfig { gnn: gnn_cfg, ..config.clone() }, params, gnn, hidden, out })
    }

    pub fn with_params(config: &CriticConfig, params: &Params) -> Result<Self, TensorError> {
        let mut critic = Self::new(config, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))?;
        critic.params.copy_from(params)?;
        Ok(critic)
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    /// `V(x_t)` as a 1x1 tape value; `progress` is `t / T`.
    pub fn value<'t>(&self, p: &Bound<'t>, tape: &'t Tape, obs: &Observation, progress: f64) -> Result<Var<'t>, TensorError> {
        let x = critic_input(obs, progress);
        let h = self.gnn.forward(p, tape.constant(x), Support::Attention(&obs.graph))?;
        let n = obs.n_agents as f64;
        let pool = tape.constant(Matrix::from_fn(1, obs.graph.n, |_, j| {
            if j < obs.n_agents {
                1.0 / n
            } else {
                0.0
            }
        }));
        let pooled = pool.matmul(h)?;
        let hidden = Activation::Tanh.apply(self.hidden.forward(p, pooled)?)?;
        self.out.forward(p, hidden)
    }

    pub fn evaluate(&self, obs: &Observation, progress: f64) -> Result<f64, TensorError> {
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape);
        self.value(&p, &tape, obs, progress)?.item()
    }
}

fn critic_input(obs: &Observation, progress: f64) -> Matrix {
    let f = &obs.features;
    Matrix::from_fn(f.rows(), CRITIC_FEATURES, |r, c| {
        let agent = r < obs.n_agents;
        let (dx, dy) = if agent { (f.get(r, 4) - f.get(r, 2), f.get(r, 5) - f.get(r, 3)) } else { (0.0, 0.0) };
        match c - c.min(NODE_FEATURES) {
            _ if c < NODE_FEATURES => f.get(r, c),
            0 => dx,
            1 => dy,
            2 => dx.hypot(dy),
            _ => progress,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Env, EnvConfig};
    use crate::graph::Permutation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn value_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let critic = Critic::new(&CriticConfig::default(), &mut rng).unwrap();
        let (env, w0) = Env::new(EnvConfig::default().with_agents(4), &mut rng).unwrap();
        let perm = Permutation::new(vec![3, 1, 0, 2]).unwrap();
        let mut state = env.state().clone();
        state.agents = perm.order().iter().map(|&i| env.state().agents[i]).collect();
        state.goals = perm.order().iter().map(|&i| env.state().goals[i]).collect();
        let penv = Env::from_state(env.config.clone(), state).unwrap();
        let a = critic.evaluate(&Observation::new(env.state(), env.graph(), &w0).unwrap(), 0.3).unwrap();
        let b = critic.evaluate(&Observation::new(penv.state(), penv.graph(), &w0).unwrap(), 0.3).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
