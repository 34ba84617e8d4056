//! Small building blocks shared by the policy, critic and baseline networks.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tensor::{Bound, Matrix, ParamId, Params, TensorError, Unary, Var};

pub fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Matrix {
    let dist = Normal::new(0.0, std.max(0.0)).expect("finite std");
    Matrix::from_fn(rows, cols, |_, _| dist.sample(rng))
}

/// `N(0, gain^2 / fan_in)` initialisation.
pub fn scaled_init(rows: usize, cols: usize, gain: f64, rng: &mut impl Rng) -> Matrix {
    normal_matrix(rows, cols, gain / (rows.max(1) as f64).sqrt(), rng)
}

/// Activations with `σ(0) = 0` and `|σ(x)| ≤ L_σ |x|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Tanh,
    Identity,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyRelu { slope: 0.1 }
    }
}

impl Activation {
    pub fn lipschitz(self) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => slope.abs().max(1.0),
            Activation::Tanh | Activation::Identity => 1.0,
        }
    }

    pub fn apply<'t>(self, x: Var<'t>) -> Result<Var<'t>, TensorError> {
        match self {
            Activation::LeakyRelu { slope } => x.map(Unary::LeakyRelu(slope)),
            Activation::Tanh => x.tanh(),
            Activation::Identity => Ok(x),
        }
    }

    pub fn apply_scalar(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => Unary::LeakyRelu(slope).apply(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

/// Affine map `x W + b` applied row-wise; `b` is optional.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        params: &mut Params,
        name: &str,
        input: usize,
        output: usize,
        gain: f64,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self, TensorError> {
        let weight = params.insert(format!("{name}.weight"), scaled_init(input, output, gain, rng))?;
        let bias = if bias {
            Some(params.insert(format!("{name}.bias"), Matrix::zeros(1, output))?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>, TensorError> {
        let y = x.matmul(p.get(self.weight))?;
        match self.bias {
            Some(b) => y.add_row(p.get(b)),
            None => Ok(y),
        }
    }
}
