//! Graph transformer (UniMP-style) layers and the generic support-matrix GNN.
//!
//! A layer computes `H' = σ(S H W + H B)`. In attention mode `S` is the
//! masked softmax attention matrix recomputed from each layer's input; in
//! fixed-support mode one caller-supplied `S` is shared by all layers.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::GraphContext;
use crate::nn::{scaled_init, Activation};
use crate::tensor::{Bound, Matrix, ParamId, Params, Tape, TensorError, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnnConfig {
    pub input_dim: usize,
    /// Output width of each message-passing layer; its length is the layer count.
    pub layer_dims: Vec<usize>,
    /// Final affine projection `f_out`, if any.
    pub output_dim: Option<usize>,
    /// Whether `f_out` carries an offset. Must stay false where `Φ(0) = 0` is needed.
    pub output_bias: bool,
    pub activation: Activation,
    pub attention: bool,
    /// Initialisation gain for `W` and `B`.
    pub init_gain: f64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            input_dim: 8,
            layer_dims: vec![16, 16],
            output_dim: Some(16),
            output_bias: true,
            activation: Activation::default(),
            attention: true,
            init_gain: 0.7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub query: ParamId,
    pub key: ParamId,
    /// Maps the 2-D edge feature into key space (`2 x d`).
    pub edge: ParamId,
    pub dim: usize,
}

#[derive(Clone, Debug)]
pub struct GnnLayer {
    pub weight: ParamId,
    pub skip: ParamId,
    pub attention: Option<AttentionParams>,
}

#[derive(Clone, Debug)]
pub struct OutputMap {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

/// What plays the role of the support matrix in each layer.
#[derive(Clone, Copy, Debug)]
pub enum Support<'a> {
    Attention(&'a GraphContext),
    Fixed(&'a Matrix),
}

#[derive(Clone, Debug)]
pub struct Gnn {
    pub config: GnnConfig,
    pub layers: Vec<GnnLayer>,
    pub output: Option<OutputMap>,
}

impl Gnn {
    pub fn new(
        params: &mut Params,
        prefix: &str,
        config: &GnnConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, TensorError> {
        let mut layers = Vec::with_capacity(config.layer_dims.len());
        let mut in_dim = config.input_dim;
        for (l, &out_dim) in config.layer_dims.iter().enumerate() {
            let name = format!("{prefix}.layer{l}");
            let weight =
                params.insert(format!("{name}.weight"), scaled_init(in_dim, out_dim, config.init_gain, rng))?;
            let skip = params.insert(format!("{name}.skip"), scaled_init(in_dim, out_dim, config.init_gain, rng))?;
            let attention = if config.attention {
                Some(AttentionParams {
                    query: params.insert(format!("{name}.attn_query"), scaled_init(in_dim, out_dim, 1.0, rng))?,
                    key: params.insert(format!("{name}.attn_key"), scaled_init(in_dim, out_dim, 1.0, rng))?,
                    edge: params.insert(format!("{name}.attn_edge"), scaled_init(2, out_dim, 1.0, rng))?,
                    dim: out_dim,
                })
            } else {
                None
            };
            layers.push(GnnLayer { weight, skip, attention });
            in_dim = out_dim;
        }
        let output = match config.output_dim {
            Some(out) => Some(OutputMap {
                weight: params.insert(format!("{prefix}.out.weight"), scaled_init(in_dim, out, 1.0, rng))?,
                bias: if config.output_bias {
                    Some(params.insert(format!("{prefix}.out.bias"), Matrix::zeros(1, out))?)
                } else {
                    None
                },
            }),
            None => None,
        };
        Ok(Self { config: config.clone(), layers, output })
    }

    pub fn output_dim(&self) -> usize {
        self.config
            .output_dim
            .or_else(|| self.config.layer_dims.last().copied())
            .unwrap_or(self.config.input_dim)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// `Y = Φ(X; S, θ)`: all message-passing layers followed by `f_out`.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        x: Var<'t>,
        support: Support<'_>,
    ) -> Result<Var<'t>, TensorError> {
        let tape = x.tape();
        let fixed = match support {
            Support::Fixed(s) => Some(tape.constant(s.clone())),
            Support::Attention(_) => None,
        };
        let mut h = x;
        for layer in &self.layers {
            let s = match (support, &layer.attention, fixed) {
                (_, _, Some(s)) => s,
                (Support::Attention(ctx), Some(attn), None) => unimp_attention(p, h, ctx, attn)?,
                (Support::Attention(_), None, None) => {
                    return Err(TensorError::ShapeMismatch {
                        op: "gnn_forward: attention mode without attention parameters",
                        left: (0, 0),
                        right: (0, 0),
                    })
                }
                (Support::Fixed(_), _, None) => unreachable!(),
            };
            h = gnn_layer(h, s, p.get(layer.weight), p.get(layer.skip), self.config.activation)?;
        }
        match &self.output {
            Some(out) => {
                let y = h.matmul(p.get(out.weight))?;
                match out.bias {
                    Some(b) => y.add_row(p.get(b)),
                    None => Ok(y),
                }
            }
            None => Ok(h),
        }
    }

    /// Forward pass outside of any training tape.
    pub fn eval(&self, params: &Params, x: &Matrix, support: Support<'_>) -> Result<Matrix, TensorError> {
        let tape = Tape::new();
        let p = params.bind_frozen(&tape);
        let xv = tape.constant(x.clone());
        Ok(self.forward(&p, xv, support)?.value())
    }

    /// `(‖W^l‖, ‖B^l‖)` per layer under the element-wise p-norm.
    pub fn layer_norms(&self, params: &Params, p: f64) -> Vec<(f64, f64)> {
        self.layers
            .iter()
            .map(|l| (params.get(l.weight).norm_p(p), params.get(l.skip).norm_p(p)))
            .collect()
    }

    /// Certified input-to-output gain `L_σ^L ∏ (‖S‖‖W^k‖ + ‖B^k‖)`, times
    /// `‖W_out‖` when a zero-offset output projection is present.
    ///
    /// Returns `f64::INFINITY` if `f_out` has an offset (no finite gain through the origin).
    pub fn gain_bound(&self, params: &Params, support_norm: f64, p: f64) -> f64 {
        let lsig = self.config.activation.lipschitz();
        let mut g = gnn_gain_bound(&self.layer_norms(params, p), support_norm, lsig);
        if let Some(out) = &self.output {
            if out.bias.is_some() {
                return f64::INFINITY;
            }
            g *= params.get(out.weight).norm_p(p);
        }
        g
    }

    /// Copies of `(W^l, B^l)` for every layer.
    pub fn layer_matrices(&self, params: &Params) -> Vec<(Matrix, Matrix)> {
        self.layers.iter().map(|l| (params.get(l.weight).clone(), params.get(l.skip).clone())).collect()
    }
}

/// `L_σ^L ∏_k (‖S‖‖W^k‖ + ‖B^k‖)` from per-layer norms.
pub fn gnn_gain_bound(layer_norms: &[(f64, f64)], support_norm: f64, lipschitz: f64) -> f64 {
    layer_norms
        .iter()
        .fold(1.0, |acc, &(w, b)| acc * lipschitz * (support_norm * w + b))
}

/// Upper bound on the element-wise p-norm of any `n x n` row-stochastic
/// attention matrix: `n^{1/p}`.
pub fn attention_support_norm(n: usize, p: f64) -> f64 {
    (n as f64).powf(1.0 / p)
}

/// `σ(S H W + H B)`.
pub fn gnn_layer<'t>(
    h: Var<'t>,
    s: Var<'t>,
    w: Var<'t>,
    b: Var<'t>,
    activation: Activation,
) -> Result<Var<'t>, TensorError> {
    let message = s.matmul(h)?.matmul(w)?;
    let skip = h.matmul(b)?;
    activation.apply(message.add(skip)?)
}

/// Attention matrix with entries
/// `softmax_j((W_1 x_i)·(W_2 x_j + W_3 e_ij) / √d)` over each neighbourhood.
pub fn unimp_attention<'t>(
    p: &Bound<'t>,
    x: Var<'t>,
    ctx: &GraphContext,
    attn: &AttentionParams,
) -> Result<Var<'t>, TensorError> {
    let tape = x.tape();
    let n = ctx.n;
    let q = x.matmul(p.get(attn.query))?;
    let k = x.matmul(p.get(attn.key))?;
    let node_scores = q.matmul(k.transpose()?)?;
    // (W_1 x_i)·(W_3 e_ij) = Σ_c e_ij[c] (q W_3^T)[i, c]
    let proj = q.matmul(p.get(attn.edge).transpose()?)?;
    let ones = tape.constant(Matrix::ones(1, n));
    let ex = proj.slice_cols(0, 1)?.matmul(ones)?.mul(tape.constant(ctx.rel_x.clone()))?;
    let ey = proj.slice_cols(1, 1)?.matmul(ones)?.mul(tape.constant(ctx.rel_y.clone()))?;
    let scores = node_scores.add(ex)?.add(ey)?.scale(1.0 / (attn.dim as f64).sqrt())?;
    tape.masked_softmax(scores, Arc::clone(&ctx.mask))
}
