//! Perturbation bounds for GNN cascades and the closed loops they drive,
//! with randomized verification against measured deviations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Env, EnvConfig, EnvError};
use crate::lru::{Head, Lru, LruConfig};
use crate::nn::Activation;
use crate::policy::{act, ActionMode, Actor, MadConfig, MadPolicy, Observation, PolicyError};
use crate::tensor::{Matrix, Params, TensorError};

/// Slack allowed between a bound and its measurement (rounding only).
pub const BOUND_SLACK: f64 = 1e-9;

/// Fraction of the deviation energy allowed in the last tenth of a truncated horizon.
pub const TAIL_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum RobustnessError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("unstable test plant: coefficient {0} has modulus >= 1")]
    UnstablePlant(f64),
    #[error("perturbation has {got} layers, network has {expected}")]
    LayerCount { expected: usize, got: usize },
    #[error("{what} in layer {layer}: shape {got:?}, expected {expected:?}")]
    Shape { what: &'static str, layer: usize, expected: (usize, usize), got: (usize, usize) },
    #[error("norm order must be 1 or 2, got {0}")]
    NormOrder(f64),
    #[error("deviation tail still holds {fraction:.3e} of the energy after {steps} steps")]
    Truncation { fraction: f64, steps: usize },
}

fn check_order(p: f64) -> Result<(), RobustnessError> {
    if p == 1.0 || p == 2.0 {
        Ok(())
    } else {
        Err(RobustnessError::NormOrder(p))
    }
}

/// `H^{l+1} = σ(S H^l W^l + H^l B^l)` with a fixed support `S`.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnStack {
    pub support: Matrix,
    /// `(W^l, B^l)` per layer.
    pub layers: Vec<(Matrix, Matrix)>,
    pub activation: Activation,
}

/// Additive perturbation `(ΔS, ΔW^l, ΔB^l)` of a [`GnnStack`].
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    pub support: Matrix,
    pub layers: Vec<(Matrix, Matrix)>,
}

impl Perturbation {
    pub fn zero(stack: &GnnStack) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self { support: z(&stack.support), layers: stack.layers.iter().map(|(w, b)| (z(w), z(b))).collect() }
    }
}

impl GnnStack {
    pub fn forward(&self, x: &Matrix) -> Result<Matrix, RobustnessError> {
        let mut h = x.clone();
        for (w, b) in &self.layers {
            let pre = self.support.matmul(&h)?.matmul(w)?.add(&h.matmul(b)?)?;
            h = pre.map(|v| self.activation.apply_scalar(v));
        }
        Ok(h)
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        self.layers.last().map_or(input_dim, |(w, _)| w.cols())
    }

    /// `Ŝ = S + ΔS`, `Ŵ = W + ΔW`, `B̂ = B + ΔB`.
    pub fn perturbed(&self, delta: &Perturbation) -> Result<GnnStack, RobustnessError> {
        if delta.layers.len() != self.layers.len() {
            return Err(RobustnessError::LayerCount { expected: self.layers.len(), got: delta.layers.len() });
        }
        let shape = |what, layer, a: &Matrix, b: &Matrix| {
            if a.shape() == b.shape() {
                Ok(())
            } else {
                Err(RobustnessError::Shape { what, layer, expected: a.shape(), got: b.shape() })
            }
        };
        shape("support", 0, &self.support, &delta.support)?;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (l, ((w, b), (dw, db))) in self.layers.iter().zip(&delta.layers).enumerate() {
            shape("weight", l, w, dw)?;
            shape("skip", l, b, db)?;
            layers.push((w.add(dw)?, b.add(db)?));
        }
        Ok(GnnStack { support: self.support.add(&delta.support)?, layers, activation: self.activation })
    }

    /// `L_σ^L ∏ (‖S‖‖W^k‖ + ‖B^k‖)`.
    pub fn gain_bound(&self, p: f64) -> f64 {
        let s = self.support.norm_p(p);
        let lsig = self.activation.lipschitz();
        self.layers.iter().fold(1.0, |acc, (w, b)| acc * lsig * (s * w.norm_p(p) + b.norm_p(p)))
    }
}

/// Per-layer quantities entering the perturbation bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerTerms {
    /// `Δ_i = ‖ΔS‖‖ΔW^i‖ + ‖ΔS‖‖W^i‖ + ‖ΔB^i‖ + ‖S‖‖ΔW^i‖`
    pub deltas: Vec<f64>,
    /// `ρ_j = ‖S‖‖W^j‖ + ‖B^j‖`
    pub rhos: Vec<f64>,
    /// `ζ_v = ‖Ŝ‖‖Ŵ^v‖ + ‖B̂^v‖`
    pub zetas: Vec<f64>,
    pub lipschitz: f64,
}

/// Element-wise norms of a nominal network, its perturbation and the perturbed network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationNorms {
    pub support: f64,
    pub support_delta: f64,
    pub support_hat: f64,
    /// `(‖W‖, ‖ΔW‖, ‖Ŵ‖)` per layer.
    pub weights: Vec<(f64, f64, f64)>,
    /// `(‖B‖, ‖ΔB‖, ‖B̂‖)` per layer.
    pub skips: Vec<(f64, f64, f64)>,
    pub lipschitz: f64,
}

impl PerturbationNorms {
    pub fn new(nominal: &GnnStack, delta: &Perturbation, p: f64) -> Result<Self, RobustnessError> {
        check_order(p)?;
        let perturbed = nominal.perturbed(delta)?;
        let triple = |a: &Matrix, d: &Matrix, h: &Matrix| (a.norm_p(p), d.norm_p(p), h.norm_p(p));
        let layers = nominal.layers.iter().zip(&delta.layers).zip(&perturbed.layers);
        Ok(Self {
            support: nominal.support.norm_p(p),
            support_delta: delta.support.norm_p(p),
            support_hat: perturbed.support.norm_p(p),
            weights: layers.clone().map(|(((w, _), (dw, _)), (wh, _))| triple(w, dw, wh)).collect(),
            skips: layers.map(|(((_, b), (_, db)), (_, bh))| triple(b, db, bh)).collect(),
            lipschitz: nominal.activation.lipschitz(),
        })
    }

    pub fn terms(&self) -> LayerTerms {
        let (s, ds, sh) = (self.support, self.support_delta, self.support_hat);
        let mut terms =
            LayerTerms { deltas: Vec::new(), rhos: Vec::new(), zetas: Vec::new(), lipschitz: self.lipschitz };
        for (&(w, dw, wh), &(b, db, bh)) in self.weights.iter().zip(&self.skips) {
            terms.deltas.push(ds * dw + ds * w + db + s * dw);
            terms.rhos.push(s * w + b);
            terms.zetas.push(sh * wh + bh);
        }
        terms
    }
}

impl LayerTerms {
    pub fn new(nominal: &GnnStack, delta: &Perturbation, p: f64) -> Result<Self, RobustnessError> {
        Ok(PerturbationNorms::new(nominal, delta, p)?.terms())
    }

    pub fn layers(&self) -> usize {
        self.deltas.len()
    }

    /// `Σ_i Δ_i ∏_{j>i} ρ_j ∏_{v<i} ζ_v`
    pub fn coefficient(&self) -> f64 {
        (0..self.layers())
            .map(|i| {
                let after: f64 = self.rhos[i + 1..].iter().product();
                let before: f64 = self.zetas[..i].iter().product();
                self.deltas[i] * after * before
            })
            .sum()
    }

    pub fn zeta_product(&self) -> f64 {
        self.zetas.iter().product()
    }

    pub fn lipschitz_power(&self) -> f64 {
        self.lipschitz.powi(self.layers() as i32)
    }
}

/// `‖Φ(X) − Φ̂(X)‖ ≤ L_σ^L ‖X‖ Σ_i Δ_i ∏_{j>i} ρ_j ∏_{v<i} ζ_v`.
pub fn lemma1_bound(terms: &LayerTerms, input_norm: f64) -> f64 {
    terms.lipschitz_power() * input_norm * terms.coefficient()
}

/// Closed-loop trajectory deviation bound
/// `γ_F γ_LRU L_σ^L ‖w‖ (Σ_i Δ_i ∏ρ_j ∏ζ_v + 2 ∏ζ_k)`.
pub fn theorem2_bound(terms: &LayerTerms, gamma_f: f64, gamma_lru: f64, w_norm: f64) -> f64 {
    gamma_f * gamma_lru * terms.lipschitz_power() * w_norm * (terms.coefficient() + 2.0 * terms.zeta_product())
}

/// `‖Φ(X) − Φ̂(X)‖_p`.
pub fn empirical_gnn_deviation(
    nominal: &GnnStack,
    perturbed: &GnnStack,
    x: &Matrix,
    p: f64,
) -> Result<f64, RobustnessError> {
    check_order(p)?;
    Ok(nominal.forward(x)?.sub(&perturbed.forward(x)?)?.norm_p(p))
}

/// Elementwise diagonal plant `x_{t+1} = a ⊙ x_t + u_t + w_{t+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalPlant {
    a: Matrix,
}

impl DiagonalPlant {
    pub fn new(a: Matrix) -> Result<Self, RobustnessError> {
        if let Some(&bad) = a.data().iter().find(|v| !(v.abs() < 1.0)) {
            return Err(RobustnessError::UnstablePlant(bad));
        }
        Ok(Self { a })
    }

    /// `1 / (1 − max|a|)`, the ℓ1 norm of the slowest impulse response.
    pub fn gain(&self) -> f64 {
        1.0 / (1.0 - self.a.max_abs())
    }

    /// States `x_0..x_{T-1}` with `x_0 = w_0`.
    pub fn simulate(&self, us: &[Matrix], ws: &[Matrix]) -> Result<Vec<Matrix>, RobustnessError> {
        let mut xs: Vec<Matrix> = Vec::with_capacity(ws.len());
        for (t, w) in ws.iter().enumerate() {
            let x = match xs.last() {
                None => w.clone(),
                Some(prev) => prev.hadamard(&self.a)?.add(&us[t - 1])?.add(w)?,
            };
            xs.push(x);
        }
        Ok(xs)
    }
}

/// Magnitude path `|LRU(Φ(W_t))|` with its own parameter store.
pub struct MagnitudeOperator {
    pub gnn: GnnStack,
    pub lru: Lru,
    pub params: Params,
}

impl MagnitudeOperator {
    pub fn magnitudes(&self, gnn: &GnnStack, ws: &[Matrix]) -> Result<Vec<Matrix>, RobustnessError> {
        let zs: Result<Vec<Matrix>, _> = ws.iter().map(|w| gnn.forward(w)).collect();
        Ok(self.lru.rollout(&self.params, &zs?)?.into_iter().map(|y| y.map(f64::abs)).collect())
    }
}

/// One closed-loop comparison between a nominal and a perturbed magnitude GNN.
pub struct ClosedLoopCase {
    pub plant: DiagonalPlant,
    pub operator: MagnitudeOperator,
    pub delta: Perturbation,
    /// Disturbance sequence; zero-padded to the horizon.
    pub disturbance: Vec<Matrix>,
    pub horizon: usize,
    /// Pre-squash direction samples for the nominal and perturbed loops.
    pub directions: (Vec<Matrix>, Vec<Matrix>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosedLoopOutcome {
    pub bound: f64,
    pub measured: f64,
    pub w_norm: f64,
    pub gamma_f: f64,
    pub gamma_lru: f64,
    pub tail_fraction: f64,
    pub steps: usize,
}

fn seq_norm(xs: &[Matrix]) -> f64 {
    xs.iter().map(|x| x.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
}

impl ClosedLoopCase {
    fn padded(&self, horizon: usize) -> Vec<Matrix> {
        let shape = self.disturbance[0].shape();
        (0..horizon)
            .map(|t| self.disturbance.get(t).cloned().unwrap_or_else(|| Matrix::zeros(shape.0, shape.1)))
            .collect()
    }

    fn direction(samples: &[Matrix], t: usize) -> Matrix {
        samples[t % samples.len()].map(f64::tanh)
    }

    fn deviation(&self, horizon: usize) -> Result<(Vec<Matrix>, f64), RobustnessError> {
        let ws = self.padded(horizon);
        let perturbed = self.operator.gnn.perturbed(&self.delta)?;
        let run = |gnn: &GnnStack, dirs: &[Matrix]| -> Result<Vec<Matrix>, RobustnessError> {
            let ms = self.operator.magnitudes(gnn, &ws)?;
            let us: Result<Vec<Matrix>, _> =
                ms.iter().enumerate().map(|(t, m)| m.hadamard(&Self::direction(dirs, t))).collect();
            self.plant.simulate(&us?, &ws)
        };
        let xs = run(&self.operator.gnn, &self.directions.0)?;
        let xh = run(&perturbed, &self.directions.1)?;
        let diff: Result<Vec<Matrix>, _> = xs.iter().zip(&xh).map(|(a, b)| a.sub(b)).collect();
        Ok((diff?, seq_norm(&ws)))
    }

    /// Measures `‖x − x̂‖₂` over the horizon, doubling it (up to 8x) until the
    /// last tenth carries less than [`TAIL_TOLERANCE`] of the energy.
    pub fn verify(&self) -> Result<ClosedLoopOutcome, RobustnessError> {
        let mut horizon = self.horizon.max(self.disturbance.len() + 1);
        let limit = horizon * 8;
        loop {
            let (diff, w_norm) = self.deviation(horizon)?;
            let energy: Vec<f64> = diff.iter().map(|d| d.data().iter().map(|v| v * v).sum()).collect();
            let total: f64 = energy.iter().sum();
            let tail: f64 = energy[horizon - horizon / 10..].iter().sum();
            let tail_fraction = if total > 0.0 { tail / total } else { 0.0 };
            if tail_fraction < TAIL_TOLERANCE || horizon >= limit {
                if tail_fraction >= TAIL_TOLERANCE {
                    return Err(RobustnessError::Truncation { fraction: tail_fraction, steps: horizon });
                }
                let terms = LayerTerms::new(&self.operator.gnn, &self.delta, 2.0)?;
                let gamma_f = self.plant.gain();
                let gamma_lru = self.operator.lru.gain_bound(&self.operator.params);
                return Ok(ClosedLoopOutcome {
                    bound: theorem2_bound(&terms, gamma_f, gamma_lru, w_norm),
                    measured: total.sqrt(),
                    w_norm,
                    gamma_f,
                    gamma_lru,
                    tail_fraction,
                    steps: horizon,
                });
            }
            horizon *= 2;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Lemma1,
    Theorem2,
    Corollary1,
}

impl BoundKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundKind::Lemma1 => "lemma1",
            BoundKind::Theorem2 => "theorem2",
            BoundKind::Corollary1 => "corollary1",
        }
    }
}

/// Everything that went into one bound evaluation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialParams {
    pub layers: usize,
    pub nodes: usize,
    pub p: f64,
    pub support_norm: f64,
    pub weight_norms: Vec<f64>,
    pub skip_norms: Vec<f64>,
    pub lipschitz: f64,
    /// `‖X‖` for the lemma, `‖w‖` for the closed-loop checks.
    pub input_norm: f64,
    pub perturbation_scale: f64,
    pub gamma_f: Option<f64>,
    pub gamma_lru: Option<f64>,
    pub gamma_gnn: Option<f64>,
    pub independent_directions: bool,
    pub tail_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub bound: f64,
    pub measured: f64,
    pub margin: f64,
    pub params: TrialParams,
}

impl TrialRecord {
    pub fn new(trial: usize, bound: f64, measured: f64, params: TrialParams) -> Self {
        Self { trial, bound, measured, margin: bound - measured, params }
    }

    pub fn holds(&self) -> bool {
        self.margin >= -BOUND_SLACK && self.bound.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub seed: u64,
    /// Multiplier applied to every bound before comparison (1 normally).
    pub bound_scale: f64,
    pub trials: Vec<TrialRecord>,
    pub min_margin: f64,
    pub violations: usize,
}

impl BoundReport {
    pub fn new(kind: BoundKind, seed: u64, bound_scale: f64, trials: Vec<TrialRecord>) -> Self {
        let min_margin = trials.iter().map(|t| t.margin).fold(f64::INFINITY, f64::min);
        let violations = trials.iter().filter(|t| !t.holds()).count();
        Self { kind, seed, bound_scale, trials, min_margin, violations }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0 && !self.trials.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FuzzConfig {
    pub trials: usize,
    pub seed: u64,
    /// Scales every bound before comparing; 0.5 is the self-test that must fail.
    pub bound_scale: f64,
    /// Forces every random perturbation to zero.
    pub zero_perturbation: bool,
}

impl FuzzConfig {
    pub fn new(trials: usize, seed: u64) -> Self {
        Self { trials, seed, bound_scale: 1.0, zero_perturbation: false }
    }

    fn rng(&self, trial: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trial as u64 + 1);
        rng
    }
}

fn normal(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| std * rng.sample::<f64, _>(StandardNormal))
}

fn random_activation(rng: &mut impl Rng) -> Activation {
    match rng.random_range(0..3) {
        0 => Activation::LeakyRelu { slope: 0.1 },
        1 => Activation::Tanh,
        _ => Activation::Identity,
    }
}

/// Random sparse support: self loops plus each undirected edge with probability 1/2.
fn random_support(n: usize, rng: &mut impl Rng) -> (Matrix, Matrix) {
    let mut mask = Matrix::identity(n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(0.5) {
                mask.set(i, j, 1.0);
                mask.set(j, i, 1.0);
            }
        }
    }
    let s = Matrix::from_fn(n, n, |i, j| mask.get(i, j) * rng.sample::<f64, _>(StandardNormal) / (n as f64).sqrt());
    (s, mask)
}

fn random_stack(n: usize, dims: &[usize], rng: &mut impl Rng) -> (GnnStack, Matrix) {
    let (support, mask) = random_support(n, rng);
    let layers = dims
        .windows(2)
        .map(|d| {
            let std = 1.0 / (d[0] as f64).sqrt();
            (normal(d[0], d[1], std, rng), normal(d[0], d[1], 0.5 * std, rng))
        })
        .collect();
    (GnnStack { support, layers, activation: random_activation(rng) }, mask)
}

fn random_perturbation(stack: &GnnStack, mask: &Matrix, scale: f64, rng: &mut impl Rng) -> Perturbation {
    let n = stack.support.rows();
    let ds = normal(n, n, scale, rng).hadamard(mask).expect("square support");
    Perturbation {
        support: ds,
        layers: stack
            .layers
            .iter()
            .map(|(w, b)| (normal(w.rows(), w.cols(), scale, rng), normal(b.rows(), b.cols(), scale, rng)))
            .collect(),
    }
}

fn stack_params(stack: &GnnStack, terms: &LayerTerms, p: f64) -> TrialParams {
    TrialParams {
        layers: stack.layers.len(),
        nodes: stack.support.rows(),
        p,
        support_norm: stack.support.norm_p(p),
        weight_norms: stack.layers.iter().map(|(w, _)| w.norm_p(p)).collect(),
        skip_norms: stack.layers.iter().map(|(_, b)| b.norm_p(p)).collect(),
        lipschitz: terms.lipschitz,
        ..TrialParams::default()
    }
}

/// Scalar one-layer network where the lemma holds with equality:
/// `S=1, W=2, B=0, ΔS=ΔW=0.1`, identity activation, `X=1`.
pub fn lemma1_witness() -> (GnnStack, Perturbation, Matrix) {
    let stack = GnnStack {
        support: Matrix::scalar(1.0),
        layers: vec![(Matrix::scalar(2.0), Matrix::scalar(0.0))],
        activation: Activation::Identity,
    };
    let delta = Perturbation {
        support: Matrix::scalar(0.1),
        layers: vec![(Matrix::scalar(0.1), Matrix::scalar(0.0))],
    };
    (stack, delta, Matrix::scalar(1.0))
}

fn lemma1_record(
    trial: usize,
    stack: &GnnStack,
    delta: &Perturbation,
    x: &Matrix,
    p: f64,
    scale: f64,
    bound_scale: f64,
) -> Result<TrialRecord, RobustnessError> {
    let terms = LayerTerms::new(stack, delta, p)?;
    let input_norm = x.norm_p(p);
    let bound = bound_scale * lemma1_bound(&terms, input_norm);
    let measured = empirical_gnn_deviation(stack, &stack.perturbed(delta)?, x, p)?;
    let params = TrialParams { input_norm, perturbation_scale: scale, ..stack_params(stack, &terms, p) };
    Ok(TrialRecord::new(trial, bound, measured, params))
}

/// Trial 0 is the tight scalar witness; the rest draw `L ∈ {1,2,3}`,
/// `N ∈ {2..6}`, `p ∈ {1,2}` and perturbation scales in `[1e-3, 1]`.
pub fn fuzz_lemma1(cfg: &FuzzConfig) -> Result<BoundReport, RobustnessError> {
    let trials: Result<Vec<_>, _> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            if trial == 0 {
                let (stack, delta, x) = lemma1_witness();
                return lemma1_record(0, &stack, &delta, &x, 1.0, 0.1, cfg.bound_scale);
            }
            let mut rng = cfg.rng(trial);
            let layers = rng.random_range(1..=3);
            let n = rng.random_range(2..=6);
            let p = if rng.random_bool(0.5) { 1.0 } else { 2.0 };
            let dims: Vec<usize> = (0..=layers).map(|_| rng.random_range(1..=4)).collect();
            let scale = if cfg.zero_perturbation { 0.0 } else { 10f64.powf(rng.random_range(-3.0..=0.0)) };
            let (stack, mask) = random_stack(n, &dims, &mut rng);
            let delta = random_perturbation(&stack, &mask, scale, &mut rng);
            let x = normal(n, dims[0], 10f64.powf(rng.random_range(-1.0..=1.0)), &mut rng);
            lemma1_record(trial, &stack, &delta, &x, p, scale, cfg.bound_scale)
        })
        .collect();
    Ok(BoundReport::new(BoundKind::Lemma1, cfg.seed, cfg.bound_scale, trials?))
}

/// Random closed-loop case; every fourth trial has a zero perturbation, and
/// trials alternate in pairs between independent and shared direction samples.
pub fn random_closed_loop_case(
    trial: usize,
    zero_perturbation: bool,
    rng: &mut impl Rng,
) -> Result<ClosedLoopCase, RobustnessError> {
    let n = rng.random_range(2..=5);
    let d = rng.random_range(1..=2);
    let layers = rng.random_range(1..=3);
    let mut dims: Vec<usize> = (0..=layers).map(|_| rng.random_range(1..=4)).collect();
    dims[0] = d;
    let (gnn, mask) = random_stack(n, &dims, rng);
    let scale = if zero_perturbation || trial % 4 == 0 { 0.0 } else { 10f64.powf(rng.random_range(-3.0..=0.0)) };
    let delta = random_perturbation(&gnn, &mask, scale, rng);
    let lru_cfg = LruConfig {
        input_dim: *dims.last().expect("at least one layer"),
        state_dim: rng.random_range(1..=6),
        readout_dim: 4,
        output_dim: d,
        head: if rng.random_bool(0.5) { Head::Mlp { hidden: 4 } } else { Head::Identity },
        ..LruConfig::default()
    };
    let mut params = Params::new();
    let lru = Lru::new(&mut params, "lru", &lru_cfg, rng)?;
    let a = Matrix::from_fn(n, d, |_, _| rng.random_range(-0.9..=0.9));
    let plant = DiagonalPlant::new(a)?;
    let active = rng.random_range(5..=30);
    let w_scale = 10f64.powf(rng.random_range(-1.0..=1.0));
    let disturbance: Vec<Matrix> = (0..active).map(|_| normal(n, d, w_scale, rng)).collect();
    let horizon = 400;
    let first: Vec<Matrix> = (0..horizon).map(|_| normal(n, d, 1.0, rng)).collect();
    let second = if (trial / 2) % 2 == 0 { (0..horizon).map(|_| normal(n, d, 1.0, rng)).collect() } else { first.clone() };
    Ok(ClosedLoopCase {
        plant,
        operator: MagnitudeOperator { gnn, lru, params },
        delta,
        disturbance,
        horizon,
        directions: (first, second),
    })
}

fn closed_loop_record(trial: usize, case: &ClosedLoopCase, bound_scale: f64) -> Result<TrialRecord, RobustnessError> {
    let out = case.verify()?;
    let terms = LayerTerms::new(&case.operator.gnn, &case.delta, 2.0)?;
    let scale = case.delta.layers.iter().map(|(w, _)| w.max_abs()).fold(case.delta.support.max_abs(), f64::max);
    let params = TrialParams {
        input_norm: out.w_norm,
        perturbation_scale: scale,
        gamma_f: Some(out.gamma_f),
        gamma_lru: Some(out.gamma_lru),
        independent_directions: case.directions.0 != case.directions.1,
        tail_fraction: Some(out.tail_fraction),
        ..stack_params(&case.operator.gnn, &terms, 2.0)
    };
    Ok(TrialRecord::new(trial, bound_scale * out.bound, out.measured, params))
}

pub fn fuzz_theorem2(cfg: &FuzzConfig) -> Result<BoundReport, RobustnessError> {
    let trials: Result<Vec<_>, _> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = cfg.rng(trial);
            let case = random_closed_loop_case(trial, cfg.zero_perturbation, &mut rng)?;
            closed_loop_record(trial, &case, cfg.bound_scale)
        })
        .collect();
    Ok(BoundReport::new(BoundKind::Theorem2, cfg.seed, cfg.bound_scale, trials?))
}

/// Options for the in-environment gain-chain check.
#[derive(Clone, Debug, PartialEq)]
pub struct GainChainConfig {
    pub steps: usize,
    pub noise_std: f64,
    pub agents: std::ops::RangeInclusive<usize>,
}

impl Default for GainChainConfig {
    fn default() -> Self {
        Self { steps: 1000, noise_std: 0.01, agents: 2..=6 }
    }
}

/// Runs a freshly initialised MAD policy in the particle world and compares
/// `‖u − u_base‖₂ / ‖w‖₂` against `γ(LRU) γ(Φ)`.
pub fn gain_chain_trial(
    trial: usize,
    seed: u64,
    chain: &GainChainConfig,
    bound_scale: f64,
) -> Result<TrialRecord, RobustnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64 + 1);
    let n = rng.random_range(chain.agents.clone());
    let mut cfg = MadConfig::default();
    cfg.lru.r_max = rng.random_range(0.5..0.999);
    cfg.lru.r_min = cfg.lru.r_max * rng.random_range(0.5..=1.0);
    cfg.lru.init_scale = 10f64.powf(rng.random_range(-0.5..=0.5));
    cfg.magnitude_gnn.init_gain = 10f64.powf(rng.random_range(-0.5..=0.5));
    let policy = MadPolicy::new(&cfg, &mut rng)?;
    let env_cfg = EnvConfig { noise_std: chain.noise_std, episode_len: chain.steps, ..EnvConfig::default().with_agents(n) };
    let (mut env, mut w) = Env::new(env_cfg, &mut rng)?;
    let mut carry = policy.initial_carry(n);
    let (mut dev_sq, mut w_sq) = (0.0, 0.0);
    while !env.done() {
        w_sq += w.iter().flatten().map(|v| v * v).sum::<f64>();
        let obs = Observation::new(env.state(), env.graph(), &w)?;
        let (action, next) = act(&policy, &obs, &carry, ActionMode::Sample, &mut rng)?;
        dev_sq += action.u.sub(&action.u_base)?.data().iter().map(|v| v * v).sum::<f64>();
        w = env.step(&action.actions(), &mut rng)?.disturbance;
        carry = next;
    }
    let nodes = n + env.config.n_obstacles;
    let gamma_lru = policy.lru.gain_bound(policy.params());
    let gamma_gnn = policy.magnitude_gain_bound(nodes) / gamma_lru;
    let params = TrialParams {
        layers: cfg.magnitude_gnn.layer_dims.len(),
        nodes,
        p: 2.0,
        input_norm: w_sq.sqrt(),
        gamma_lru: Some(gamma_lru),
        gamma_gnn: Some(gamma_gnn),
        independent_directions: true,
        lipschitz: cfg.magnitude_gnn.activation.lipschitz(),
        ..TrialParams::default()
    };
    let ratio = dev_sq.sqrt() / w_sq.sqrt();
    Ok(TrialRecord::new(trial, bound_scale * gamma_lru * gamma_gnn, ratio, params))
}

pub fn fuzz_gain_chain(cfg: &FuzzConfig, chain: &GainChainConfig) -> Result<BoundReport, RobustnessError> {
    let trials: Result<Vec<_>, _> =
        (0..cfg.trials).into_par_iter().map(|t| gain_chain_trial(t, cfg.seed, chain, cfg.bound_scale)).collect();
    Ok(BoundReport::new(BoundKind::Corollary1, cfg.seed, cfg.bound_scale, trials?))
}
