//! Linear Recurrent Unit with a static readout head.
//!
//! Complex quantities are stored as separate real and imaginary matrices.
//! Signals are row-major: each row is one agent, so a single set of weights
//! is shared across agents.
//!
//! ```text
//! y_t     = NN(Re(ξ_t C) + z_t D) + z_t F
//! ξ_{t+1} = ξ_t ⊙ λ + (z_t B) ⊙ Γ
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{normal_matrix, scaled_init, Activation};
use crate::tensor::{Bound, Matrix, ParamId, Params, Tape, TensorError, Unary, Var};

/// Added to `exp(ν)` so that `|λ| < 1` survives floating point even for very negative `ν`.
pub const MIN_DECAY: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    /// `leaky(a W1) W2`, no offsets.
    Mlp { hidden: usize },
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LruConfig {
    pub input_dim: usize,
    pub state_dim: usize,
    /// Width of `Re(ξC) + zD`, the head input.
    pub readout_dim: usize,
    pub output_dim: usize,
    pub head: Head,
    pub head_activation: Activation,
    pub r_min: f64,
    pub r_max: f64,
    pub max_phase: f64,
    /// Standard deviation multiplier for `C`, `D`, `F` and the head.
    pub init_scale: f64,
}

impl Default for LruConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            state_dim: 16,
            readout_dim: 16,
            output_dim: 2,
            head: Head::Mlp { hidden: 16 },
            head_activation: Activation::default(),
            r_min: 0.5,
            r_max: 0.95,
            max_phase: std::f64::consts::PI / 10.0,
            init_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Lru {
    pub config: LruConfig,
    pub nu: ParamId,
    pub theta: ParamId,
    pub b_re: ParamId,
    pub b_im: ParamId,
    pub c_re: ParamId,
    pub c_im: ParamId,
    pub d: ParamId,
    pub f: ParamId,
    pub head: Option<(ParamId, ParamId)>,
}

/// `ν` giving modulus `r` (`0 < r < 1`).
pub fn nu_for_radius(r: f64) -> f64 {
    (-r.ln() - MIN_DECAY).ln()
}

pub fn decay_rate(nu: f64) -> f64 {
    nu.exp() + MIN_DECAY
}

/// `|λ|` for a raw `ν`.
pub fn modulus(nu: f64) -> f64 {
    (-decay_rate(nu)).exp()
}

/// `sqrt(1 - |λ|^2)` for a raw `ν`.
pub fn normalization(nu: f64) -> f64 {
    (-(-2.0 * decay_rate(nu)).exp_m1()).sqrt()
}

/// Eigenvalue data recorded once per tape and reused by every step.
#[derive(Clone, Copy)]
pub struct Coeffs<'t> {
    pub lam_re: Var<'t>,
    pub lam_im: Var<'t>,
    pub gamma: Var<'t>,
}

#[derive(Clone, Copy)]
pub struct StateVars<'t> {
    pub re: Var<'t>,
    pub im: Var<'t>,
}

/// Concrete recurrent state, one row per agent.
#[derive(Clone, Debug, PartialEq)]
pub struct LruState {
    pub re: Matrix,
    pub im: Matrix,
}

impl LruState {
    pub fn zeros(rows: usize, state_dim: usize) -> Self {
        Self { re: Matrix::zeros(rows, state_dim), im: Matrix::zeros(rows, state_dim) }
    }

    pub fn on<'t>(&self, tape: &'t Tape) -> StateVars<'t> {
        StateVars { re: tape.constant(self.re.clone()), im: tape.constant(self.im.clone()) }
    }

    pub fn select_rows(&self, idx: &[usize]) -> Result<Self, TensorError> {
        Ok(Self { re: self.re.select_rows(idx)?, im: self.im.select_rows(idx)? })
    }

    pub fn max_abs(&self) -> f64 {
        self.re.max_abs().max(self.im.max_abs())
    }
}

impl<'t> StateVars<'t> {
    pub fn value(&self) -> LruState {
        LruState { re: self.re.value(), im: self.im.value() }
    }
}

impl Lru {
    pub fn new(
        params: &mut Params,
        prefix: &str,
        config: &LruConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, TensorError> {
        let n = config.state_dim;
        let (lo, hi) = (config.r_min.min(config.r_max), config.r_max.max(config.r_min));
        let nu = Matrix::from_fn(1, n, |_, _| nu_for_radius(rng.random_range(lo..=hi)));
        let theta = Matrix::from_fn(1, n, |_, _| rng.random::<f64>() * config.max_phase);
        let in_std = (0.5 / config.input_dim.max(1) as f64).sqrt();
        let k = config.init_scale;
        let (h, out) = (config.readout_dim, config.output_dim);
        let head_in = match config.head {
            Head::Mlp { .. } => h,
            Head::Identity => out,
        };
        let head = match config.head {
            Head::Mlp { hidden } => Some((
                params.insert(format!("{prefix}.head.w1"), scaled_init(h, hidden, k, rng))?,
                params.insert(format!("{prefix}.head.w2"), scaled_init(hidden, out, k, rng))?,
            )),
            Head::Identity => None,
        };
        Ok(Self {
            config: LruConfig { readout_dim: head_in, ..config.clone() },
            nu: params.insert(format!("{prefix}.nu"), nu)?,
            theta: params.insert(format!("{prefix}.theta"), theta)?,
            b_re: params.insert(format!("{prefix}.b_re"), normal_matrix(config.input_dim, n, in_std, rng))?,
            b_im: params.insert(format!("{prefix}.b_im"), normal_matrix(config.input_dim, n, in_std, rng))?,
            c_re: params.insert(format!("{prefix}.c_re"), scaled_init(n, head_in, k, rng))?,
            c_im: params.insert(format!("{prefix}.c_im"), scaled_init(n, head_in, k, rng))?,
            d: params.insert(format!("{prefix}.d"), scaled_init(config.input_dim, head_in, 0.1 * k, rng))?,
            f: params.insert(format!("{prefix}.f"), scaled_init(config.input_dim, out, 0.1 * k, rng))?,
            head,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.config.state_dim
    }

    pub fn initial_state(&self, rows: usize) -> LruState {
        LruState::zeros(rows, self.config.state_dim)
    }

    /// Records `λ` and `Γ` on the tape.
    pub fn coeffs<'t>(&self, p: &Bound<'t>) -> Result<Coeffs<'t>, TensorError> {
        let rate = p.get(self.nu).exp()?.offset(MIN_DECAY)?;
        let modulus = rate.neg()?.exp()?;
        let theta = p.get(self.theta);
        let lam_re = modulus.mul(theta.map(Unary::Cos)?)?;
        let lam_im = modulus.mul(theta.map(Unary::Sin)?)?;
        let gamma = rate.scale(-2.0)?.map(Unary::Expm1)?.neg()?.sqrt()?;
        Ok(Coeffs { lam_re, lam_im, gamma })
    }

    /// One step: returns `y_t` and `ξ_{t+1}`.
    pub fn step<'t>(
        &self,
        p: &Bound<'t>,
        c: &Coeffs<'t>,
        z: Var<'t>,
        state: StateVars<'t>,
    ) -> Result<(Var<'t>, StateVars<'t>), TensorError> {
        let readout = state
            .re
            .matmul(p.get(self.c_re))?
            .sub(state.im.matmul(p.get(self.c_im))?)?
            .add(z.matmul(p.get(self.d))?)?;
        let head = match self.head {
            Some((w1, w2)) => self.config.head_activation.apply(readout.matmul(p.get(w1))?)?.matmul(p.get(w2))?,
            None => readout,
        };
        let y = head.add(z.matmul(p.get(self.f))?)?;

        let drive_re = z.matmul(p.get(self.b_re))?.mul_row(c.gamma)?;
        let drive_im = z.matmul(p.get(self.b_im))?.mul_row(c.gamma)?;
        let re = state
            .re
            .mul_row(c.lam_re)?
            .sub(state.im.mul_row(c.lam_im)?)?
            .add(drive_re)?;
        let im = state
            .re
            .mul_row(c.lam_im)?
            .add(state.im.mul_row(c.lam_re)?)?
            .add(drive_im)?;
        Ok((y, StateVars { re, im }))
    }

    /// Runs the recurrence from the zero state over `zs`.
    pub fn rollout(&self, params: &Params, zs: &[Matrix]) -> Result<Vec<Matrix>, TensorError> {
        let rows = zs.first().map_or(0, Matrix::rows);
        let mut state = self.initial_state(rows);
        let mut ys = Vec::with_capacity(zs.len());
        for z in zs {
            let tape = Tape::new();
            let p = params.bind_frozen(&tape);
            let c = self.coeffs(&p)?;
            let (y, next) = self.step(&p, &c, tape.constant(z.clone()), state.on(&tape))?;
            ys.push(y.value());
            state = next.value();
        }
        Ok(ys)
    }

    /// `max_i |λ_i|`.
    pub fn max_modulus(&self, params: &Params) -> f64 {
        params.get(self.nu).data().iter().map(|&nu| modulus(nu)).fold(0.0, f64::max)
    }

    /// Lipschitz constant of the head, `‖W1‖ ‖W2‖ L_σ`, or 1 for the identity head.
    pub fn head_lipschitz(&self, params: &Params) -> f64 {
        match self.head {
            Some((w1, w2)) => {
                params.get(w1).frobenius() * params.get(w2).frobenius() * self.config.head_activation.lipschitz()
            }
            None => 1.0,
        }
    }

    /// Certified ℓ2 gain
    /// `L_NN (‖D‖ + ‖C‖ ‖ΓB‖ / (1 - max|λ|)) + ‖F‖` with Frobenius norms.
    pub fn gain_bound(&self, params: &Params) -> f64 {
        let nus = params.get(self.nu).data();
        let gammas: Vec<f64> = nus.iter().map(|&nu| normalization(nu)).collect();
        let gb = |b: &Matrix| Matrix::from_fn(b.rows(), b.cols(), |r, c| b.get(r, c) * gammas[c]);
        let gb_norm = complex_frobenius(&gb(params.get(self.b_re)), &gb(params.get(self.b_im)));
        let c_norm = complex_frobenius(params.get(self.c_re), params.get(self.c_im));
        let d_norm = params.get(self.d).frobenius();
        let f_norm = params.get(self.f).frobenius();
        let rho = self.max_modulus(params);
        self.head_lipschitz(params) * (d_norm + c_norm * gb_norm / (1.0 - rho)) + f_norm
    }

    /// Places mode `i` at `r e^{iφ}`.
    pub fn set_eigenvalue(&self, params: &mut Params, i: usize, r: f64, phase: f64) {
        params.get_mut(self.nu).data_mut()[i] = nu_for_radius(r);
        params.get_mut(self.theta).data_mut()[i] = phase;
    }
}

fn complex_frobenius(re: &Matrix, im: &Matrix) -> f64 {
    re.frobenius().hypot(im.frobenius())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_lru(lambda: f64, head: Head) -> (Lru, Params) {
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = LruConfig {
            input_dim: 1,
            state_dim: 1,
            readout_dim: 1,
            output_dim: 1,
            head,
            ..LruConfig::default()
        };
        let lru = Lru::new(&mut params, "lru", &cfg, &mut rng).unwrap();
        lru.set_eigenvalue(&mut params, 0, lambda, 0.0);
        *params.get_mut(lru.b_re) = Matrix::scalar(1.0);
        *params.get_mut(lru.b_im) = Matrix::scalar(0.0);
        *params.get_mut(lru.c_re) = Matrix::scalar(1.0);
        *params.get_mut(lru.c_im) = Matrix::scalar(0.0);
        *params.get_mut(lru.d) = Matrix::scalar(0.0);
        *params.get_mut(lru.f) = Matrix::scalar(0.0);
        (lru, params)
    }

    fn random_lru(seed: u64) -> (Lru, Params) {
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = LruConfig { input_dim: 3, state_dim: 5, readout_dim: 4, output_dim: 2, ..LruConfig::default() };
        let lru = Lru::new(&mut params, "lru", &cfg, &mut rng).unwrap();
        (lru, params)
    }

    #[test]
    fn first_state_is_normalized_input() {
        let (lru, params) = scalar_lru(0.5, Head::Identity);
        let tape = Tape::new();
        let p = params.bind_frozen(&tape);
        let c = lru.coeffs(&p).unwrap();
        let (_, next) = lru.step(&p, &c, tape.constant(Matrix::scalar(1.0)), LruState::zeros(1, 1).on(&tape)).unwrap();
        assert!((next.re.item().unwrap() - 0.75f64.sqrt()).abs() < 1e-12);
        assert_eq!(next.im.item().unwrap(), 0.0);
    }

    #[test]
    fn impulse_response_decays_geometrically() {
        let (lru, params) = scalar_lru(0.5, Head::Identity);
        let mut zs = vec![Matrix::scalar(0.0); 12];
        zs[0] = Matrix::scalar(1.0);
        let ys = lru.rollout(&params, &zs).unwrap();
        assert_eq!(ys[0].item().unwrap(), 0.0);
        let gamma = 0.75f64.sqrt();
        for (t, y) in ys.iter().enumerate().skip(1) {
            let expected = 0.5f64.powi(t as i32 - 1) * gamma;
            assert!((y.item().unwrap() - expected).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn scalar_gain_bound() {
        let (lru, params) = scalar_lru(0.5, Head::Identity);
        assert!((lru.gain_bound(&params) - 0.75f64.sqrt() / 0.5).abs() < 1e-9);
    }

    #[test]
    fn zero_readouts_give_zero_bound() {
        let (lru, mut params) = random_lru(1);
        for id in [lru.c_re, lru.c_im, lru.d, lru.f] {
            let m = params.get(id);
            *params.get_mut(id) = Matrix::zeros(m.rows(), m.cols());
        }
        assert_eq!(lru.gain_bound(&params), 0.0);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let (lru, params) = random_lru(2);
        let ys = lru.rollout(&params, &vec![Matrix::zeros(4, 3); 20]).unwrap();
        assert!(ys.iter().all(|y| y.max_abs() == 0.0));
    }

    #[test]
    fn rollout_is_causal() {
        let (lru, params) = random_lru(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let zs: Vec<Matrix> = (0..60).map(|_| normal_matrix(2, 3, 1.0, &mut rng)).collect();
        let long = lru.rollout(&params, &zs).unwrap();
        let short = lru.rollout(&params, &zs[..6]).unwrap();
        assert_eq!(&long[..6], &short[..]);
    }

    #[test]
    fn empirical_gain_below_bound() {
        for seed in 0..10 {
            let (lru, params) = random_lru(seed);
            let bound = lru.gain_bound(&params);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            for _ in 0..10 {
                let len = 40;
                let decay: f64 = rng.random_range(0.5..1.0);
                let zs: Vec<Matrix> = (0..400)
                    .map(|t| {
                        if t < len {
                            normal_matrix(1, 3, decay.powi(t as i32), &mut rng)
                        } else {
                            Matrix::zeros(1, 3)
                        }
                    })
                    .collect();
                let ys = lru.rollout(&params, &zs).unwrap();
                let zn: f64 = zs.iter().map(|z| z.frobenius().powi(2)).sum::<f64>().sqrt();
                let yn: f64 = ys.iter().map(|y| y.frobenius().powi(2)).sum::<f64>().sqrt();
                assert!(yn <= bound * zn, "seed {seed}: {yn} > {bound} * {zn}");
            }
        }
    }

    #[test]
    fn zero_input_state_decays_at_max_modulus() {
        let (lru, params) = random_lru(5);
        let rho = lru.max_modulus(&params);
        let tape = Tape::new();
        let p = params.bind_frozen(&tape);
        let c = lru.coeffs(&p).unwrap();
        let init = LruState { re: Matrix::ones(1, 5), im: Matrix::ones(1, 5) };
        let mut s = init.on(&tape);
        let z = tape.constant(Matrix::zeros(1, 3));
        let n0 = init.re.frobenius().hypot(init.im.frobenius());
        for t in 1..=50 {
            s = lru.step(&p, &c, z, s).unwrap().1;
            let n = s.re.value().frobenius().hypot(s.im.value().frobenius());
            assert!(n <= rho.powi(t) * n0 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn radius_helper_round_trips() {
        for r in [0.01, 0.5, 0.9, 0.999] {
            assert!((modulus(nu_for_radius(r)) - r).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (lru, params) = random_lru(6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let zs: Vec<Matrix> = (0..5).map(|_| normal_matrix(2, 3, 1.0, &mut rng)).collect();
        let report = crate::tensor::finite_diff_check(&params, 1e-6, |tape, p| {
            let c = lru.coeffs(p)?;
            let mut s = lru.initial_state(2).on(tape);
            let mut total = tape.constant(Matrix::scalar(0.0));
            for z in &zs {
                let (y, next) = lru.step(p, &c, tape.constant(z.clone()), s)?;
                total = total.add(y.tanh()?.sum()?)?;
                s = next;
            }
            Ok(total)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
