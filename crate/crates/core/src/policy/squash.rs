//! Scalar pieces of the squashed-Gaussian density
//! `u = u_base + m * tanh(a)`, `a ~ N(mu, sigma^2)`.
//!
//! The tape op and the standalone log-prob functions both go through here so
//! the rollout-time and update-time values agree bit for bit.

use crate::tensor::softplus;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Deviations closer than this to the edge of `(-m, m)` are treated as saturated.
pub const SATURATION_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Element {
    /// Regular case: `a = atanh((u - u_base) / m)`.
    Interior { a: f64 },
    /// The deviation lies on or outside the support edge for this magnitude.
    Saturated { a: f64 },
    /// Zero magnitude; the stored pre-squash sample carries the density.
    ZeroMagnitude { a: f64 },
}

impl Element {
    pub fn presquash(&self) -> f64 {
        match *self {
            Element::Interior { a } | Element::Saturated { a } | Element::ZeroMagnitude { a } => a,
        }
    }
}

/// Recovers the pre-squash value for one action dimension.
///
/// When `magnitude` is bit-identical to the one used at sampling time the
/// stored sample is returned directly, which makes the unchanged-parameter
/// ratio exactly one.
pub fn element(deviation: f64, presquash: f64, stored_magnitude: f64, magnitude: f64) -> Element {
    if magnitude == 0.0 {
        return Element::ZeroMagnitude { a: presquash };
    }
    if magnitude.to_bits() == stored_magnitude.to_bits() {
        return Element::Interior { a: presquash };
    }
    let z = deviation / magnitude;
    if z.abs() < 1.0 - SATURATION_EPS {
        Element::Interior { a: z.atanh() }
    } else {
        let edge = (1.0 - SATURATION_EPS).copysign(z);
        Element::Saturated { a: edge.atanh() }
    }
}

/// `log(1 - tanh(a)^2)` without cancellation for large `|a|`.
pub fn log_one_minus_tanh_sq(a: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - a - softplus(-2.0 * a))
}

pub fn gaussian_log_density(a: f64, mu: f64, log_std: f64) -> f64 {
    let s = (a - mu) / log_std.exp();
    -0.5 * s * s - log_std - HALF_LN_2PI
}

/// Log-density contribution of one action dimension.
pub fn log_prob_element(e: &Element, mu: f64, log_std: f64, magnitude: f64) -> f64 {
    match *e {
        Element::ZeroMagnitude { a } => gaussian_log_density(a, mu, log_std),
        Element::Interior { a } | Element::Saturated { a } => {
            gaussian_log_density(a, mu, log_std) - magnitude.ln() - log_one_minus_tanh_sq(a)
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Partials {
    pub mu: f64,
    pub log_std: f64,
    pub magnitude: f64,
}

pub fn log_prob_partials(e: &Element, mu: f64, log_std: f64, magnitude: f64) -> Partials {
    let sigma = log_std.exp();
    let a = e.presquash();
    let s = (a - mu) / sigma;
    let d_mu = s / sigma;
    let d_log_std = s * s - 1.0;
    let d_m = match *e {
        Element::ZeroMagnitude { .. } => 0.0,
        Element::Saturated { .. } => -1.0 / magnitude,
        Element::Interior { a } => {
            let d_a = -s / sigma + 2.0 * a.tanh();
            let sech_sq = log_one_minus_tanh_sq(a).exp();
            let da_dm = -a.tanh() / (magnitude * sech_sq);
            -1.0 / magnitude + d_a * da_dm
        }
    };
    Partials { mu: d_mu, log_std: d_log_std, magnitude: d_m }
}
