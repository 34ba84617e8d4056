use crate::tensor::{Matrix, Params};

/// Adam with bias correction over a fixed parameter set.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    /// Per-parameter learning-rate multipliers.
    scales: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(params: &Params, lr: f64) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|(_, m)| Matrix::zeros(m.rows(), m.cols())).collect();
        let scales = vec![1.0; zeros.len()];
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: zeros.clone(), v: zeros, scales, t: 0 }
    }

    /// Multiplies the learning rate of every parameter whose name starts with `prefix`.
    pub fn scale_group(mut self, params: &Params, prefix: &str, scale: f64) -> Self {
        for (k, (name, _)) in params.iter().enumerate() {
            if name.starts_with(prefix) {
                self.scales[k] *= scale;
            }
        }
        self
    }

    /// Descends along `grads`, given in parameter declaration order.
    pub fn step(&mut self, params: &mut Params, grads: &[Matrix]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let g = grads[k].data();
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            let p = params.get_mut(id).data_mut();
            let lr = self.lr * self.scales[k];
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Global L2 norm across gradient matrices.
pub fn global_norm(grads: &[&[Matrix]]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|m| m.data().iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Scales every gradient so the global norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [&mut Vec<Matrix>], max_norm: f64) -> f64 {
    let norm = global_norm(&grads.iter().map(|g| g.as_slice()).collect::<Vec<_>>());
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            for m in g.iter_mut() {
                *m = m.scale(k);
            }
        }
    }
    norm
}

/// Clips the parameters named `prefix*` and all others as two separate groups.
///
/// Returns the pre-clip norm over both groups together.
pub fn clip_split_norm(params: &Params, grads: &mut [Matrix], prefix: &str, max_norm: f64) -> f64 {
    let in_group: Vec<bool> = params.iter().map(|(name, _)| name.starts_with(prefix)).collect();
    let mut total = 0.0;
    for side in [true, false] {
        let sq: f64 = grads
            .iter()
            .zip(&in_group)
            .filter(|(_, &g)| g == side)
            .map(|(m, _)| m.data().iter().map(|x| x * x).sum::<f64>())
            .sum();
        total += sq;
        let norm = sq.sqrt();
        if norm > max_norm && norm > 0.0 {
            let k = max_norm / norm;
            for (m, _) in grads.iter_mut().zip(&in_group).filter(|(_, &g)| g == side) {
                *m = m.scale(k);
            }
        }
    }
    total.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Params::new();
        let id = p.insert("w", Matrix::from_rows(&[[1.0, -1.0]])).unwrap();
        let mut adam = Adam::new(&p, 0.1);
        adam.step(&mut p, &[Matrix::from_rows(&[[3.0, -0.5]])]);
        let w = p.get(id);
        assert!((w.get(0, 0) - 0.9).abs() < 1e-6);
        assert!((w.get(0, 1) + 0.9).abs() < 1e-6);
    }

    #[test]
    fn group_scale_applies_by_prefix() {
        let mut p = Params::new();
        let a = p.insert("magnitude.w", Matrix::scalar(1.0)).unwrap();
        let b = p.insert("direction.w", Matrix::scalar(1.0)).unwrap();
        let mut adam = Adam::new(&p, 0.1).scale_group(&p, "magnitude.", 0.5);
        adam.step(&mut p, &[Matrix::scalar(1.0), Matrix::scalar(1.0)]);
        assert!((p.get(a).item().unwrap() - 0.95).abs() < 1e-6);
        assert!((p.get(b).item().unwrap() - 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = Params::new();
        let id = p.insert("w", Matrix::scalar(5.0)).unwrap();
        let mut adam = Adam::new(&p, 0.1);
        for _ in 0..500 {
            let g = p.get(id).scale(2.0);
            adam.step(&mut p, &[g]);
        }
        assert!(p.get(id).item().unwrap().abs() < 1e-2);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut a = vec![Matrix::from_rows(&[[3.0]])];
        let mut b = vec![Matrix::from_rows(&[[4.0]])];
        let norm = clip_global_norm(&mut [&mut a, &mut b], 0.5);
        assert_eq!(norm, 5.0);
        assert!((global_norm(&[&a, &b]) - 0.5).abs() < 1e-12);
        assert!((a[0].item().unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn split_clipping_treats_groups_independently() {
        let mut params = Params::new();
        params.insert("magnitude.w", Matrix::zeros(1, 1)).unwrap();
        params.insert("direction.w", Matrix::zeros(1, 2)).unwrap();
        let mut grads = vec![Matrix::scalar(1000.0), Matrix::from_rows(&[[0.3, 0.4]])];
        let norm = clip_split_norm(&params, &mut grads, "magnitude.", 1.0);
        assert!((norm - (1000.0f64.powi(2) + 0.25).sqrt()).abs() < 1e-9);
        assert_eq!(grads[0].data(), &[1.0]);
        assert_eq!(grads[1].data(), &[0.3, 0.4]);
    }
}
