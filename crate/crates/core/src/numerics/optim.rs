use serde::{Deserialize, Serialize};

use super::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW-style) decay applied as `w -= lr * wd * w`.
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Adam over every tensor of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamStore, cfg: AdamConfig) -> Self {
        let zeros = |p: &ParamStore| p.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Self { cfg, m: zeros(params), v: zeros(params), t: 0 }
    }

    /// Applies one update from the accumulated gradients. Tensors without a
    /// gradient are left untouched.
    pub fn step(&mut self, params: &mut ParamStore) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (i, t) in params.tensors_mut().iter_mut().enumerate() {
            let Some(g) = t.grad().map(<[f64]>::to_vec) else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in t.values_mut().iter_mut().enumerate() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *w -= c.lr * (mh / (vh.sqrt() + c.eps) + c.weight_decay * *w);
            }
        }
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut ParamStore, max_norm: f64) -> f64 {
    let norm =
        params.tensors().iter().filter_map(|t| t.grad()).flat_map(|g| g.iter()).map(|x| x * x).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for t in params.tensors_mut() {
            if let Some(g) = t.grad().map(|g| g.iter().map(|x| x * s).collect::<Vec<_>>()) {
                t.zero_grad();
                t.accumulate_grad(&g).expect("same length");
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Tape, Tensor};

    #[test]
    fn adam_minimises_quadratic() {
        let mut ps = ParamStore::new();
        ps.add("x", Tensor::new(vec![2], vec![3.0, -2.0]).unwrap());
        let mut opt = Adam::new(&ps, AdamConfig { lr: 0.05, ..Default::default() });
        for _ in 0..2000 {
            let mut tape = Tape::new();
            let vars = ps.bind(&mut tape);
            let sq = tape.square(vars[0]).unwrap();
            let loss = tape.sum(sq).unwrap();
            tape.backward(loss).unwrap();
            ps.zero_grad();
            ps.accumulate_grads(&tape, &vars).unwrap();
            opt.step(&mut ps);
        }
        assert!(ps.get(0).values().iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut ps = ParamStore::new();
        ps.add("x", Tensor::zeros(vec![2]));
        ps.tensors_mut()[0].accumulate_grad(&[3.0, 4.0]).unwrap();
        let n = clip_grad_norm(&mut ps, 1.0);
        assert_eq!(n, 5.0);
        let g = ps.get(0).grad().unwrap();
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
    }
}
