//! Parameter initialization and the Adam optimizer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Grads, ParamId, ParamStore};

/// Glorot-uniform draws: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<R: Rng + ?Sized>(n: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-a..a)).collect()
}

/// Adds a `[fan_in, fan_out]` weight with Glorot init.
pub fn add_weight<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> ParamId {
    let data = glorot(fan_in * fan_out, fan_in, fan_out, rng);
    store.add(name, &[fan_in, fan_out], data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    settings: OptimizerSettings,
    m: Grads,
    v: Grads,
    step: u64,
}

impl Adam {
    pub fn new(settings: OptimizerSettings, params: &ParamStore) -> Self {
        Adam {
            settings,
            m: Grads::zeros_like(params),
            v: Grads::zeros_like(params),
            step: 0,
        }
    }

    /// Clips `grads` in place, then applies one update.
    pub fn step(&mut self, params: &mut ParamStore, grads: &mut Grads) {
        let s = self.settings;
        if s.clip_norm > 0.0 {
            let norm = grads.global_norm();
            if norm > s.clip_norm {
                grads.scale(s.clip_norm / norm);
            }
        }
        self.step += 1;
        let bc1 = 1.0 - s.beta1.powi(self.step as i32);
        let bc2 = 1.0 - s.beta2.powi(self.step as i32);
        let ids: Vec<ParamId> = params.ids().collect();
        for id in ids {
            let g = grads.get(id);
            let m = self.m.get_mut(id);
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = s.beta1 * *mi + (1.0 - s.beta1) * gi;
            }
            let v = self.v.get_mut(id);
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = s.beta2 * *vi + (1.0 - s.beta2) * gi * gi;
            }
            let (m, v) = (self.m.get(id), self.v.get(id));
            for ((p, mi), vi) in params.get_mut(id).iter_mut().zip(m).zip(v) {
                *p -= s.learning_rate * (mi / bc1) / ((vi / bc2).sqrt() + s.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p = ParamStore::new();
        let id = p.add("x", &[2], vec![3.0, -2.0]);
        let mut opt = Adam::new(
            OptimizerSettings {
                learning_rate: 0.05,
                ..Default::default()
            },
            &p,
        );
        for _ in 0..2000 {
            let mut g = Grads::zeros_like(&p);
            let x = p.get(id).to_vec();
            g.get_mut(id).copy_from_slice(&[2.0 * (x[0] - 1.0), 2.0 * (x[1] + 0.5)]);
            opt.step(&mut p, &mut g);
        }
        assert!((p.get(id)[0] - 1.0).abs() < 1e-3);
        assert!((p.get(id)[1] + 0.5).abs() < 1e-3);
    }

    #[test]
    fn clipping_bounds_the_update_norm() {
        let mut p = ParamStore::new();
        let id = p.add("x", &[1], vec![0.0]);
        let mut opt = Adam::new(OptimizerSettings::default(), &p);
        let mut g = Grads::zeros_like(&p);
        g.get_mut(id)[0] = 1e6;
        opt.step(&mut p, &mut g);
        assert!((g.global_norm() - 5.0).abs() < 1e-9);
    }
}
