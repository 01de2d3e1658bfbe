//! Gumbel noise, tempered Gumbel-Softmax and the two-logit Gumbel-Sigmoid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PedpError, Result};

/// Uniform draws are clamped to `[EPS, 1 - EPS]` before the double log.
pub const UNIFORM_EPS: f64 = 1e-10;

/// Temperatures for the policy, stop and output samplers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GumbelConfig {
    pub tau_policy: f64,
    pub tau_stop: f64,
    pub tau_out: f64,
    /// Straight-through hard samples on the forward pass.
    pub hard: bool,
}

impl Default for GumbelConfig {
    fn default() -> Self {
        GumbelConfig {
            tau_policy: 1.0,
            tau_stop: 1.0,
            tau_out: 1.0,
            hard: true,
        }
    }
}

impl GumbelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("tau_policy", self.tau_policy),
            ("tau_stop", self.tau_stop),
            ("tau_out", self.tau_out),
        ] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(PedpError::Config(format!("{name} must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

pub fn sample_gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.gen::<f64>().clamp(UNIFORM_EPS, 1.0 - UNIFORM_EPS);
    -(-u.ln()).ln()
}

pub fn gumbel_noise<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| sample_gumbel(rng)).collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-odds, with `p` clamped away from 0 and 1.
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

pub fn one_hot(index: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    v
}

/// Result of a Gumbel-Softmax draw.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelSample {
    /// `softmax((logits + g) / tau)`.
    pub soft: Vec<f64>,
    /// `argmax(logits + g)`.
    pub index: usize,
    pub hard: bool,
}

impl GumbelSample {
    /// Forward value: the one-hot of `index` when hard, the soft vector otherwise.
    pub fn value(&self) -> Vec<f64> {
        if self.hard {
            one_hot(self.index, self.soft.len())
        } else {
            self.soft.clone()
        }
    }
}

pub fn gumbel_softmax<R: Rng + ?Sized>(
    logits: &[f64],
    tau: f64,
    rng: &mut R,
    hard: bool,
) -> Result<GumbelSample> {
    check_softmax_input(logits, tau)?;
    let noise = gumbel_noise(logits.len(), rng);
    Ok(gumbel_softmax_with_noise(logits, &noise, tau, hard))
}

pub(crate) fn check_softmax_input(logits: &[f64], tau: f64) -> Result<()> {
    if logits.len() < 2 {
        return Err(PedpError::Config(format!(
            "gumbel-softmax needs at least 2 classes, got {}",
            logits.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(PedpError::Config(format!("temperature must be positive, got {tau}")));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(PedpError::NonFinite("gumbel-softmax logits".into()));
    }
    Ok(())
}

/// Deterministic core with caller-supplied noise.
pub fn gumbel_softmax_with_noise(logits: &[f64], noise: &[f64], tau: f64, hard: bool) -> GumbelSample {
    let perturbed: Vec<f64> = logits.iter().zip(noise).map(|(l, g)| l + g).collect();
    let scaled: Vec<f64> = perturbed.iter().map(|v| v / tau).collect();
    GumbelSample {
        soft: softmax(&scaled),
        index: argmax(&perturbed),
        hard,
    }
}

/// Two-logit softmax with logits `value + g1` and `0 + g2`.
pub fn gumbel_sigmoid<R: Rng + ?Sized>(values: &[f64], tau: f64, rng: &mut R) -> Vec<f64> {
    values
        .iter()
        .map(|&v| {
            let g1 = sample_gumbel(rng);
            let g2 = sample_gumbel(rng);
            gumbel_sigmoid_scalar(v, g1, g2, tau)
        })
        .collect()
}

pub fn gumbel_sigmoid_with_noise(values: &[f64], g1: &[f64], g2: &[f64], tau: f64) -> Vec<f64> {
    values
        .iter()
        .zip(g1.iter().zip(g2))
        .map(|(&v, (&a, &b))| gumbel_sigmoid_scalar(v, a, b, tau))
        .collect()
}

fn gumbel_sigmoid_scalar(value: f64, g1: f64, g2: f64, tau: f64) -> f64 {
    let a = (value + g1) / tau;
    let b = g2 / tau;
    let m = a.max(b);
    let ea = (a - m).exp();
    let eb = (b - m).exp();
    ea / (ea + eb)
}

/// `1` iff the entry is strictly above 0.5.
pub fn hard_binarize(probs: &[f64]) -> Vec<u8> {
    probs.iter().map(|&p| (p > 0.5) as u8).collect()
}
