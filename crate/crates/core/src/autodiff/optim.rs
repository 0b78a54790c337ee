//! Parameter initialization, Adam with decoupled weight decay, and the
//! one-cycle learning-rate schedule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Uniform in `±sqrt(6 / (fan_in + fan_out))` with `fan_in = rows`,
/// `fan_out = cols`.
pub fn xavier_uniform(rows: usize, cols: usize, seed: u64) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::from_vec(rows, cols, data).expect("shape matches by construction")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros = |t: &Tensor| Tensor::zeros(t.rows(), t.cols());
        Self {
            config,
            step: 0,
            m: params.tensors().map(zeros).collect(),
            v: params.tensors().map(zeros).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update at learning rate `lr`. Weight decay is
    /// decoupled: parameters shrink by `1 - lr * wd` before the Adam step.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "adam: {} grads for {} parameters",
                grads.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let decay = 1.0 - lr * weight_decay;
        for (i, p) in params.tensors_mut().enumerate() {
            let g = &grads[i];
            if g.shape() != p.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (k, w) in p.data_mut().iter_mut().enumerate() {
                let gk = g.data()[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *w = *w * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

pub const ONE_CYCLE_WARMUP_DIV: f64 = 25.0;
pub const ONE_CYCLE_PEAK_AT: f64 = 0.3;
pub const ONE_CYCLE_FINAL_DIV: f64 = 1e4;

/// Linear warmup from `max_lr / 25` to `max_lr` over the first 30% of steps,
/// then cosine decay to `max_lr / 1e4` at `step == total_steps`.
pub fn one_cycle_lr(step: usize, total_steps: usize, max_lr: f64) -> f64 {
    let start = max_lr / ONE_CYCLE_WARMUP_DIV;
    let end = max_lr / ONE_CYCLE_FINAL_DIV;
    if total_steps == 0 {
        return start;
    }
    let t = step.min(total_steps) as f64;
    let peak = ONE_CYCLE_PEAK_AT * total_steps as f64;
    if t <= peak {
        if peak == 0.0 {
            return max_lr;
        }
        start + (max_lr - start) * t / peak
    } else {
        let progress = (t - peak) / (total_steps as f64 - peak);
        end + (max_lr - end) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}
