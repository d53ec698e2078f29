//! Adam with additive Gaussian gradient noise that decays with the epoch.
//!
//! Each step perturbs the gradient, `g' = g + s(e) * N` with
//! `s(e) = noise_std0 / (1 + e)^gamma`, then applies the bias-corrected Adam
//! update of Kingma & Ba with `g'`.

use crate::error::{Result, SsiError};
use crate::rng::{streams, Stream};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub noise_std0: f64,
    pub noise_decay: f64,
    pub seed: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8, noise_std0: 1e-3, noise_decay: 1.0, seed: 0 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.noise_std0 >= 0.0
            && self.noise_decay >= 0.0;
        if !ok {
            return Err(SsiError::param(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }

    pub fn noise_std(&self, epoch: usize) -> f64 {
        self.noise_std0 / (1.0 + epoch as f64).powf(self.noise_decay)
    }
}

#[derive(Clone, Debug)]
pub struct OptimState {
    config: AdamConfig,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    rng: Stream,
}

impl OptimState {
    pub fn new(config: AdamConfig, n_params: usize) -> Result<Self> {
        config.validate()?;
        Ok(OptimState {
            config,
            lr: config.lr,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            rng: Stream::new(config.seed, streams::GRAD_NOISE),
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Override the step size, e.g. from a decay schedule.
    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One noisy Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], epoch: usize) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(SsiError::param(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        let c = self.config;
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let std = c.noise_std(epoch);
        for i in 0..params.len() {
            let g = if std > 0.0 { grads[i] + std * self.rng.normal() } else { grads[i] };
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + c.eps);
        }
        Ok(())
    }
}
