use super::{ModelError, Policy};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam with decoupled weight decay, applied to matrix parameters only.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    decay: Vec<bool>,
}

impl AdamW {
    pub fn new(policy: &Policy, config: AdamWConfig) -> Self {
        let n = policy.num_params();
        AdamW {
            config,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
            decay: policy.layout.decay_mask(),
        }
    }

    pub(crate) fn from_state(policy: &Policy, config: AdamWConfig, step: u64, m: Vec<f64>, v: Vec<f64>) -> Self {
        AdamW {
            config,
            step,
            m,
            v,
            decay: policy.layout.decay_mask(),
        }
    }

    /// One update. A non-finite gradient leaves everything untouched.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<(), ModelError> {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(ModelError::NonFiniteGradient);
        }
        let c = self.config;
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            let mut upd = mhat / (vhat.sqrt() + c.eps);
            if self.decay[i] {
                upd += c.weight_decay * params[i];
            }
            params[i] -= lr * upd;
        }
        Ok(())
    }
}

/// Linear warm-up to `base_lr` over `warmup_steps`, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarmupSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
}

impl WarmupSchedule {
    /// Rate for the 1-based `step`.
    pub fn lr(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.base_lr
        } else {
            self.base_lr * step as f64 / self.warmup_steps as f64
        }
    }
}
