use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Agent rollouts per iteration, summed over environments.
    pub batch_size: usize,
    /// Unroll horizon, steps.
    pub horizon: usize,
    pub iterations: u64,
    pub seed: u64,
    pub lr: f64,
    /// Floor of the cosine schedule.
    pub lr_min: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Per-step attenuation of state adjoints; 1 disables it.
    pub grad_decay: f64,
    /// Global gradient-norm clip; 0 disables it.
    pub grad_clip: f64,
    /// Rotation augmentation half-range, radians; 0 disables it.
    pub psi_max: f64,
    /// Agents per environment, inclusive range.
    pub agents_min: usize,
    pub agents_max: usize,
    /// Held-out evaluation every this many iterations; 0 disables it.
    pub eval_every: u64,
    /// Environments in the held-out batch.
    pub eval_envs: usize,
    /// Checkpoint every this many iterations; the final state is always saved.
    pub checkpoint_every: u64,
    /// Rollout worker threads; 0 uses every logical core.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            horizon: 165,
            iterations: 50_000,
            seed: 0,
            lr: 1e-3,
            lr_min: 1e-5,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_decay: 0.4,
            grad_clip: 10.0,
            psi_max: 0.75,
            agents_min: 4,
            agents_max: 8,
            eval_every: 0,
            eval_envs: 8,
            checkpoint_every: 500,
            workers: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        if self.agents_min < 2 || self.agents_max < self.agents_min {
            return Err(format!(
                "agents per environment must satisfy 2 <= agents_min <= agents_max, got [{}, {}]",
                self.agents_min, self.agents_max
            ));
        }
        if self.batch_size < self.agents_min {
            return Err(format!("batch_size {} is smaller than agents_min {}", self.batch_size, self.agents_min));
        }
        if !(self.grad_decay > 0.0 && self.grad_decay <= 1.0) {
            return Err(format!("grad_decay must lie in (0, 1], got {}", self.grad_decay));
        }
        let checks = [
            ("lr", self.lr),
            ("lr_min", self.lr_min),
            ("weight_decay", self.weight_decay),
            ("eps", self.eps),
            ("grad_clip", self.grad_clip),
            ("psi_max", self.psi_max),
        ];
        for (name, v) in checks {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(format!("{} must be finite and non-negative, got {}", name, v));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(format!("betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2));
        }
        if self.lr_min > self.lr {
            return Err(format!("lr_min {} exceeds lr {}", self.lr_min, self.lr));
        }
        Ok(())
    }

    /// Decay factor for the tape hook, or `None` when attenuation is off.
    pub fn decay(&self) -> Option<f64> {
        (self.grad_decay < 1.0).then_some(self.grad_decay)
    }
}
