use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::stitch::PanoramaFrame;
use super::PerceptionError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Near clamp, meters.
    pub d_min: f64,
    /// Far clamp, meters.
    pub d_max: f64,
    /// Std of additive noise in transformed units.
    pub noise_std: f64,
    /// Max-pool window applied after the transform.
    pub pool: usize,
    /// β in ψ(d) = β/d − γ; defaults to `d_min`.
    pub beta: Option<f64>,
    /// γ in ψ(d) = β/d − γ; defaults to `d_min / d_max`.
    pub gamma: Option<f64>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { d_min: 0.3, d_max: 24.0, noise_std: 0.02, pool: 2, beta: None, gamma: None }
    }
}

impl PreprocessConfig {
    pub fn validate(&self, width: usize, height: usize) -> Result<(), PerceptionError> {
        if !(self.d_min > 0.0 && self.d_max > self.d_min) {
            return Err(PerceptionError::Config(format!(
                "need 0 < d_min < d_max, got {} and {}",
                self.d_min, self.d_max
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(PerceptionError::Config(format!("noise_std must be non-negative, got {}", self.noise_std)));
        }
        if self.pool == 0 || width % self.pool != 0 || height % self.pool != 0 {
            return Err(PerceptionError::Config(format!(
                "pool {} does not divide panorama {}×{}",
                self.pool, width, height
            )));
        }
        Ok(())
    }

    /// β in ψ(d) = β/d − γ.
    pub fn beta(&self) -> f64 {
        self.beta.unwrap_or(self.d_min)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or(self.d_min / self.d_max)
    }

    /// Inverse-depth transform of a clamped range.
    pub fn psi(&self, d: f64) -> f64 {
        self.beta() / d.clamp(self.d_min, self.d_max) - self.gamma()
    }
}

/// Network input: `pool`-max-pooled ψ(clamp(P)) + noise, row-major
/// `[H / pool, W / pool]`. No randomness is drawn when `noise_std` is zero.
pub fn preprocess<R: Rng>(frame: &PanoramaFrame, cfg: &PreprocessConfig, rng: &mut R) -> Vec<f64> {
    let (w, h, k) = (frame.width, frame.height, cfg.pool);
    let mut x: Vec<f64> = frame.depth.iter().map(|&d| cfg.psi(d)).collect();
    if cfg.noise_std > 0.0 {
        for v in x.iter_mut() {
            *v += rng.sample::<f64, _>(StandardNormal) * cfg.noise_std;
        }
    }
    if k == 1 {
        return x;
    }
    let (oh, ow) = (h / k, w / k);
    let mut out = Vec::with_capacity(oh * ow);
    for i in 0..oh {
        for j in 0..ow {
            let mut m = f64::NEG_INFINITY;
            for di in 0..k {
                for dj in 0..k {
                    m = m.max(x[(i * k + di) * w + j * k + dj]);
                }
            }
            out.push(m);
        }
    }
    out
}
