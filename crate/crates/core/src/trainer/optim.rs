use std::path::Path;

use sha2::{Digest, Sha256};

use super::TrainError;

const MAGIC: &[u8; 8] = b"SWNVADAM";
const VERSION: u32 = 1;

/// `lr_min + ½(lr₀ − lr_min)(1 + cos(π·t/t_max))`, held at `lr_min` past
/// `t_max`.
pub fn cosine_lr(t: u64, t_max: u64, lr0: f64, lr_min: f64) -> f64 {
    if t_max == 0 {
        return lr0;
    }
    let frac = (t.min(t_max) as f64) / (t_max as f64);
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Rescales `g` in place to global norm at most `max`; returns the norm
/// before clipping.
pub fn clip_global_norm(g: &mut [f64], max: f64) -> f64 {
    let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if max > 0.0 && n > max {
        let s = max / n;
        g.iter_mut().for_each(|x| *x *= s);
    }
    n
}

/// Adaptive-moment optimizer with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Updates applied so far.
    pub step: u64,
}

impl AdamW {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self { beta1, beta2, eps, weight_decay, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<(), TrainError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TrainError::Config(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powf(self.step as f64);
        let bc2 = 1.0 - self.beta2.powf(self.step as f64);
        for i in 0..params.len() {
            let g = grads[i];
            params[i] -= lr * self.weight_decay * params[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
        if self.m.iter().chain(&self.v).any(|x| !x.is_finite()) {
            return Err(TrainError::NonFinite("optimizer moments".into()));
        }
        Ok(())
    }

    /// Magic, version, hyperparameters, step, moment count, moments, SHA-256.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 16 * self.m.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for h in [self.beta1, self.beta2, self.eps, self.weight_decay] {
            out.extend_from_slice(&h.to_le_bytes());
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.m.len() as u64).to_le_bytes());
        for x in self.m.iter().chain(&self.v) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        let d = Sha256::digest(&out);
        out.extend_from_slice(&d);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, TrainError> {
        let bad = |m: &str| TrainError::Format(format!("optimizer state: {}", m));
        if b.len() < 8 + 4 + 32 + 16 + 32 || &b[..8] != MAGIC {
            return Err(bad("bad magic or truncated"));
        }
        let u64_at = |o: usize| u64::from_le_bytes(b[o..o + 8].try_into().expect("8 bytes"));
        let f64_at = |o: usize| f64::from_le_bytes(b[o..o + 8].try_into().expect("8 bytes"));
        let version = u32::from_le_bytes(b[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(&format!("version {} (expected {})", version, VERSION)));
        }
        let n = u64_at(12 + 32 + 8) as usize;
        let body = 12 + 32 + 16 + n.checked_mul(16).ok_or_else(|| bad("size overflow"))?;
        if b.len() != body + 32 {
            return Err(bad("truncated"));
        }
        if Sha256::digest(&b[..body]).as_slice() != &b[body..] {
            return Err(bad("checksum mismatch"));
        }
        let mut o = 12 + 32 + 16;
        let mut read = |k: usize| -> Vec<f64> {
            let v = (0..k).map(|i| f64_at(o + 8 * i)).collect();
            o += 8 * k;
            v
        };
        let m = read(n);
        let v = read(n);
        Ok(Self { beta1: f64_at(12), beta2: f64_at(20), eps: f64_at(28), weight_decay: f64_at(36), m, v, step: u64_at(44) })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| TrainError::Io(format!("{}: {}", path.display(), e)))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let b = std::fs::read(path).map_err(|e| TrainError::Io(format!("{}: {}", path.display(), e)))?;
        Self::from_bytes(&b)
    }
}
