use std::path::Path;

use rand::Rng;
use sha2::{Digest, Sha256};

use super::{ArchConfig, PolicyError};
use crate::autodiff::Tensor;
use crate::sim::rng::stream_rng;

const MAGIC: &[u8; 8] = b"SWNVCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// All learnable tensors in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub arch: ArchConfig,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl PolicyParams {
    /// Uniform ±1/√fan_in initialization, deterministic per seed.
    pub fn init(seed: u64, arch: &ArchConfig) -> Result<Self, PolicyError> {
        let specs = arch.param_specs()?;
        let mut rng = stream_rng(seed, &[0x1417]);
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for (name, shape) in specs {
            let bound = 1.0 / (arch.fan_in(&name, &shape) as f64).sqrt();
            let len: usize = shape.iter().product();
            let data = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
            tensors.push(Tensor::new(shape, data).expect("spec shape"));
            names.push(name);
        }
        Ok(Self { arch: arch.clone(), names, tensors })
    }

    pub fn zeros(arch: &ArchConfig) -> Result<Self, PolicyError> {
        let specs = arch.param_specs()?;
        let names = specs.iter().map(|(n, _)| n.clone()).collect();
        let tensors = specs.iter().map(|(_, s)| Tensor::zeros(s)).collect();
        Ok(Self { arch: arch.clone(), names, tensors })
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), PolicyError> {
        if flat.len() != self.count() {
            return Err(PolicyError::Shape(format!("{} values for {} parameters", flat.len(), self.count())));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Binary checkpoint: magic, version, arch text, parameter count,
    /// little-endian f64 values in canonical order, SHA-256 of all
    /// preceding bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let arch = self.arch.to_text();
        let mut out = Vec::with_capacity(8 + 4 + 4 + arch.len() + 8 + self.count() * 8 + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(arch.len() as u32).to_le_bytes());
        out.extend_from_slice(arch.as_bytes());
        out.extend_from_slice(&(self.count() as u64).to_le_bytes());
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PolicyError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(PolicyError::BadMagic);
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(PolicyError::Version { found: version, expected: CHECKPOINT_VERSION });
        }
        let alen = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
        let arch_text = std::str::from_utf8(r.take(alen)?).map_err(|e| PolicyError::Format(e.to_string()))?;
        let count = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
        let body_end = r.pos.checked_add(count.checked_mul(8).ok_or(PolicyError::Truncated)?).ok_or(PolicyError::Truncated)?;
        if bytes.len() < body_end + 32 {
            return Err(PolicyError::Truncated);
        }
        if bytes.len() > body_end + 32 {
            return Err(PolicyError::Format(format!("{} trailing bytes", bytes.len() - body_end - 32)));
        }
        if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
            return Err(PolicyError::Checksum);
        }
        let arch: ArchConfig = toml::from_str(arch_text).map_err(|e| PolicyError::Format(e.to_string()))?;
        let mut params = Self::zeros(&arch)?;
        if params.count() != count {
            return Err(PolicyError::Format(format!("arch implies {} parameters, file has {}", params.count(), count)));
        }
        let flat: Vec<f64> = bytes[r.pos..body_end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.set_flat(&flat)?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| PolicyError::Io(format!("{}: {}", path.display(), e)))
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let bytes = std::fs::read(path).map_err(|e| PolicyError::Io(format!("{}: {}", path.display(), e)))?;
        Self::from_bytes(&bytes)
    }

    /// Loads and requires the stored architecture to equal `expected`.
    pub fn load_for(path: &Path, expected: &ArchConfig) -> Result<Self, PolicyError> {
        let p = Self::load(path)?;
        if &p.arch != expected {
            return Err(PolicyError::ArchMismatch(format!(
                "checkpoint has\n{}\nexpected\n{}",
                p.arch.to_text(),
                expected.to_text()
            )));
        }
        Ok(p)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PolicyError> {
        let end = self.pos.checked_add(n).ok_or(PolicyError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(PolicyError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ArchConfig {
        ArchConfig { input_height: 4, input_width: 8, channels: vec![2, 3], strides: vec![[2, 2], [1, 1]], d_z: 5, d_h: 4, ..Default::default() }
    }

    #[test]
    fn init_is_deterministic() {
        let a = PolicyParams::init(3, &small()).unwrap();
        let b = PolicyParams::init(3, &small()).unwrap();
        let c = PolicyParams::init(4, &small()).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_ne!(a.flat(), c.flat());
    }

    #[test]
    fn round_trip_is_bitwise() {
        let p = PolicyParams::init(1, &small()).unwrap();
        let back = PolicyParams::from_bytes(&p.to_bytes()).unwrap();
        assert!(p.flat().iter().zip(back.flat()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.arch, p.arch);
    }

    #[test]
    fn corruption_detected() {
        let mut bytes = PolicyParams::init(1, &small()).unwrap().to_bytes();
        let mid = bytes.len() - 40;
        bytes[mid] ^= 0x10;
        assert!(matches!(PolicyParams::from_bytes(&bytes), Err(PolicyError::Checksum)));
    }

    #[test]
    fn truncation_and_magic() {
        let bytes = PolicyParams::init(1, &small()).unwrap().to_bytes();
        assert!(matches!(PolicyParams::from_bytes(&bytes[..bytes.len() - 5]), Err(PolicyError::Truncated)));
        assert!(matches!(PolicyParams::from_bytes(&bytes[..10]), Err(PolicyError::Truncated)));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(PolicyParams::from_bytes(&bad), Err(PolicyError::BadMagic)));
        let mut v = bytes;
        v[8] = 9;
        assert!(matches!(PolicyParams::from_bytes(&v), Err(PolicyError::Version { found: 9, .. })));
    }

    #[test]
    fn arch_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        PolicyParams::init(1, &small()).unwrap().save(&path).unwrap();
        let other = ArchConfig { d_h: 6, ..small() };
        assert!(matches!(PolicyParams::load_for(&path, &other), Err(PolicyError::ArchMismatch(_))));
        assert!(PolicyParams::load_for(&path, &small()).is_ok());
    }
}
