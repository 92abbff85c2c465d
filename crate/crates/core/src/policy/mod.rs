//! Circular-padded conv encoder, state embedding, GRU core and output head.

mod arch;
mod net;
mod params;
mod state;

pub use arch::{ArchConfig, ConvLayer, OUTPUT_DIM, STATE_DIM};
pub use net::{circular_pad, encode, infer, policy_step, Encoding, PolicyVars, StepOutput};
pub use params::{PolicyParams, CHECKPOINT_VERSION};
pub use state::{build_state_vector, normalized_margin, StateVector};

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("invalid architecture: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint architecture mismatch: {0}")]
    ArchMismatch(String),
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(String),
}
