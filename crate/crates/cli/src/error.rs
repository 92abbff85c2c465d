use swarmnav::bench::BenchError;
use swarmnav::config::ConfigError;
use swarmnav::perception::PerceptionError;
use swarmnav::policy::PolicyError;
use swarmnav::sim::SimError;
use swarmnav::trainer::TrainError;

/// Categorized failure; the category picks the exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Io(_) => 4,
            CliError::Numeric(_) => 5,
            CliError::Checkpoint(_) => 6,
            CliError::CheckFailed(_) => 7,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<PerceptionError> for CliError {
    fn from(e: PerceptionError) -> Self {
        match e {
            PerceptionError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Config(_) | PolicyError::Shape(_) => CliError::Config(e.to_string()),
            PolicyError::NonFinite(_) => CliError::Numeric(e.to_string()),
            PolicyError::Io(_) => CliError::Io(e.to_string()),
            PolicyError::BadMagic
            | PolicyError::Version { .. }
            | PolicyError::ArchMismatch(_)
            | PolicyError::Checksum
            | PolicyError::Truncated
            | PolicyError::Format(_) => CliError::Checkpoint(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::NonFiniteLoss { .. } | TrainError::NonFinite(_) | TrainError::Objective(_) | TrainError::Tape(_) => {
                CliError::Numeric(e.to_string())
            }
            TrainError::Io(_) => CliError::Io(e.to_string()),
            TrainError::Format(_) => CliError::Checkpoint(e.to_string()),
            TrainError::Sim(s) => s.into(),
            TrainError::Perception(p) => p.into(),
            TrainError::Policy(p) => p.into(),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Config(_) => CliError::Config(e.to_string()),
            BenchError::Io(_) => CliError::Io(e.to_string()),
            BenchError::Sim(s) => s.into(),
            BenchError::Perception(p) => p.into(),
            BenchError::Policy(p) => p.into(),
        }
    }
}
