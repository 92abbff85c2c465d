//! Evaluation episodes, swarm safety metrics, stress sweeps, camera-failure
//! ablations and result export.

mod episode;
mod export;
mod metrics;
mod sweep;

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineConfig;
use crate::perception::{Perception, PerceptionError};
use crate::policy::{PolicyError, PolicyParams};
use crate::sim::SimError;

pub use episode::{run_episode, EpisodeOptions};
pub use export::{read_rows_csv, write_manifest, write_report, write_rows_csv, FrameWriter};
pub use metrics::{compute_metrics, EpisodeRecord, MetricsReport};
pub use sweep::{
    axis_scenario, map_seeds, run_occlusion_ablation, run_sweep, Axis, OcclusionCondition, OcclusionRow, OcclusionTable,
    ResultRow, SweepResult,
};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid evaluation setup: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for BenchError {
    fn from(e: std::io::Error) -> Self {
        BenchError::Io(e.to_string())
    }
}

impl From<csv::Error> for BenchError {
    fn from(e: csv::Error) -> Self {
        BenchError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Episode length in control steps.
    pub steps: usize,
    /// Independently generated maps per configuration.
    pub maps: usize,
    /// First map seed; maps use consecutive seeds.
    pub seed: u64,
    /// Agents stop in place at their first safety violation.
    pub freeze_on_collision: bool,
    /// Episode worker threads; 0 uses every core.
    pub workers: usize,
    pub scale: Vec<usize>,
    /// Obstacles per 100 m² of arena footprint.
    pub density: Vec<f64>,
    /// Commanded cruise speeds, m/s.
    pub speed: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            steps: 600,
            maps: 3,
            seed: 0,
            freeze_on_collision: true,
            workers: 0,
            scale: vec![64, 128, 256, 512],
            density: vec![0.5, 1.0, 1.5, 2.0],
            speed: vec![0.75, 1.5, 2.25, 3.0],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.maps == 0 {
            return Err("eval.maps must be at least 1".into());
        }
        if self.scale.iter().any(|&n| n < 2) {
            return Err("eval.scale entries need at least 2 agents".into());
        }
        if self.density.iter().any(|d| !(*d >= 0.0)) {
            return Err("eval.density entries must be non-negative".into());
        }
        if self.speed.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err("eval.speed entries must be positive".into());
        }
        Ok(())
    }
}

/// What drives the agents of one episode.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    Policy { params: &'a PolicyParams, perception: &'a Perception },
    Apf(&'a BaselineConfig),
    Dwa(&'a BaselineConfig),
}

impl Controller<'_> {
    pub fn validate(&self) -> Result<(), BenchError> {
        if let Controller::Policy { params, perception } = self {
            let a = &params.arch;
            if [a.input_height, a.input_width] != perception.input_dims() {
                return Err(BenchError::Config(format!(
                    "policy expects {}×{} inputs, perception produces {:?}",
                    a.input_height,
                    a.input_width,
                    perception.input_dims()
                )));
            }
        }
        Ok(())
    }
}

/// A named controller entered into a sweep.
#[derive(Debug, Clone, Copy)]
pub struct Method<'a> {
    pub name: &'a str,
    pub controller: Controller<'a>,
}
