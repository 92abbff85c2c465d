//! Point-mass swarm dynamics, circle-swap scenarios and collision bookkeeping.

mod collision;
mod dynamics;
mod frames;
pub mod rng;
mod scenario;

pub use collision::{
    agent_clearance, detect_collisions, nearest_hazards, obstacle_clearance, CollisionEvent, CollisionTracker, Hazard,
    Nearest,
};
pub use dynamics::{
    apply_dynamics, clamp_norm, integrate_position, integrate_step, integrate_velocity, predict_velocity,
    sample_perturbation, DynamicsConfig,
};
pub use frames::{
    attitude_from_accel, goal_velocity_command, goal_velocity_world, pitch_matrix, to_row_major, try_yaw_aligned_frame,
    yaw_aligned_frame, yaw_matrix, yaw_of,
};
pub use scenario::{make_circle_swap, rotate_scene, AgentSpec, Obstacle, ObstacleSpec, Scenario, ScenarioConfig, SpeedSpec};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("scenario infeasible: {0}")]
    Infeasible(String),
    #[error("scenario format: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(String),
}
