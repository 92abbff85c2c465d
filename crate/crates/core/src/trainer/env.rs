//! Per-agent observation plumbing shared by training rollouts and
//! evaluation episodes.

use rand::Rng;

use crate::perception::{CameraId, Perception, Pose, Scene};
use crate::policy::normalized_margin;
use crate::sim::{attitude_from_accel, nearest_hazards, yaw_matrix, DynamicsConfig, Mat3, Nearest, Obstacle, Scenario, Vec3};

/// Fixed heading frame of every agent.
pub fn yaw_frames(scenario: &Scenario) -> Vec<Mat3> {
    scenario.agents.iter().map(|a| yaw_matrix(a.yaw())).collect()
}

pub fn body_attitudes(r_yaw: &[Mat3], accel: &[Vec3], gravity: f64) -> Vec<Mat3> {
    r_yaw.iter().zip(accel).map(|(r, &a)| attitude_from_accel(r, a, gravity)).collect()
}

/// What other agents see of each agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Visibility<'a> {
    All,
    /// Only agents flagged `true` are rendered.
    Mask(&'a [bool]),
    /// Agents never see one another.
    None,
}

impl Visibility<'_> {
    fn flags(&self, n: usize) -> Vec<bool> {
        match self {
            Visibility::All => vec![true; n],
            Visibility::Mask(m) => m.to_vec(),
            Visibility::None => vec![false; n],
        }
    }
}

/// Everything the policy sees at one step, besides its own velocity and
/// goal command.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// `n × H × W` preprocessed panoramas, agent-major.
    pub inputs: Vec<f64>,
    /// Body up-axis in the yaw frame.
    pub tilt: Vec<[f64; 3]>,
    /// Normalized safety margin.
    pub margin: Vec<f64>,
    pub nearest: Vec<Nearest>,
}

#[allow(clippy::too_many_arguments)]
pub fn observe_all<R: Rng>(
    perception: &Perception,
    dynamics: &DynamicsConfig,
    obstacles: &[Obstacle],
    positions: &[Vec3],
    r_yaw: &[Mat3],
    r_body: &[Mat3],
    visibility: Visibility,
    failed: &[CameraId],
    rng: &mut R,
) -> Observation {
    let n = positions.len();
    let flags = visibility.flags(n);
    let interactions = !matches!(visibility, Visibility::None);
    let ground = perception.config.ground;
    let [h, w] = perception.input_dims();
    let mut inputs = Vec::with_capacity(n * h * w);
    for i in 0..n {
        let scene = Scene::for_agent(obstacles, positions, &flags, i, dynamics.agent_radius, ground);
        let pose = Pose { p: positions[i], r: r_body[i] };
        inputs.extend(perception.observe(&pose, &scene, failed, rng));
    }
    let nearest = nearest_hazards(positions, &flags, interactions, obstacles, dynamics.agent_radius, dynamics.margin);
    let d_max = perception.config.preprocess.d_max;
    let margin = nearest.iter().map(|nh| normalized_margin(nh.min_clearance(), d_max)).collect();
    let tilt = r_yaw
        .iter()
        .zip(r_body)
        .map(|(ry, rb)| {
            let t = ry.transpose() * (rb * Vec3::z());
            [t[0], t[1], t[2]]
        })
        .collect();
    Observation { inputs, tilt, margin, nearest }
}
