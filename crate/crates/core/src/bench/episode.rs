use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::baselines::{apf_step, dwa_step, PrivilegedObservation};
use crate::perception::CameraId;
use crate::policy::{build_state_vector, infer, STATE_DIM};
use crate::sim::rng::stream_rng;
use crate::sim::{
    apply_dynamics, clamp_norm, detect_collisions, integrate_position, integrate_velocity, predict_velocity,
    sample_perturbation, CollisionTracker, DynamicsConfig, Mat3, Scenario, Vec3,
};
use crate::trainer::env::{body_attitudes, observe_all, yaw_frames, Visibility};

use super::export::FrameWriter;
use super::{BenchError, Controller, EpisodeRecord};

const NOISE_TAG: u64 = 0xE7A1_0001;
const PERCEPTION_TAG: u64 = 0xE7A1_0002;

#[derive(Debug, Clone, Copy)]
pub struct EpisodeOptions<'a> {
    pub steps: usize,
    /// Seeds the dynamics perturbations and the observation noise; the
    /// perturbation stream is shared by every controller.
    pub noise_seed: u64,
    pub freeze_on_collision: bool,
    /// Cameras replaced by max-range images.
    pub failed: &'a [CameraId],
    /// Agents see and collide with one another.
    pub interactions: bool,
}

struct Driver<'a> {
    controller: Controller<'a>,
    h: Option<Tensor>,
    r_yaw: Vec<Mat3>,
    rng: ChaCha8Rng,
}

impl Driver<'_> {
    /// Commands at the observation state `(p, v)`; `a` sets the body tilt.
    /// Also returns the policy inputs, when there are any.
    fn command(
        &mut self,
        scenario: &Scenario,
        dynamics: &DynamicsConfig,
        opts: &EpisodeOptions,
        p: &[Vec3],
        v: &[Vec3],
        a: &[Vec3],
    ) -> Result<(Vec<Vec3>, Option<Vec<f64>>), BenchError> {
        let n = p.len();
        match self.controller {
            Controller::Policy { params, perception } => {
                let r_body = body_attitudes(&self.r_yaw, a, dynamics.gravity);
                let vis = if opts.interactions { Visibility::All } else { Visibility::None };
                let obs = observe_all(perception, dynamics, &scenario.obstacles, p, &self.r_yaw, &r_body, vis, opts.failed, &mut self.rng);
                let d_max = perception.config.preprocess.d_max;
                let mut state = Vec::with_capacity(n * STATE_DIM);
                for i in 0..n {
                    let ag = &scenario.agents[i];
                    let s = build_state_vector(
                        p[i],
                        v[i],
                        &r_body[i],
                        &self.r_yaw[i],
                        ag.goal,
                        ag.speed,
                        dynamics.goal_gain,
                        obs.nearest[i].min_clearance(),
                        d_max,
                    );
                    state.extend(s.to_array());
                }
                let [ih, iw] = perception.input_dims();
                let x = Tensor::new(vec![n, 1, ih, iw], obs.inputs.clone()).map_err(crate::policy::PolicyError::from)?;
                let s = Tensor::new(vec![n, STATE_DIM], state).map_err(crate::policy::PolicyError::from)?;
                let h = self.h.take().unwrap_or_else(|| Tensor::zeros(&[n, params.arch.d_h]));
                let (h1, a_pred, _) = infer(params, &h, &x, &s)?;
                self.h = Some(h1);
                let cmds = a_pred
                    .data()
                    .chunks(3)
                    .zip(&self.r_yaw)
                    .map(|(c, r)| clamp_norm(r * Vec3::new(c[0], c[1], c[2]), dynamics.a_max))
                    .collect();
                Ok((cmds, Some(obs.inputs)))
            }
            Controller::Apf(cfg) | Controller::Dwa(cfg) => {
                let visible = vec![opts.interactions; n];
                let cmds = (0..n)
                    .map(|i| {
                        let obs = PrivilegedObservation::gather(i, p, v, &visible, &scenario.obstacles, cfg.sensing_radius);
                        let goal = scenario.agents[i].goal;
                        match self.controller {
                            Controller::Apf(_) => apf_step(&obs, goal, cfg, dynamics),
                            _ => dwa_step(&obs, goal, cfg, dynamics),
                        }
                    })
                    .collect();
                Ok((cmds, None))
            }
        }
    }
}

/// Runs one episode of `opts.steps` control steps. Commands are evaluated
/// at the predicted state of each step, as in training; agents are checked
/// for safety violations at every frame and optionally frozen in place.
pub fn run_episode(
    controller: Controller,
    method: &str,
    scenario: &Scenario,
    dynamics: &DynamicsConfig,
    opts: &EpisodeOptions,
    mut frames: Option<&mut FrameWriter>,
) -> Result<EpisodeRecord, BenchError> {
    controller.validate()?;
    let n = scenario.agents.len();
    let dt = dynamics.dt;
    let mut driver = Driver {
        controller,
        h: None,
        r_yaw: yaw_frames(scenario),
        rng: stream_rng(opts.noise_seed, &[PERCEPTION_TAG]),
    };
    let mut noise = stream_rng(opts.noise_seed, &[NOISE_TAG]);
    let mut p: Vec<Vec3> = scenario.agents.iter().map(|a| a.start).collect();
    let mut v: Vec<Vec3> = scenario.agents.iter().map(|a| a.initial_velocity).collect();
    let mut frozen_at: Vec<Option<usize>> = vec![None; n];
    let mut tracker = CollisionTracker::new(n);
    let active = vec![true; n];

    let mut check = |frame: usize, p: &[Vec3], frozen_at: &mut [Option<usize>]| -> Vec<usize> {
        let viol = detect_collisions(p, &active, opts.interactions, &scenario.obstacles, dynamics.agent_radius, dynamics.margin);
        let onset = tracker.update(frame, frame as f64 * dt, &viol);
        if opts.freeze_on_collision {
            for &i in &onset {
                frozen_at[i].get_or_insert(frame);
            }
        }
        onset
    };
    check(0, &p, &mut frozen_at);
    for i in 0..n {
        if frozen_at[i].is_some() {
            v[i] = Vec3::zeros();
        }
    }

    let mut positions = vec![p.clone()];
    let mut velocities = vec![v.clone()];
    let mut actions = Vec::with_capacity(opts.steps);
    let (mut a_cmd, _) = driver.command(scenario, dynamics, opts, &p, &v, &vec![Vec3::zeros(); n])?;
    let mut a: Vec<Vec3> = (0..n)
        .map(|i| {
            let xi = sample_perturbation(&mut noise, dynamics.noise_std);
            if frozen_at[i].is_some() {
                Vec3::zeros()
            } else {
                apply_dynamics(a_cmd[i], v[i], xi, dynamics.drag)
            }
        })
        .collect();

    for t in 0..opts.steps {
        let mut p1: Vec<Vec3> = (0..n).map(|i| if frozen_at[i].is_some() { p[i] } else { integrate_position(p[i], v[i], a[i], dt) }).collect();
        let v_obs: Vec<Vec3> = (0..n).map(|i| predict_velocity(v[i], a[i], dt)).collect();
        let (cmd1, inputs) = driver.command(scenario, dynamics, opts, &p1, &v_obs, &a)?;
        let mut a1 = Vec::with_capacity(n);
        let mut v1 = Vec::with_capacity(n);
        for i in 0..n {
            let xi = sample_perturbation(&mut noise, dynamics.noise_std);
            if frozen_at[i].is_some() {
                a1.push(Vec3::zeros());
                v1.push(Vec3::zeros());
            } else {
                let an = apply_dynamics(cmd1[i], v_obs[i], xi, dynamics.drag);
                v1.push(integrate_velocity(v[i], a[i], an, dt));
                a1.push(an);
            }
        }
        for i in check(t + 1, &p1, &mut frozen_at) {
            if frozen_at[i] == Some(t + 1) {
                a1[i] = Vec3::zeros();
                v1[i] = Vec3::zeros();
            }
        }
        if let Some(fw) = frames.as_deref_mut() {
            fw.write(t, scenario, &positions, &p1, &frozen_at, inputs.as_deref())?;
        }
        actions.push(std::mem::replace(&mut a_cmd, cmd1));
        std::mem::swap(&mut p, &mut p1);
        v = v1;
        a = a1;
        positions.push(p.clone());
        velocities.push(v.clone());
    }

    Ok(EpisodeRecord {
        method: method.to_string(),
        scenario: scenario.clone(),
        noise_seed: opts.noise_seed,
        dt,
        agent_radius: dynamics.agent_radius,
        margin: dynamics.margin,
        interactions: opts.interactions,
        positions,
        velocities,
        actions,
        frozen_at,
        events: tracker.into_events(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::BaselineConfig;
    use crate::bench::compute_metrics;
    use crate::sim::{make_circle_swap, AgentSpec, Obstacle, ScenarioConfig, SpeedSpec};

    fn opts(steps: usize) -> EpisodeOptions<'static> {
        EpisodeOptions { steps, noise_seed: 5, freeze_on_collision: true, failed: &[], interactions: true }
    }

    #[test]
    fn head_on_collision_freezes() {
        let mut dy = DynamicsConfig::default();
        dy.noise_std = 0.0;
        let agents = vec![
            AgentSpec { start: Vec3::new(0.0, 0.0, 1.5), goal: Vec3::new(0.0, 0.0, 1.5), speed: 1.0, initial_velocity: Vec3::zeros() },
            AgentSpec { start: Vec3::new(0.3, 0.0, 1.5), goal: Vec3::new(0.3, 0.0, 1.5), speed: 1.0, initial_velocity: Vec3::zeros() },
        ];
        let sc = Scenario::custom(agents, vec![]);
        let cfg = BaselineConfig::default();
        let r = run_episode(Controller::Apf(&cfg), "apf", &sc, &dy, &opts(20), None).unwrap();
        assert_eq!(r.events.len(), 2);
        assert_eq!(r.frozen_at, vec![Some(0), Some(0)]);
        assert!(r.positions.iter().all(|f| f == &r.positions[0]));
        let m = compute_metrics(&[r]);
        assert_eq!(m.success_rate, 0.0);
        assert_eq!(m.mfct, 0.0);
    }

    #[test]
    fn obstacle_blocks_only_with_contact() {
        let mut dy = DynamicsConfig::default();
        dy.noise_std = 0.0;
        let agents = vec![AgentSpec {
            start: Vec3::new(-4.0, 0.0, 1.5),
            goal: Vec3::new(4.0, 0.0, 1.5),
            speed: 1.5,
            initial_velocity: Vec3::zeros(),
        }];
        let sc = Scenario::custom(agents.clone(), vec![Obstacle { center: Vec3::new(0.0, 0.0, 1.5), radius: 0.5 }]);
        let cfg = BaselineConfig::default();
        let r = run_episode(Controller::Dwa(&cfg), "dwa", &sc, &dy, &opts(150), None).unwrap();
        assert!(r.events.is_empty(), "{:?}", r.events);
        assert!((r.positions.last().unwrap()[0] - Vec3::new(4.0, 0.0, 1.5)).norm() < 0.5);
        assert_eq!(r.positions.len(), 151);
        assert_eq!(r.actions.len(), 150);
    }

    #[test]
    fn baselines_ignore_commanded_speed() {
        let dy = DynamicsConfig::default();
        let cfg = BaselineConfig::default();
        let base = ScenarioConfig { n_agents: 6, ..Default::default() };
        let mut out = Vec::new();
        for v in [0.75, 3.0] {
            let sc = make_circle_swap(&ScenarioConfig { speed: SpeedSpec::Fixed { value: v }, ..base.clone() }, 3, &dy).unwrap();
            let a = run_episode(Controller::Apf(&cfg), "apf", &sc, &dy, &opts(40), None).unwrap();
            let d = run_episode(Controller::Dwa(&cfg), "dwa", &sc, &dy, &opts(40), None).unwrap();
            out.push((a.positions, d.positions));
        }
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn episodes_repeat_bitwise() {
        let dy = DynamicsConfig::default();
        let cfg = BaselineConfig::default();
        let sc = make_circle_swap(&ScenarioConfig { n_agents: 6, ..Default::default() }, 9, &dy).unwrap();
        let a = run_episode(Controller::Apf(&cfg), "apf", &sc, &dy, &opts(30), None).unwrap();
        let b = run_episode(Controller::Apf(&cfg), "apf", &sc, &dy, &opts(30), None).unwrap();
        assert_eq!(a, b);
    }
}
