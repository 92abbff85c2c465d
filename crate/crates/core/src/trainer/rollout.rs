//! Differentiable unrolled rollout of one environment.

use crate::autodiff::{Tape, Tensor, Var};
use crate::objective::{tape_losses, LossConfig, LossTerms, TapeVelocityWindow};
use crate::perception::Perception;
use crate::policy::{encode, policy_step, PolicyVars};
use crate::sim::rng::stream_rng;
use crate::sim::{goal_velocity_world, nearest_hazards, sample_perturbation, to_row_major, DynamicsConfig, Scenario, Vec3};

use super::env::{body_attitudes, observe_all, yaw_frames, Visibility};
use super::TrainError;

const ROLLOUT_TAG: u64 = 0x0B5E_0001;

#[derive(Debug, Clone, Copy)]
pub struct RolloutContext<'a> {
    pub perception: &'a Perception,
    pub dynamics: &'a DynamicsConfig,
    pub loss: &'a LossConfig,
    pub horizon: usize,
    /// Adjoint attenuation at every step boundary.
    pub decay: Option<f64>,
    /// Multiplies every per-agent, per-step loss.
    pub loss_scale: f64,
}

/// Where the non-differentiable inputs of a rollout come from.
#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    /// Render observations and draw noise from the stream of `seed`.
    Render { seed: u64, record: bool },
    /// Reuse the inputs of an earlier rollout, so the loss becomes a smooth
    /// function of the parameters alone.
    Replay(&'a Recording),
}

/// Inputs consumed by one policy evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub inputs: Vec<f64>,
    pub tilt: Vec<[f64; 3]>,
    pub margin: Vec<f64>,
    pub xi: Vec<[f64; 3]>,
    /// Detached velocity target of the auxiliary head, yaw frame.
    pub v_target: Vec<[f64; 3]>,
}

/// Discrete choices and detached targets of one loss step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub neighbor: Vec<usize>,
    pub obstacle: Vec<usize>,
    pub fb_agent: Vec<[f64; 3]>,
    pub fb_obstacle: Vec<[f64; 3]>,
    pub v_star: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Recording {
    pub calls: Vec<CallRecord>,
    pub steps: Vec<StepRecord>,
}

/// Sums over the agents and steps of one rollout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnvStats {
    pub agents: usize,
    pub steps: usize,
    /// Unweighted term sums in [`LossTerms::NAMES`] order.
    pub term_sums: [f64; 6],
    pub safe_agents: usize,
    /// Σ over agents of the mean speed.
    pub speed_sum: f64,
    /// Σ over safe agents of the mean speed.
    pub ar_sum: f64,
    pub acc_sum: f64,
    pub acc_n: usize,
    pub jerk_sum: f64,
    pub jerk_n: usize,
    pub snap_sum: f64,
    pub snap_n: usize,
    pub ground_sum: f64,
    pub ground_n: usize,
}

impl EnvStats {
    pub fn merge(&mut self, o: &EnvStats) {
        self.agents += o.agents;
        self.steps = self.steps.max(o.steps);
        for k in 0..6 {
            self.term_sums[k] += o.term_sums[k];
        }
        self.safe_agents += o.safe_agents;
        self.speed_sum += o.speed_sum;
        self.ar_sum += o.ar_sum;
        self.acc_sum += o.acc_sum;
        self.acc_n += o.acc_n;
        self.jerk_sum += o.jerk_sum;
        self.jerk_n += o.jerk_n;
        self.snap_sum += o.snap_sum;
        self.snap_n += o.snap_n;
        self.ground_sum += o.ground_sum;
        self.ground_n += o.ground_n;
    }
}

#[derive(Debug, Clone)]
pub struct RolloutOutput {
    /// Scalar loss node.
    pub loss: Var,
    pub stats: EnvStats,
    pub recording: Option<Recording>,
}

fn rows(v: &[[f64; 3]]) -> Tensor {
    Tensor::from_rows(v)
}

fn vec_rows(t: &Tensor) -> Vec<Vec3> {
    t.data().chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

fn arr(v: Vec3) -> [f64; 3] {
    [v[0], v[1], v[2]]
}

struct Env<'a> {
    ctx: RolloutContext<'a>,
    r_yaw: Vec<crate::sim::Mat3>,
    yaw_rm: Vec<[f64; 9]>,
    goals: Var,
    vmax: Vec<f64>,
}

impl Env<'_> {
    /// Policy evaluation at the observation state `(p, v_obs)`: returns the
    /// new hidden state, the clamped world-frame command and the velocity
    /// estimate.
    fn call(&self, tape: &mut Tape, pv: &PolicyVars, rec: &CallRecord, p: Var, v_obs: Var, h: Var) -> Result<(Var, Var, Var), TrainError> {
        let n = self.vmax.len();
        let [ih, iw] = self.ctx.perception.input_dims();
        let x = tape.constant(Tensor::new(vec![n, 1, ih, iw], rec.inputs.clone())?);
        let v_local = tape.rotate_rows(v_obs, &self.yaw_rm, true)?;
        let diff = tape.sub(self.goals, p)?;
        let v_cmd_w = tape.speed_clamp_rows(diff, &self.vmax, self.ctx.dynamics.goal_gain)?;
        let v_cmd = tape.rotate_rows(v_cmd_w, &self.yaw_rm, true)?;
        let tilt = tape.constant(rows(&rec.tilt));
        let margin = tape.constant(Tensor::new(vec![n, 1], rec.margin.clone())?);
        let s = tape.concat_cols(&[v_local, v_cmd, tilt, margin])?;
        let enc = encode(tape, pv, x)?;
        let out = policy_step(tape, pv, h, enc.z, s)?;
        let a_world = tape.rotate_rows(out.a_pred, &self.yaw_rm, false)?;
        let a_cmd = tape.clamp_norm_rows(a_world, self.ctx.dynamics.a_max)?;
        Ok((out.h, a_cmd, out.v_hat))
    }

    /// Net acceleration `a_cmd − c_d·v + ξ`.
    fn net_accel(&self, tape: &mut Tape, a_cmd: Var, v: Var, xi: &[[f64; 3]]) -> Result<Var, TrainError> {
        let drag = tape.scale(v, -self.ctx.dynamics.drag);
        let a = tape.add(a_cmd, drag)?;
        let xi = tape.constant(rows(xi));
        Ok(tape.add(a, xi)?)
    }
}

/// Unrolls `ctx.horizon` steps of one environment on `tape` and returns the
/// accumulated loss node.
pub fn rollout(
    tape: &mut Tape,
    pv: &PolicyVars,
    scenario: &Scenario,
    ctx: RolloutContext,
    mode: Mode,
) -> Result<RolloutOutput, TrainError> {
    let n = scenario.agents.len();
    if n == 0 {
        return Err(TrainError::Config("rollout needs at least one agent".into()));
    }
    let t_max = ctx.horizon;
    let dyn_ = ctx.dynamics;
    let dt = dyn_.dt;
    let r_yaw = yaw_frames(scenario);
    let yaw_rm = r_yaw.iter().map(to_row_major).collect();
    let goal_rows: Vec<[f64; 3]> = scenario.agents.iter().map(|a| arr(a.goal)).collect();
    let goals = tape.constant(rows(&goal_rows));
    let vmax: Vec<f64> = scenario.agents.iter().map(|a| a.speed).collect();
    let env = Env { ctx, r_yaw, yaw_rm, goals, vmax };
    let obstacles = &scenario.obstacles;

    let record = matches!(mode, Mode::Render { record: true, .. });
    let mut rng = match mode {
        Mode::Render { seed, .. } => Some(stream_rng(seed, &[ROLLOUT_TAG])),
        Mode::Replay(r) => {
            if r.calls.len() != t_max + 1 || r.steps.len() != t_max {
                return Err(TrainError::Config(format!(
                    "recording holds {} calls and {} steps, horizon {} needs {} and {}",
                    r.calls.len(),
                    r.steps.len(),
                    t_max,
                    t_max + 1,
                    t_max
                )));
            }
            None
        }
    };
    let mut recording = Recording::default();

    let mut stats = EnvStats { agents: n, steps: t_max, ..Default::default() };
    let zero = tape.constant(Tensor::scalar(0.0));
    if t_max == 0 {
        return Ok(RolloutOutput { loss: zero, stats, recording: record.then_some(recording) });
    }

    let mut get_call = |c: usize, p: &[Vec3], v: &[Vec3], a: &[Vec3]| -> CallRecord {
        match (&mode, rng.as_mut()) {
            (Mode::Replay(r), _) => r.calls[c].clone(),
            (_, Some(rng)) => {
                let r_body = body_attitudes(&env.r_yaw, a, dyn_.gravity);
                let obs = observe_all(ctx.perception, dyn_, obstacles, p, &env.r_yaw, &r_body, Visibility::All, &[], rng);
                let xi = (0..n).map(|_| arr(sample_perturbation(rng, dyn_.noise_std))).collect();
                let v_target = env.r_yaw.iter().zip(v).map(|(ry, &vi)| arr(ry.transpose() * vi)).collect();
                CallRecord { inputs: obs.inputs, tilt: obs.tilt, margin: obs.margin, xi, v_target }
            }
            _ => unreachable!("render mode owns an rng"),
        }
    };

    let starts: Vec<Vec3> = scenario.agents.iter().map(|a| a.start).collect();
    let v_init: Vec<Vec3> = scenario.agents.iter().map(|a| a.initial_velocity).collect();
    let mut p = tape.constant(rows(&starts.iter().map(|&x| arr(x)).collect::<Vec<_>>()));
    let mut v = tape.constant(rows(&v_init.iter().map(|&x| arr(x)).collect::<Vec<_>>()));
    let mut h = tape.constant(Tensor::zeros(&[n, pv.d_h()]));

    let call0 = get_call(0, &starts, &v_init, &vec![Vec3::zeros(); n]);
    let (h1, mut a_cmd, mut v_hat) = env.call(tape, pv, &call0, p, v, h)?;
    h = h1;
    let mut v_target = call0.v_target.clone();
    let mut a = env.net_accel(tape, a_cmd, v, &call0.xi)?;
    if record {
        recording.calls.push(call0);
    }

    let w = ctx.loss.weights.as_array();
    let kappa = ctx.loss.kappa;
    let contact = 2.0 * dyn_.agent_radius + dyn_.margin;
    let mut window = TapeVelocityWindow::new();
    let mut a_cmd_prev: Option<Var> = None;
    let mut acc_hist: Vec<Vec<Vec3>> = Vec::new();
    let mut fb_agent = vec![[1.0, 0.0, 0.0]; n];
    let mut fb_obstacle = vec![[1.0, 0.0, 0.0]; n];
    let mut violated = vec![false; n];
    let mut speed_acc = vec![0.0; n];
    let mut total = zero;

    for t in 0..t_max {
        if let Some(g) = ctx.decay {
            p = tape.decay_hook(p, g)?;
            v = tape.decay_hook(v, g)?;
            a = tape.decay_hook(a, g)?;
            h = tape.decay_hook(h, g)?;
        }
        let p1 = tape.integrate_position(p, v, a, dt)?;
        let a_dt = tape.scale(a, dt);
        let v_obs = tape.add(v, a_dt)?;
        let (p1_vals, vo_vals, a_vals) =
            (vec_rows(tape.value(p1)), vec_rows(tape.value(v_obs)), vec_rows(tape.value(a)));
        let call = get_call(t + 1, &p1_vals, &vo_vals, &a_vals);
        let (h1, a_cmd1, v_hat1) = env.call(tape, pv, &call, p1, v_obs, h)?;
        let a1 = env.net_accel(tape, a_cmd1, v_obs, &call.xi)?;
        let v1 = tape.integrate_velocity(v, a, a1, dt)?;
        let v1_vals = vec_rows(tape.value(v1));

        // Discrete choices and detached targets for the losses at (p1, v1).
        let nearest = nearest_hazards(&p1_vals, &vec![true; n], true, obstacles, dyn_.agent_radius, dyn_.margin);
        let step = match &mode {
            Mode::Replay(r) => r.steps[t].clone(),
            Mode::Render { .. } => StepRecord {
                neighbor: nearest.iter().enumerate().map(|(i, nh)| nh.agent.map_or(i, |(j, _)| j)).collect(),
                obstacle: nearest.iter().map(|nh| nh.obstacle.map_or(0, |(k, _)| k)).collect(),
                fb_agent: fb_agent.clone(),
                fb_obstacle: fb_obstacle.clone(),
                v_star: (0..n)
                    .map(|i| arr(goal_velocity_world(p1_vals[i], scenario.agents[i].goal, env.vmax[i], dyn_.goal_gain)))
                    .collect(),
            },
        };

        let mut terms: [Option<Var>; 6] = [None; 6];
        let vbar = window.push(tape, v1)?;
        let vstar = tape.constant(rows(&step.v_star));
        terms[0] = Some(tape_losses::velocity(tape, vbar, vstar)?);
        let vt = tape.constant(rows(&v_target));
        terms[1] = Some(tape_losses::vel_pred(tape, v_hat, vt)?);
        if n >= 2 {
            let pj = tape.gather_rows(p1, &step.neighbor)?;
            let rel = tape.sub(pj, p1)?;
            let dist = tape.row_norm(rel)?;
            let d = tape.add_scalar(dist, -contact);
            let vj = tape.gather_rows(v1, &step.neighbor)?;
            let relv = tape.sub(vj, v1)?;
            let vapp = tape.approach_speed(rel, relv, &step.fb_agent)?;
            terms[2] = Some(tape_losses::collision(tape, d, vapp, kappa)?);
        }
        if !obstacles.is_empty() {
            let centers: Vec<[f64; 3]> = step.obstacle.iter().map(|&k| arr(obstacles[k].center)).collect();
            let bands: Vec<f64> =
                step.obstacle.iter().map(|&k| obstacles[k].radius + dyn_.agent_radius + dyn_.margin).collect();
            let c = tape.constant(rows(&centers));
            let rel = tape.sub(c, p1)?;
            let dist = tape.row_norm(rel)?;
            let band = tape.constant(Tensor::vector(bands));
            let d = tape.sub(dist, band)?;
            let relv = tape.neg(v1);
            let vapp = tape.approach_speed(rel, relv, &step.fb_obstacle)?;
            terms[3] = Some(tape_losses::obstacle(tape, d, vapp)?);
        }
        terms[4] = Some(tape_losses::acc(tape, a_cmd)?);
        if let Some(prev) = a_cmd_prev {
            terms[5] = Some(tape_losses::jerk(tape, a_cmd, prev, dt)?);
        }

        let mut step_vec: Option<Var> = None;
        for (k, term) in terms.iter().enumerate() {
            let Some(tv) = *term else { continue };
            let vals = tape.value(tv).data();
            if let Some(i) = vals.iter().position(|x| !x.is_finite()) {
                return Err(TrainError::NonFiniteLoss { term: LossTerms::NAMES[k], step: t, agent: i });
            }
            stats.term_sums[k] += vals.iter().sum::<f64>();
            let wt = tape.scale(tv, w[k] * ctx.loss_scale);
            step_vec = Some(match step_vec {
                Some(sv) => tape.add(sv, wt)?,
                None => wt,
            });
        }
        let step_sum = tape.sum(step_vec.expect("velocity term always present"));
        total = tape.add(total, step_sum)?;

        // Telemetry from plain values.
        let acc_now = vec_rows(tape.value(a_cmd));
        for i in 0..n {
            if nearest[i].min_clearance().is_some_and(|c| c <= 0.0) {
                violated[i] = true;
            }
            speed_acc[i] += v1_vals[i].norm();
            stats.acc_sum += acc_now[i].norm();
            stats.ground_sum += (scenario.agents[i].start[2] - p1_vals[i][2]).max(0.0);
        }
        stats.acc_n += n;
        stats.ground_n += n;
        if let Some(prev) = acc_hist.last() {
            for i in 0..n {
                stats.jerk_sum += ((acc_now[i] - prev[i]) / dt).norm();
            }
            stats.jerk_n += n;
        }
        if acc_hist.len() >= 2 {
            let (pp, p_) = (&acc_hist[acc_hist.len() - 2], &acc_hist[acc_hist.len() - 1]);
            for i in 0..n {
                stats.snap_sum += ((acc_now[i] - 2.0 * p_[i] + pp[i]) / (dt * dt)).norm();
            }
            stats.snap_n += n;
        }
        acc_hist.push(acc_now);
        if acc_hist.len() > 2 {
            acc_hist.remove(0);
        }

        // Fallback directions for the next step.
        for i in 0..n {
            let j = step.neighbor[i];
            if j != i {
                if let Some(u) = (p1_vals[j] - p1_vals[i]).try_normalize(0.0) {
                    fb_agent[i] = arr(u);
                }
            }
            if !obstacles.is_empty() {
                if let Some(u) = (obstacles[step.obstacle[i]].center - p1_vals[i]).try_normalize(0.0) {
                    fb_obstacle[i] = arr(u);
                }
            }
        }
        if record {
            recording.calls.push(call.clone());
            recording.steps.push(step);
        }

        a_cmd_prev = Some(a_cmd);
        a_cmd = a_cmd1;
        v_hat = v_hat1;
        v_target = call.v_target;
        p = p1;
        v = v1;
        a = a1;
        h = h1;
    }

    for i in 0..n {
        let mean_speed = speed_acc[i] / t_max as f64;
        stats.speed_sum += mean_speed;
        if !violated[i] {
            stats.safe_agents += 1;
            stats.ar_sum += mean_speed;
        }
    }
    Ok(RolloutOutput { loss: total, stats, recording: record.then_some(recording) })
}
