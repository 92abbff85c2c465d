//! Classical controllers with privileged neighbour state: attractive and
//! repulsive potential fields, and dynamic-window sampling.

use serde::{Deserialize, Serialize};

use crate::sim::{
    agent_clearance, clamp_norm, goal_velocity_world, integrate_step, obstacle_clearance, DynamicsConfig, Obstacle, Vec3,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Neighbour position minus own position.
    pub rel_p: Vec3,
    /// Neighbour velocity minus own velocity.
    pub rel_v: Vec3,
}

/// Exact own state plus every neighbour and obstacle within the sensing
/// radius. Obstacle centers are relative to the agent.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivilegedObservation {
    pub position: Vec3,
    pub velocity: Vec3,
    pub neighbors: Vec<Neighbor>,
    pub obstacles: Vec<Obstacle>,
}

impl PrivilegedObservation {
    /// Gathers the hazards within `radius` (center distance) of agent `me`.
    /// Agents flagged inactive are not reported.
    pub fn gather(me: usize, positions: &[Vec3], velocities: &[Vec3], visible: &[bool], obstacles: &[Obstacle], radius: f64) -> Self {
        let p = positions[me];
        let v = velocities[me];
        let neighbors = (0..positions.len())
            .filter(|&j| j != me && visible[j] && (positions[j] - p).norm() <= radius)
            .map(|j| Neighbor { rel_p: positions[j] - p, rel_v: velocities[j] - v })
            .collect();
        let obstacles = obstacles
            .iter()
            .filter(|o| (o.center - p).norm() - o.radius <= radius)
            .map(|o| Obstacle { center: o.center - p, radius: o.radius })
            .collect();
        Self { position: p, velocity: v, neighbors, obstacles }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApfConfig {
    /// Velocity-tracking gain toward the goal command, 1/s.
    pub k_att: f64,
    pub k_rep: f64,
    /// Clearance below which a hazard repels, meters.
    pub influence: f64,
    /// Clearance floor in the repulsion law, meters.
    pub min_distance: f64,
}

impl Default for ApfConfig {
    fn default() -> Self {
        Self { k_att: 1.5, k_rep: 0.5, influence: 1.5, min_distance: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DwaConfig {
    /// Horizontal directions, evenly spaced from the goal bearing.
    pub directions: usize,
    /// Magnitudes, evenly spaced fractions of `a_max`.
    pub magnitudes: usize,
    /// Forward-simulation horizon, seconds.
    pub horizon: f64,
    pub w_goal: f64,
    pub w_clear: f64,
    pub w_speed: f64,
    /// Clearance above which the clearance score saturates, meters.
    pub clearance_cap: f64,
}

impl Default for DwaConfig {
    fn default() -> Self {
        Self { directions: 16, magnitudes: 3, horizon: 1.5, w_goal: 1.0, w_clear: 1.0, w_speed: 0.3, clearance_cap: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Sensing radius of the privileged observation, meters.
    pub sensing_radius: f64,
    /// Cruise speed the controllers track, independent of the scenario's
    /// commanded speed, m/s.
    pub cruise_speed: f64,
    pub apf: ApfConfig,
    pub dwa: DwaConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { sensing_radius: 24.0, cruise_speed: 1.5, apf: ApfConfig::default(), dwa: DwaConfig::default() }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<(), String> {
        let a = &self.apf;
        let d = &self.dwa;
        let gains = [
            ("sensing_radius", self.sensing_radius),
            ("cruise_speed", self.cruise_speed),
            ("apf.k_att", a.k_att),
            ("apf.k_rep", a.k_rep),
            ("apf.influence", a.influence),
            ("apf.min_distance", a.min_distance),
            ("dwa.horizon", d.horizon),
            ("dwa.w_goal", d.w_goal),
            ("dwa.w_clear", d.w_clear),
            ("dwa.w_speed", d.w_speed),
            ("dwa.clearance_cap", d.clearance_cap),
        ];
        for (name, v) in gains {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(format!("baseline.{} must be finite and non-negative, got {}", name, v));
            }
        }
        if d.directions == 0 || d.magnitudes == 0 {
            return Err("baseline.dwa needs at least one direction and one magnitude".into());
        }
        if !(a.min_distance > 0.0) {
            return Err("baseline.apf.min_distance must be positive".into());
        }
        Ok(())
    }
}

/// Margin-adjusted clearance and unit direction away from every sensed
/// hazard.
fn hazards(obs: &PrivilegedObservation, dynamics: &DynamicsConfig) -> Vec<(f64, Vec3)> {
    let (r, m) = (dynamics.agent_radius, dynamics.margin);
    let away = |rel: Vec3| (-rel).try_normalize(0.0).unwrap_or_else(Vec3::x);
    obs.neighbors
        .iter()
        .map(|nb| (agent_clearance(Vec3::zeros(), nb.rel_p, r, m), away(nb.rel_p)))
        .chain(obs.obstacles.iter().map(|o| (obstacle_clearance(Vec3::zeros(), o, r, m), away(o.center))))
        .collect()
}

/// Velocity-tracking attraction toward the speed-clamped goal command plus
/// the sum of repulsive gradients, clamped to `a_max`.
pub fn apf_step(obs: &PrivilegedObservation, goal: Vec3, cfg: &BaselineConfig, dynamics: &DynamicsConfig) -> Vec3 {
    let a = &cfg.apf;
    let v_star = goal_velocity_world(obs.position, goal, cfg.cruise_speed, dynamics.goal_gain);
    let mut cmd = (v_star - obs.velocity) * a.k_att;
    for (d, dir) in hazards(obs, dynamics) {
        if d < a.influence {
            let d = d.max(a.min_distance);
            cmd += dir * (a.k_rep * (1.0 / d - 1.0 / a.influence) / (d * d));
        }
    }
    clamp_norm(cmd, dynamics.a_max)
}

/// Candidate accelerations in index order: direction-major, magnitudes
/// `a_max·(k+1)/magnitudes`, directions at `2πj/directions` from the goal
/// bearing in the horizontal plane.
pub fn dwa_candidates(obs: &PrivilegedObservation, goal: Vec3, cfg: &DwaConfig, a_max: f64) -> Vec<Vec3> {
    let g = goal - obs.position;
    let base = if g[0] == 0.0 && g[1] == 0.0 { 0.0 } else { g[1].atan2(g[0]) };
    let mut out = Vec::with_capacity(cfg.directions * cfg.magnitudes);
    for j in 0..cfg.directions {
        let th = base + std::f64::consts::TAU * j as f64 / cfg.directions as f64;
        for k in 0..cfg.magnitudes {
            let mag = a_max * (k + 1) as f64 / cfg.magnitudes as f64;
            out.push(Vec3::new(th.cos(), th.sin(), 0.0) * mag);
        }
    }
    out
}

/// Score of holding `a_cmd` over the horizon, or `None` when the simulated
/// trajectory violates the margin against any sensed hazard.
pub fn dwa_score(obs: &PrivilegedObservation, goal: Vec3, a_cmd: Vec3, cfg: &BaselineConfig, dynamics: &DynamicsConfig) -> Option<f64> {
    let d = &cfg.dwa;
    let dt = dynamics.dt;
    let steps = ((d.horizon / dt).round() as usize).max(1);
    let (r, m) = (dynamics.agent_radius, dynamics.margin);
    let (mut p, mut v) = (Vec3::zeros(), obs.velocity);
    let mut a = a_cmd - v * dynamics.drag;
    let mut min_clear = f64::INFINITY;
    for s in 1..=steps {
        let v_pred = v + a * dt;
        let a_next = a_cmd - v_pred * dynamics.drag;
        let (p1, v1) = integrate_step(p, v, a, a_next, dt);
        p = p1;
        v = v1;
        a = a_next;
        let t = s as f64 * dt;
        for nb in &obs.neighbors {
            min_clear = min_clear.min(agent_clearance(p, nb.rel_p + (nb.rel_v + obs.velocity) * t, r, m));
        }
        for o in &obs.obstacles {
            min_clear = min_clear.min(obstacle_clearance(p, o, r, m));
        }
        if min_clear <= 0.0 {
            return None;
        }
    }
    let g = goal - obs.position;
    let progress = g.norm() - (g - p).norm();
    let clear = min_clear.min(d.clearance_cap);
    let speed = -(v.norm() - cfg.cruise_speed).abs();
    Some(d.w_goal * progress + d.w_clear * clear + d.w_speed * speed)
}

/// Full braking: `a_max` against the current velocity.
pub fn braking_command(velocity: Vec3, a_max: f64) -> Vec3 {
    velocity.try_normalize(0.0).map_or(Vec3::zeros(), |u| -u * a_max)
}

/// Highest-scoring candidate (lowest index on ties); braking when every
/// candidate collides.
pub fn dwa_step(obs: &PrivilegedObservation, goal: Vec3, cfg: &BaselineConfig, dynamics: &DynamicsConfig) -> Vec3 {
    let mut best: Option<(f64, Vec3)> = None;
    for c in dwa_candidates(obs, goal, &cfg.dwa, dynamics.a_max) {
        if let Some(s) = dwa_score(obs, goal, c, cfg, dynamics) {
            if best.map_or(true, |(b, _)| s > b) {
                best = Some((s, c));
            }
        }
    }
    best.map_or_else(|| braking_command(obs.velocity, dynamics.a_max), |(_, c)| c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::yaw_matrix;
    use proptest::prelude::*;

    fn free(p: Vec3, v: Vec3) -> PrivilegedObservation {
        PrivilegedObservation { position: p, velocity: v, neighbors: vec![], obstacles: vec![] }
    }

    #[test]
    fn apf_free_space_points_at_goal() {
        let cfg = BaselineConfig::default();
        let dy = DynamicsConfig::default();
        let goal = Vec3::new(4.0, 3.0, 1.5);
        let obs = free(Vec3::new(0.0, 0.0, 1.5), Vec3::zeros());
        let a = apf_step(&obs, goal, &cfg, &dy);
        let dir = (goal - obs.position).normalize();
        assert!((a.normalize() - dir).norm() < 1e-12);
        assert_eq!(apf_step(&free(goal, Vec3::zeros()), goal, &cfg, &dy), Vec3::zeros());
    }

    #[test]
    fn apf_mirror_hazards_cancel() {
        let cfg = BaselineConfig::default();
        let dy = DynamicsConfig::default();
        let goal = Vec3::new(5.0, 0.0, 1.5);
        let mut obs = free(Vec3::new(0.0, 0.0, 1.5), Vec3::new(0.5, 0.0, 0.0));
        obs.obstacles = vec![
            Obstacle { center: Vec3::new(0.8, 0.6, 0.0), radius: 0.3 },
            Obstacle { center: Vec3::new(0.8, -0.6, 0.0), radius: 0.3 },
        ];
        let a = apf_step(&obs, goal, &cfg, &dy);
        assert!(a[1].abs() < 1e-12 && a[2].abs() < 1e-12);
        let lone = PrivilegedObservation { obstacles: vec![obs.obstacles[0]], ..obs.clone() };
        assert!(apf_step(&lone, goal, &cfg, &dy)[1] < 0.0);
    }

    #[test]
    fn dwa_free_space_maximizes_progress() {
        let cfg = BaselineConfig::default();
        let dy = DynamicsConfig::default();
        let goal = Vec3::new(10.0, 0.0, 1.5);
        let obs = free(Vec3::new(0.0, 0.0, 1.5), Vec3::zeros());
        let a = dwa_step(&obs, goal, &cfg, &dy);
        assert!(a[0] > 0.0 && a[1].abs() < 1e-9);
    }

    #[test]
    fn dwa_wall_ahead_turns() {
        let cfg = BaselineConfig::default();
        let dy = DynamicsConfig::default();
        let goal = Vec3::new(10.0, 0.0, 1.5);
        let mut obs = free(Vec3::new(0.0, 0.0, 1.5), Vec3::new(1.5, 0.0, 0.0));
        obs.obstacles = (-3..=3).map(|k| Obstacle { center: Vec3::new(2.0, 0.4 * k as f64, 0.0), radius: 0.3 }).collect();
        let a = dwa_step(&obs, goal, &cfg, &dy);
        let cands = dwa_candidates(&obs, goal, &cfg.dwa, dy.a_max);
        // Exhaustive re-scoring: the forward candidates all collide.
        for c in cands.iter().take(cfg.dwa.magnitudes) {
            assert!(dwa_score(&obs, goal, *c, &cfg, &dy).is_none());
        }
        assert!(a.normalize().dot(&Vec3::x()) < 0.99);
    }

    #[test]
    fn dwa_all_blocked_brakes() {
        let cfg = BaselineConfig::default();
        let dy = DynamicsConfig::default();
        let mut obs = free(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0));
        obs.obstacles = vec![Obstacle { center: Vec3::zeros(), radius: 0.2 }];
        assert_eq!(dwa_step(&obs, Vec3::new(5.0, 0.0, 0.0), &cfg, &dy), Vec3::new(-6.0, 0.0, 0.0));
    }

    #[test]
    fn dwa_ties_pick_lowest_index() {
        // Goal at the agent: every direction with the same magnitude scores
        // alike up to rounding, and repeated calls agree bitwise.
        let cfg = BaselineConfig { dwa: DwaConfig { w_goal: 0.0, w_clear: 0.0, w_speed: 0.0, ..Default::default() }, ..Default::default() };
        let dy = DynamicsConfig::default();
        let obs = free(Vec3::zeros(), Vec3::zeros());
        let a = dwa_step(&obs, Vec3::new(3.0, 0.0, 0.0), &cfg, &dy);
        assert_eq!(a, dwa_candidates(&obs, Vec3::new(3.0, 0.0, 0.0), &cfg.dwa, dy.a_max)[0]);
        assert_eq!(a, dwa_step(&obs, Vec3::new(3.0, 0.0, 0.0), &cfg, &dy));
    }

    /// Independent forward simulation and scoring, written without the
    /// crate's integrator helpers.
    fn oracle_argmax(obs: &PrivilegedObservation, goal: Vec3, cfg: &BaselineConfig, dy: &DynamicsConfig) -> Vec3 {
        let d = &cfg.dwa;
        let dt = dy.dt;
        let steps = (d.horizon / dt).round() as usize;
        let g = goal - obs.position;
        let base = g[1].atan2(g[0]);
        let mut best = (f64::NEG_INFINITY, None);
        for j in 0..d.directions {
            for k in 0..d.magnitudes {
                let th = base + 2.0 * std::f64::consts::PI * j as f64 / d.directions as f64;
                let c = Vec3::new(th.cos(), th.sin(), 0.0) * (dy.a_max * (k + 1) as f64 / d.magnitudes as f64);
                let (mut p, mut v) = (Vec3::zeros(), obs.velocity);
                let mut a = c - dy.drag * v;
                let mut mc = f64::INFINITY;
                let mut dead = false;
                for s in 1..=steps {
                    let an = c - dy.drag * (v + dt * a);
                    p += dt * v + 0.5 * dt * dt * a;
                    v += 0.5 * dt * (a + an);
                    a = an;
                    let t = dt * s as f64;
                    for nb in &obs.neighbors {
                        let q = nb.rel_p + t * (nb.rel_v + obs.velocity);
                        mc = mc.min((q - p).norm() - 2.0 * dy.agent_radius - dy.margin);
                    }
                    for o in &obs.obstacles {
                        mc = mc.min((o.center - p).norm() - o.radius - dy.agent_radius - dy.margin);
                    }
                    if mc <= 0.0 {
                        dead = true;
                        break;
                    }
                }
                if dead {
                    continue;
                }
                let s = d.w_goal * (g.norm() - (g - p).norm()) + d.w_clear * mc.min(d.clearance_cap) - d.w_speed * (v.norm() - cfg.cruise_speed).abs();
                if s > best.0 {
                    best = (s, Some(c));
                }
            }
        }
        best.1.unwrap_or_else(|| braking_command(obs.velocity, dy.a_max))
    }

    fn arb_obs() -> impl Strategy<Value = (PrivilegedObservation, Vec3)> {
        let v3 = |r: f64| (-r..r, -r..r).prop_map(|(x, y)| Vec3::new(x, y, 0.0));
        (
            v3(2.0),
            proptest::collection::vec((v3(5.0), v3(2.0)), 0..4),
            proptest::collection::vec((v3(5.0), 0.2..1.0f64), 0..4),
            v3(8.0),
        )
            .prop_map(|(vel, nbs, obst, goal)| {
                let obs = PrivilegedObservation {
                    position: Vec3::zeros(),
                    velocity: vel,
                    neighbors: nbs.into_iter().map(|(p, v)| Neighbor { rel_p: p, rel_v: v }).collect(),
                    obstacles: obst.into_iter().map(|(c, r)| Obstacle { center: c, radius: r }).collect(),
                };
                (obs, goal + Vec3::new(0.5, 0.0, 0.0))
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn dwa_matches_exhaustive_oracle((obs, goal) in arb_obs()) {
            let cfg = BaselineConfig::default();
            let dy = DynamicsConfig::default();
            let a = dwa_step(&obs, goal, &cfg, &dy);
            let b = oracle_argmax(&obs, goal, &cfg, &dy);
            prop_assert!((a - b).norm() < 1e-9, "{:?} vs {:?}", a, b);
        }

        #[test]
        fn apf_rotation_equivariant((obs, goal) in arb_obs(), psi in -3.0..3.0f64) {
            let cfg = BaselineConfig::default();
            let dy = DynamicsConfig::default();
            let r = yaw_matrix(psi);
            let rot = PrivilegedObservation {
                position: r * obs.position,
                velocity: r * obs.velocity,
                neighbors: obs.neighbors.iter().map(|n| Neighbor { rel_p: r * n.rel_p, rel_v: r * n.rel_v }).collect(),
                obstacles: obs.obstacles.iter().map(|o| Obstacle { center: r * o.center, radius: o.radius }).collect(),
            };
            let a = apf_step(&obs, goal, &cfg, &dy);
            let b = apf_step(&rot, r * goal, &cfg, &dy);
            prop_assert!((r * a - b).norm() < 1e-9);
        }

        #[test]
        fn controllers_are_pure((obs, goal) in arb_obs()) {
            let cfg = BaselineConfig::default();
            let dy = DynamicsConfig::default();
            prop_assert_eq!(apf_step(&obs, goal, &cfg, &dy), apf_step(&obs, goal, &cfg, &dy));
            prop_assert_eq!(dwa_step(&obs, goal, &cfg, &dy), dwa_step(&obs, goal, &cfg, &dy));
        }
    }
}
