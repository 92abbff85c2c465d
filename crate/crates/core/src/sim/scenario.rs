use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{rng::stream_rng, yaw_matrix, DynamicsConfig, SimError, Vec3};

/// Static spherical obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Vec3,
    pub radius: f64,
}

/// Per-agent commanded cruise speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpeedSpec {
    Fixed { value: f64 },
    Uniform { lo: f64, hi: f64 },
}

/// Obstacle population: a density in obstacles per 100 m² of arena
/// footprint, or an explicit count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObstacleSpec {
    Density { per_100m2: f64 },
    Count { n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_agents: usize,
    /// Lower bound on the ring radius, meters.
    pub ring_radius: f64,
    /// The ring grows so neighbouring starts are at least this far apart
    /// along the circle, meters.
    pub agent_spacing: f64,
    pub obstacles: ObstacleSpec,
    /// Obstacle radius range, meters.
    pub obstacle_radius: [f64; 2],
    pub speed: SpeedSpec,
    /// Agents start moving toward the goal at this fraction of their speed.
    pub initial_speed_fraction: f64,
    /// Cruise altitude of starts, goals and obstacle centers, meters.
    pub altitude: f64,
    /// Arena footprint extends this far beyond the ring, meters.
    pub arena_padding: f64,
    /// Extra free space kept around every start and goal, meters.
    pub spawn_clearance: f64,
    pub retry_budget: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_agents: 8,
            ring_radius: 6.0,
            agent_spacing: 2.0,
            obstacles: ObstacleSpec::Density { per_100m2: 1.0 },
            obstacle_radius: [0.5, 1.5],
            speed: SpeedSpec::Uniform { lo: 0.75, hi: 3.25 },
            initial_speed_fraction: 0.0,
            altitude: 1.5,
            arena_padding: 2.0,
            spawn_clearance: 0.5,
            retry_budget: 10_000,
        }
    }
}

impl ScenarioConfig {
    pub fn effective_ring_radius(&self) -> f64 {
        let arc = self.n_agents as f64 * self.agent_spacing / std::f64::consts::TAU;
        self.ring_radius.max(arc)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_agents < 2 {
            return Err(SimError::Config(format!("circle swap needs at least 2 agents, got {}", self.n_agents)));
        }
        if !(self.ring_radius > 0.0) {
            return Err(SimError::Config(format!("ring_radius must be positive, got {}", self.ring_radius)));
        }
        let [lo, hi] = self.obstacle_radius;
        if !(lo > 0.0 && hi >= lo) {
            return Err(SimError::Config(format!("obstacle_radius range [{}, {}] invalid", lo, hi)));
        }
        match self.speed {
            SpeedSpec::Fixed { value } if !(value > 0.0) => {
                return Err(SimError::Config(format!("speed must be positive, got {}", value)))
            }
            SpeedSpec::Uniform { lo, hi } if !(lo > 0.0 && hi >= lo) => {
                return Err(SimError::Config(format!("speed range [{}, {}] invalid", lo, hi)))
            }
            _ => {}
        }
        if let ObstacleSpec::Density { per_100m2 } = self.obstacles {
            if !(per_100m2 >= 0.0) {
                return Err(SimError::Config(format!("obstacle density must be non-negative, got {}", per_100m2)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub start: Vec3,
    pub goal: Vec3,
    /// Commanded cruise speed, m/s.
    pub speed: f64,
    pub initial_velocity: Vec3,
}

impl AgentSpec {
    /// Heading the agent holds throughout the episode: toward its goal.
    pub fn yaw(&self) -> f64 {
        let d = self.goal - self.start;
        d[1].atan2(d[0])
    }
}

/// A replayable evaluation or training map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    /// Accumulated whole-scene yaw rotation, radians.
    pub rotation: f64,
    pub ring_radius: f64,
    pub arena_half_extent: f64,
    pub config: ScenarioConfig,
    pub agents: Vec<AgentSpec>,
    pub obstacles: Vec<Obstacle>,
}

impl Scenario {
    /// Hand-built scenario (tests, canned scenes).
    pub fn custom(agents: Vec<AgentSpec>, obstacles: Vec<Obstacle>) -> Self {
        let extent = agents
            .iter()
            .flat_map(|a| [a.start, a.goal])
            .chain(obstacles.iter().map(|o| o.center))
            .map(|p| p[0].abs().max(p[1].abs()))
            .fold(0.0, f64::max);
        Self {
            seed: 0,
            rotation: 0.0,
            ring_radius: extent,
            arena_half_extent: extent,
            config: ScenarioConfig { n_agents: agents.len(), ..Default::default() },
            agents,
            obstacles,
        }
    }

    pub fn to_text(&self) -> Result<String, SimError> {
        toml::to_string(self).map_err(|e| SimError::Format(e.to_string()))
    }

    pub fn from_text(s: &str) -> Result<Self, SimError> {
        toml::from_str(s).map_err(|e| SimError::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        std::fs::write(path, self.to_text()?).map_err(|e| SimError::Io(format!("{}: {}", path.display(), e)))
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let s = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {}", path.display(), e)))?;
        Self::from_text(&s)
    }

    /// All start, goal and obstacle-center points, for distance checks.
    pub fn points(&self) -> Vec<Vec3> {
        self.agents
            .iter()
            .flat_map(|a| [a.start, a.goal])
            .chain(self.obstacles.iter().map(|o| o.center))
            .collect()
    }
}

/// Agents evenly spaced on a ring, each heading for its antipode, with
/// obstacles sampled uniformly over the square arena footprint.
pub fn make_circle_swap(cfg: &ScenarioConfig, seed: u64, dynamics: &DynamicsConfig) -> Result<Scenario, SimError> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, &[0x5CE7_A210]);
    let radius = cfg.effective_ring_radius();
    let half = radius + cfg.arena_padding;
    let n = cfg.n_agents;
    let mut agents = Vec::with_capacity(n);
    for i in 0..n {
        let th = std::f64::consts::TAU * i as f64 / n as f64;
        let start = Vec3::new(radius * th.cos(), radius * th.sin(), cfg.altitude);
        let goal = Vec3::new(-start[0], -start[1], cfg.altitude);
        let speed = match cfg.speed {
            SpeedSpec::Fixed { value } => value,
            SpeedSpec::Uniform { lo, hi } => {
                if hi > lo {
                    rng.gen_range(lo..hi)
                } else {
                    lo
                }
            }
        };
        let dir = (goal - start).normalize();
        agents.push(AgentSpec { start, goal, speed, initial_velocity: dir * (speed * cfg.initial_speed_fraction) });
    }
    let count = match cfg.obstacles {
        ObstacleSpec::Count { n } => n,
        ObstacleSpec::Density { per_100m2 } => (per_100m2 * (2.0 * half) * (2.0 * half) / 100.0).round() as usize,
    };
    let body = dynamics.agent_radius + dynamics.margin + cfg.spawn_clearance;
    let mut obstacles = Vec::with_capacity(count);
    let mut attempts = 0;
    while obstacles.len() < count {
        if attempts >= cfg.retry_budget {
            return Err(SimError::Infeasible(format!(
                "placed {} of {} obstacles within {} attempts",
                obstacles.len(),
                count,
                cfg.retry_budget
            )));
        }
        attempts += 1;
        let center = Vec3::new(rng.gen_range(-half..half), rng.gen_range(-half..half), cfg.altitude);
        let [lo, hi] = cfg.obstacle_radius;
        let r = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let blocked = agents
            .iter()
            .flat_map(|a| [a.start, a.goal])
            .any(|q| (q - center).norm() < r + body);
        if !blocked {
            obstacles.push(Obstacle { center, radius: r });
        }
    }
    Ok(Scenario {
        seed,
        rotation: 0.0,
        ring_radius: radius,
        arena_half_extent: half,
        config: cfg.clone(),
        agents,
        obstacles,
    })
}

/// Rotates every spatial quantity of the scene about the world z-axis.
pub fn rotate_scene(scenario: &Scenario, psi: f64) -> Scenario {
    let r = yaw_matrix(psi);
    let mut out = scenario.clone();
    out.rotation += psi;
    for a in &mut out.agents {
        a.start = r * a.start;
        a.goal = r * a.goal;
        a.initial_velocity = r * a.initial_velocity;
    }
    for o in &mut out.obstacles {
        o.center = r * o.center;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, rho: f64) -> ScenarioConfig {
        ScenarioConfig { n_agents: n, obstacles: ObstacleSpec::Density { per_100m2: rho }, ..Default::default() }
    }

    #[test]
    fn two_agents_swap() {
        let s = make_circle_swap(&cfg(2, 0.0), 3, &DynamicsConfig::default()).unwrap();
        let (a, b) = (&s.agents[0], &s.agents[1]);
        assert!((a.start[1]).abs() < 1e-12 && a.start[0] > 0.0);
        assert!((b.start - Vec3::new(-a.start[0], 0.0, a.start[2])).norm() < 1e-12);
        assert!((a.goal - b.start).norm() < 1e-12);
        assert!((b.goal - a.start).norm() < 1e-12);
    }

    #[test]
    fn zero_density_has_no_obstacles() {
        let s = make_circle_swap(&cfg(8, 0.0), 1, &DynamicsConfig::default()).unwrap();
        assert!(s.obstacles.is_empty());
    }

    #[test]
    fn deterministic_per_seed() {
        let d = DynamicsConfig::default();
        let a = make_circle_swap(&cfg(16, 1.5), 42, &d).unwrap();
        let b = make_circle_swap(&cfg(16, 1.5), 42, &d).unwrap();
        let c = make_circle_swap(&cfg(16, 1.5), 43, &d).unwrap();
        assert_eq!(a.to_text().unwrap(), b.to_text().unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn spawns_keep_clearance() {
        let d = DynamicsConfig::default();
        let s = make_circle_swap(&cfg(16, 2.0), 9, &d).unwrap();
        assert!(!s.obstacles.is_empty());
        for o in &s.obstacles {
            for a in &s.agents {
                assert!((a.start - o.center).norm() > o.radius + d.agent_radius + d.margin);
                assert!((a.goal - o.center).norm() > o.radius + d.agent_radius + d.margin);
            }
        }
    }

    #[test]
    fn infeasible_density_errors() {
        let c = ScenarioConfig { retry_budget: 50, ..cfg(64, 200.0) };
        match make_circle_swap(&c, 0, &DynamicsConfig::default()) {
            Err(SimError::Infeasible(_)) => {}
            other => panic!("expected infeasible, got {:?}", other.map(|s| s.obstacles.len())),
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let s = make_circle_swap(&cfg(6, 1.0), 5, &DynamicsConfig::default()).unwrap();
        let text = s.to_text().unwrap();
        let back = Scenario::from_text(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_text().unwrap(), text);
    }

    #[test]
    fn rotation_examples() {
        let s = Scenario::custom(
            vec![AgentSpec {
                start: Vec3::new(1.0, 0.0, 0.0),
                goal: Vec3::new(-1.0, 0.0, 0.0),
                speed: 1.0,
                initial_velocity: Vec3::zeros(),
            }],
            vec![],
        );
        assert_eq!(rotate_scene(&s, 0.0).agents, s.agents);
        let r = rotate_scene(&s, std::f64::consts::FRAC_PI_2);
        assert!((r.agents[0].start - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }
}
