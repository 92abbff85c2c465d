use serde::{Deserialize, Serialize};

use crate::sim::{CollisionEvent, Scenario, Vec3};

/// Full state history of one evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub method: String,
    pub scenario: Scenario,
    pub noise_seed: u64,
    pub dt: f64,
    pub agent_radius: f64,
    pub margin: f64,
    /// Agents see and collide with one another.
    pub interactions: bool,
    /// `steps + 1` frames of per-agent positions, frame 0 at t = 0.
    pub positions: Vec<Vec<Vec3>>,
    pub velocities: Vec<Vec<Vec3>>,
    /// Commanded accelerations applied over each of the `steps` intervals.
    pub actions: Vec<Vec<Vec3>>,
    /// Frame at which each agent froze, if it did.
    pub frozen_at: Vec<Option<usize>>,
    /// Violation onsets, sorted by time.
    pub events: Vec<CollisionEvent>,
}

impl EpisodeRecord {
    pub fn steps(&self) -> usize {
        self.positions.len().saturating_sub(1)
    }

    pub fn n_agents(&self) -> usize {
        self.scenario.agents.len()
    }

    /// Simulated seconds.
    pub fn duration(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    /// First violation time of every agent.
    pub fn first_collision_times(&self) -> Vec<Option<f64>> {
        let mut out = vec![None; self.n_agents()];
        for e in &self.events {
            out[e.agent].get_or_insert(e.time);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Fraction of agents with no safety violation.
    pub success_rate: f64,
    /// Violation onsets per simulated second.
    pub collision_rate: f64,
    /// Mean first-violation time, episode duration for safe agents, seconds.
    pub mfct: f64,
    /// Mean speed over agent-frames before freezing, m/s.
    pub mean_speed: f64,
    /// Mean episode duration, seconds.
    pub duration: f64,
    pub agents: usize,
    pub safe_agents: usize,
    pub events: usize,
}

/// Pools every record: SR over all agents, CR as total onsets over total
/// simulated time, MFCT over all agents. Empty input gives NaN rates.
pub fn compute_metrics(records: &[EpisodeRecord]) -> MetricsReport {
    let (mut agents, mut safe, mut events) = (0usize, 0usize, 0usize);
    let (mut seconds, mut first_sum) = (0.0, 0.0);
    let (mut speed_sum, mut speed_n) = (0.0, 0usize);
    for r in records {
        let duration = r.duration();
        let first = r.first_collision_times();
        agents += first.len();
        safe += first.iter().filter(|f| f.is_none()).count();
        first_sum += first.iter().map(|f| f.unwrap_or(duration)).sum::<f64>();
        events += r.events.len();
        seconds += duration;
        for i in 0..r.n_agents() {
            let end = r.frozen_at[i].unwrap_or(r.steps() + 1).min(r.steps() + 1);
            for k in 1..end {
                speed_sum += r.velocities[k][i].norm();
                speed_n += 1;
            }
        }
    }
    let div = |a: f64, b: f64| if b > 0.0 { a / b } else if records.is_empty() { f64::NAN } else { 0.0 };
    MetricsReport {
        success_rate: div(safe as f64, agents as f64),
        collision_rate: div(events as f64, seconds),
        mfct: div(first_sum, agents as f64),
        mean_speed: div(speed_sum, speed_n as f64),
        duration: div(seconds, records.len() as f64),
        agents,
        safe_agents: safe,
        events,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{AgentSpec, Hazard};

    fn synthetic(n: usize, steps: usize, colliders: &[usize]) -> EpisodeRecord {
        let agents = (0..n)
            .map(|i| AgentSpec {
                start: Vec3::new(i as f64, 0.0, 1.5),
                goal: Vec3::new(i as f64, 5.0, 1.5),
                speed: 1.0,
                initial_velocity: Vec3::zeros(),
            })
            .collect();
        let events = colliders
            .iter()
            .enumerate()
            .map(|(k, &a)| CollisionEvent { step: 10 + k, time: 0.1 * (10 + k) as f64, agent: a, hazard: Hazard::Obstacle(0) })
            .collect();
        EpisodeRecord {
            method: "synthetic".into(),
            scenario: Scenario::custom(agents, vec![]),
            noise_seed: 0,
            dt: 0.1,
            agent_radius: 0.15,
            margin: 0.1,
            interactions: true,
            positions: vec![vec![Vec3::zeros(); n]; steps + 1],
            velocities: vec![vec![Vec3::new(1.0, 0.0, 0.0); n]; steps + 1],
            actions: vec![vec![Vec3::zeros(); n]; steps],
            frozen_at: (0..n).map(|i| colliders.iter().position(|&c| c == i).map(|k| 10 + k)).collect(),
            events,
        }
    }

    #[test]
    fn sixty_four_agents_four_colliding() {
        let r = compute_metrics(&[synthetic(64, 600, &[3, 17, 40, 63])]);
        assert_eq!(r.safe_agents, 60);
        assert_eq!((r.success_rate * 1000.0).round() / 10.0, 93.8);
        assert!((r.collision_rate - 4.0 / 60.0).abs() < 1e-12);
    }

    #[test]
    fn no_events_gives_full_duration() {
        let r = compute_metrics(&[synthetic(8, 50, &[])]);
        assert_eq!(r.success_rate, 1.0);
        assert_eq!(r.collision_rate, 0.0);
        assert!((r.mfct - 5.0).abs() < 1e-12);
        assert_eq!(r.mean_speed, 1.0);
    }

    #[test]
    fn success_and_mfct_bounds() {
        let r = compute_metrics(&[synthetic(10, 100, &[0, 5]), synthetic(10, 100, &[])]);
        assert_eq!(r.success_rate * r.agents as f64 + 2.0, r.agents as f64);
        assert!(r.mfct <= r.duration);
    }
}
