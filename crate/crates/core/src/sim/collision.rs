use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Obstacle, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum Hazard {
    Agent(usize),
    Obstacle(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub step: usize,
    /// Simulation time, seconds.
    pub time: f64,
    pub agent: usize,
    pub hazard: Hazard,
}

/// Margin-adjusted clearance of agent `i` to agent `j`.
pub fn agent_clearance(pi: Vec3, pj: Vec3, r_a: f64, margin: f64) -> f64 {
    (pi - pj).norm() - 2.0 * r_a - margin
}

pub fn obstacle_clearance(p: Vec3, o: &Obstacle, r_a: f64, margin: f64) -> f64 {
    (p - o.center).norm() - r_a - o.radius - margin
}

/// Nearest hazard of each kind for one agent, with its clearance.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Nearest {
    pub agent: Option<(usize, f64)>,
    pub obstacle: Option<(usize, f64)>,
}

impl Nearest {
    pub fn min_clearance(&self) -> Option<f64> {
        match (self.agent, self.obstacle) {
            (Some((_, a)), Some((_, o))) => Some(a.min(o)),
            (Some((_, a)), None) => Some(a),
            (None, Some((_, o))) => Some(o),
            (None, None) => None,
        }
    }
}

/// Nearest neighbour and nearest obstacle of every agent. Agents with
/// `active[j] == false` are invisible to others; with `interactions` off
/// agents ignore each other entirely.
pub fn nearest_hazards(
    positions: &[Vec3],
    active: &[bool],
    interactions: bool,
    obstacles: &[Obstacle],
    r_a: f64,
    margin: f64,
) -> Vec<Nearest> {
    let n = positions.len();
    let mut out = vec![Nearest::default(); n];
    for i in 0..n {
        if interactions {
            for j in 0..n {
                if j == i || !active[j] {
                    continue;
                }
                let c = agent_clearance(positions[i], positions[j], r_a, margin);
                if out[i].agent.map_or(true, |(_, b)| c < b) {
                    out[i].agent = Some((j, c));
                }
            }
        }
        for (k, o) in obstacles.iter().enumerate() {
            let c = obstacle_clearance(positions[i], o, r_a, margin);
            if out[i].obstacle.map_or(true, |(_, b)| c < b) {
                out[i].obstacle = Some((k, c));
            }
        }
    }
    out
}

fn cell_of(p: Vec3, size: f64) -> (i64, i64, i64) {
    ((p[0] / size).floor() as i64, (p[1] / size).floor() as i64, (p[2] / size).floor() as i64)
}

/// For each agent, the hazard it currently violates (clearance ≤ 0), if any.
/// Among several, the one with the smallest clearance wins, agents before
/// obstacles on ties. Agent pairs are found through a uniform grid.
pub fn detect_collisions(
    positions: &[Vec3],
    active: &[bool],
    interactions: bool,
    obstacles: &[Obstacle],
    r_a: f64,
    margin: f64,
) -> Vec<Option<Hazard>> {
    let n = positions.len();
    let mut best: Vec<Option<(Hazard, f64)>> = vec![None; n];
    let offer = |i: usize, h: Hazard, c: f64, best: &mut Vec<Option<(Hazard, f64)>>| {
        if c <= 0.0 && best[i].map_or(true, |(_, b)| c < b) {
            best[i] = Some((h, c));
        }
    };
    if interactions && n > 1 {
        let size = (2.0 * r_a + margin).max(1e-6);
        let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (j, &p) in positions.iter().enumerate() {
            if active[j] {
                grid.entry(cell_of(p, size)).or_default().push(j);
            }
        }
        for i in 0..n {
            if !active[i] {
                continue;
            }
            let (cx, cy, cz) = cell_of(positions[i], size);
            let mut cand = Vec::new();
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(v) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                            cand.extend(v.iter().copied().filter(|&j| j != i));
                        }
                    }
                }
            }
            cand.sort_unstable();
            for j in cand {
                offer(i, Hazard::Agent(j), agent_clearance(positions[i], positions[j], r_a, margin), &mut best);
            }
        }
    }
    for i in 0..n {
        if !active[i] {
            continue;
        }
        for (k, o) in obstacles.iter().enumerate() {
            offer(i, Hazard::Obstacle(k), obstacle_clearance(positions[i], o, r_a, margin), &mut best);
        }
    }
    best.into_iter().map(|b| b.map(|(h, _)| h)).collect()
}

/// Turns per-step violation flags into onset events. A new event needs at
/// least one clear step since the previous one for the same agent.
#[derive(Debug, Clone)]
pub struct CollisionTracker {
    in_violation: Vec<bool>,
    first: Vec<Option<f64>>,
    events: Vec<CollisionEvent>,
}

impl CollisionTracker {
    pub fn new(n_agents: usize) -> Self {
        Self { in_violation: vec![false; n_agents], first: vec![None; n_agents], events: Vec::new() }
    }

    /// Records one step; returns the agents with a new event.
    pub fn update(&mut self, step: usize, time: f64, violations: &[Option<Hazard>]) -> Vec<usize> {
        let mut onset = Vec::new();
        for (i, v) in violations.iter().enumerate() {
            match v {
                Some(h) if !self.in_violation[i] => {
                    self.events.push(CollisionEvent { step, time, agent: i, hazard: *h });
                    self.first[i].get_or_insert(time);
                    self.in_violation[i] = true;
                    onset.push(i);
                }
                Some(_) => {}
                None => self.in_violation[i] = false,
            }
        }
        onset
    }

    pub fn events(&self) -> &[CollisionEvent] {
        &self.events
    }

    pub fn first_collision_times(&self) -> &[Option<f64>] {
        &self.first
    }

    pub fn into_events(self) -> Vec<CollisionEvent> {
        self.events
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn far_apart_no_event() {
        let p = [Vec3::zeros(), Vec3::new(10.0, 0.0, 0.0)];
        let v = detect_collisions(&p, &[true, true], true, &[], 0.15, 0.1);
        assert_eq!(v, vec![None, None]);
    }

    #[test]
    fn overlap_emits_event() {
        let p = [Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0)];
        let v = detect_collisions(&p, &[true, true], true, &[], 0.15, 0.1);
        assert_eq!(v, vec![Some(Hazard::Agent(1)), Some(Hazard::Agent(0))]);
        let mut t = CollisionTracker::new(2);
        assert_eq!(t.update(3, 0.3, &v), vec![0, 1]);
        assert_eq!(t.events()[0].step, 3);
    }

    #[test]
    fn onsets_need_a_clear_step() {
        let hit = [Some(Hazard::Obstacle(0))];
        let mut t = CollisionTracker::new(1);
        t.update(0, 0.0, &hit);
        t.update(1, 0.1, &hit);
        t.update(2, 0.2, &[None]);
        t.update(3, 0.3, &hit);
        assert_eq!(t.events().len(), 2);
        assert_eq!(t.first_collision_times()[0], Some(0.0));
    }

    #[test]
    fn interactions_off_ignores_agents() {
        let p = [Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0)];
        let v = detect_collisions(&p, &[true, true], false, &[], 0.15, 0.1);
        assert_eq!(v, vec![None, None]);
    }

    /// All-pairs oracle for the grid detector.
    fn brute_force(p: &[Vec3], obs: &[Obstacle], r_a: f64, margin: f64) -> Vec<bool> {
        (0..p.len())
            .map(|i| {
                (0..p.len()).any(|j| j != i && (p[i] - p[j]).norm() - 2.0 * r_a - margin <= 0.0)
                    || obs.iter().any(|o| (p[i] - o.center).norm() - r_a - o.radius - margin <= 0.0)
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn grid_matches_brute_force(
            pts in proptest::collection::vec((-3.0..3.0f64, -3.0..3.0f64, 0.0..2.0f64), 2..40),
            obs in proptest::collection::vec((-3.0..3.0f64, -3.0..3.0f64, 0.2..0.8f64), 0..5),
        ) {
            let p: Vec<Vec3> = pts.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
            let o: Vec<Obstacle> = obs.iter().map(|&(x, y, r)| Obstacle { center: Vec3::new(x, y, 1.0), radius: r }).collect();
            let active = vec![true; p.len()];
            let got: Vec<bool> = detect_collisions(&p, &active, true, &o, 0.15, 0.1).iter().map(|h| h.is_some()).collect();
            prop_assert_eq!(got, brute_force(&p, &o, 0.15, 0.1));
        }
    }
}
