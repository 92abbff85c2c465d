use crate::sim::{goal_velocity_command, Mat3, Vec3};

use super::STATE_DIM;

/// Onboard state: velocity, goal command and body up-axis, all in the yaw
/// frame, plus the normalized safety margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector {
    pub v_local: Vec3,
    pub v_cmd: Vec3,
    pub tilt: Vec3,
    pub margin: f64,
}

impl StateVector {
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        let (a, b, c) = (self.v_local, self.v_cmd, self.tilt);
        [a[0], a[1], a[2], b[0], b[1], b[2], c[0], c[1], c[2], self.margin]
    }
}

/// Safety margin feature: nearest margin-adjusted clearance capped at
/// `d_max`, divided by `d_max`. No hazard in range reads 1.
pub fn normalized_margin(clearance: Option<f64>, d_max: f64) -> f64 {
    clearance.map_or(1.0, |c| c.min(d_max) / d_max)
}

#[allow(clippy::too_many_arguments)]
pub fn build_state_vector(
    p: Vec3,
    v: Vec3,
    r_body: &Mat3,
    r_yaw: &Mat3,
    goal: Vec3,
    v_max: f64,
    k_p: f64,
    clearance: Option<f64>,
    d_max: f64,
) -> StateVector {
    StateVector {
        v_local: r_yaw.transpose() * v,
        v_cmd: goal_velocity_command(p, goal, v_max, k_p, r_yaw),
        tilt: r_yaw.transpose() * (r_body * Vec3::z()),
        margin: normalized_margin(clearance, d_max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{attitude_from_accel, rotate_scene, yaw_matrix, AgentSpec, Obstacle, Scenario};

    #[test]
    fn hover_at_goal() {
        let g = Vec3::new(1.0, 2.0, 1.5);
        let s = build_state_vector(g, Vec3::zeros(), &Mat3::identity(), &Mat3::identity(), g, 2.0, 1.0, Some(3.0), 24.0);
        assert_eq!(s.to_array(), [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.125]);
    }

    #[test]
    fn level_flight_local_velocity() {
        let s = build_state_vector(
            Vec3::zeros(),
            Vec3::new(1.0, 0.0, 0.0),
            &Mat3::identity(),
            &Mat3::identity(),
            Vec3::new(5.0, 0.0, 0.0),
            1.0,
            1.0,
            None,
            24.0,
        );
        assert_eq!(s.v_local, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(s.margin, 1.0);
    }

    #[test]
    fn invariant_under_scene_yaw() {
        let agent = AgentSpec {
            start: Vec3::new(3.0, 1.0, 1.5),
            goal: Vec3::new(-3.0, -1.0, 1.5),
            speed: 1.5,
            initial_velocity: Vec3::new(-0.5, 0.2, 0.1),
        };
        let scene = Scenario::custom(vec![agent], vec![Obstacle { center: Vec3::zeros(), radius: 1.0 }]);
        let build = |sc: &Scenario| {
            let a = &sc.agents[0];
            let ry = yaw_matrix(a.yaw());
            let accel = yaw_matrix(sc.rotation) * Vec3::new(0.4, -0.3, 0.2);
            let rb = attitude_from_accel(&ry, accel, 9.81);
            build_state_vector(a.start, a.initial_velocity, &rb, &ry, a.goal, a.speed, 1.0, Some(2.0), 24.0)
        };
        let base = build(&scene);
        for psi in [0.3, -1.1, 2.5] {
            let rot = build(&rotate_scene(&scene, psi));
            assert!((rot.v_local - base.v_local).norm() < 1e-12);
            assert!((rot.v_cmd - base.v_cmd).norm() < 1e-12);
            assert!((rot.tilt - base.tilt).norm() < 1e-12);
            assert_eq!(rot.margin, base.margin);
            assert!((rot.tilt.norm() - 1.0).abs() < 1e-12);
        }
    }
}
