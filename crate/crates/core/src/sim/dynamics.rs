use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{SimError, Vec3};

/// Point-mass quadrotor dynamics and body geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    /// Control period, seconds.
    pub dt: f64,
    /// Linear drag coefficient, 1/s.
    pub drag: f64,
    /// Std of the per-step Gaussian acceleration perturbation, m/s².
    pub noise_std: f64,
    /// Norm clamp applied to commanded accelerations, m/s².
    pub a_max: f64,
    /// Body radius, meters.
    pub agent_radius: f64,
    /// Safety margin added to every clearance test, meters.
    pub margin: f64,
    /// Proportional slow-down gain of the goal velocity command, 1/s.
    pub goal_gain: f64,
    /// Gravity used to derive the kinematic body tilt, m/s².
    pub gravity: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            drag: 0.3,
            noise_std: 0.1,
            a_max: 6.0,
            agent_radius: 0.15,
            margin: 0.1,
            goal_gain: 1.0,
            gravity: 9.81,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0) {
            return Err(SimError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        let non_negative = [
            ("drag", self.drag),
            ("noise_std", self.noise_std),
            ("a_max", self.a_max),
            ("agent_radius", self.agent_radius),
            ("margin", self.margin),
            ("goal_gain", self.goal_gain),
            ("gravity", self.gravity),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SimError::Config(format!("{} must be finite and non-negative, got {}", name, v)));
            }
        }
        Ok(())
    }
}

/// Scales `a` down to norm at most `max`.
pub fn clamp_norm(a: Vec3, max: f64) -> Vec3 {
    let n = a.norm();
    if n > max {
        a * (max / n)
    } else {
        a
    }
}

/// Net acceleration from a (pre-clamped) command, linear drag and a
/// perturbation: `a_cmd − c_d·v + ξ`.
pub fn apply_dynamics(a_cmd: Vec3, v: Vec3, xi: Vec3, drag: f64) -> Vec3 {
    a_cmd - v * drag + xi
}

/// Second-order update: position uses the current acceleration, velocity the
/// trapezoidal mean of the current and next accelerations.
pub fn integrate_step(p: Vec3, v: Vec3, a_t: Vec3, a_next: Vec3, dt: f64) -> (Vec3, Vec3) {
    (integrate_position(p, v, a_t, dt), integrate_velocity(v, a_t, a_next, dt))
}

pub fn integrate_position(p: Vec3, v: Vec3, a_t: Vec3, dt: f64) -> Vec3 {
    p + v * dt + a_t * (0.5 * dt * dt)
}

pub fn integrate_velocity(v: Vec3, a_t: Vec3, a_next: Vec3, dt: f64) -> Vec3 {
    v + (a_t + a_next) * (0.5 * dt)
}

/// Velocity at which the next acceleration is evaluated, before the
/// trapezoidal correction is known.
pub fn predict_velocity(v: Vec3, a_t: Vec3, dt: f64) -> Vec3 {
    v + a_t * dt
}

pub fn sample_perturbation<R: Rng>(rng: &mut R, std: f64) -> Vec3 {
    if std == 0.0 {
        return Vec3::zeros();
    }
    let mut s = || rng.sample::<f64, _>(StandardNormal) * std;
    Vec3::new(s(), s(), s())
}
