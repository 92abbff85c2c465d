use super::{Mat3, Vec3};

/// Rotation by `psi` about the world z-axis.
pub fn yaw_matrix(psi: f64) -> Mat3 {
    let (s, c) = psi.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation by `theta` about the body y-axis (nose down for positive theta).
pub fn pitch_matrix(theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

const VERTICAL_TOL: f64 = 1e-6;

/// Heading-only frame: x is the horizontal projection of the body forward
/// axis, z is world up. `None` when the forward axis is within 1e-6 of
/// vertical.
pub fn try_yaw_aligned_frame(r: &Mat3) -> Option<Mat3> {
    let fwd = r.column(0);
    let h = Vec3::new(fwd[0], fwd[1], 0.0);
    let n = h.norm();
    if n < VERTICAL_TOL {
        return None;
    }
    let x = h / n;
    let z = Vec3::z();
    let y = z.cross(&x);
    Some(Mat3::from_columns(&[x, y, z]))
}

/// [`try_yaw_aligned_frame`] falling back to `previous` in the vertical case.
pub fn yaw_aligned_frame(r: &Mat3, previous: &Mat3) -> Mat3 {
    try_yaw_aligned_frame(r).unwrap_or(*previous)
}

/// Yaw angle of a heading-only frame.
pub fn yaw_of(r_yaw: &Mat3) -> f64 {
    r_yaw[(1, 0)].atan2(r_yaw[(0, 0)])
}

/// Kinematic attitude: body z along the thrust direction `a + g·ẑ`,
/// heading taken from `r_yaw`.
pub fn attitude_from_accel(r_yaw: &Mat3, a: Vec3, gravity: f64) -> Mat3 {
    let thrust = a + Vec3::new(0.0, 0.0, gravity);
    let tn = thrust.norm();
    if tn < 1e-9 {
        return *r_yaw;
    }
    let z = thrust / tn;
    let fwd = r_yaw.column(0).into_owned();
    // Forward axis stays in the vertical plane of the heading, orthogonal to z.
    let x_raw = fwd * z[2] - Vec3::z() * fwd.dot(&z);
    let xn = x_raw.norm();
    if xn < 1e-9 {
        return *r_yaw;
    }
    let x = x_raw / xn;
    let y = z.cross(&x);
    Mat3::from_columns(&[x, y, z])
}

/// Goal-directed velocity in the world frame: direction `goal − p`,
/// magnitude `min(v_max, k_p·|goal − p|)`.
pub fn goal_velocity_world(p: Vec3, goal: Vec3, v_max: f64, k_p: f64) -> Vec3 {
    let d = goal - p;
    let n = d.norm();
    if n == 0.0 {
        return Vec3::zeros();
    }
    let s = if k_p * n <= v_max { k_p } else { v_max / n };
    d * s
}

/// [`goal_velocity_world`] expressed in the yaw-aligned frame.
pub fn goal_velocity_command(p: Vec3, goal: Vec3, v_max: f64, k_p: f64, r_yaw: &Mat3) -> Vec3 {
    r_yaw.transpose() * goal_velocity_world(p, goal, v_max, k_p)
}

/// Stores a 3×3 matrix row-major, the layout used by the tape's row rotations.
pub fn to_row_major(m: &Mat3) -> [f64; 9] {
    [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(2, 0)], m[(2, 1)], m[(2, 2)]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &Mat3, b: &Mat3, tol: f64) -> bool {
        (a - b).abs().max() < tol
    }

    #[test]
    fn identity_stays_identity() {
        assert!(close(&try_yaw_aligned_frame(&Mat3::identity()).unwrap(), &Mat3::identity(), 1e-15));
    }

    #[test]
    fn pitch_is_removed() {
        let r = pitch_matrix(30f64.to_radians());
        assert!(close(&try_yaw_aligned_frame(&r).unwrap(), &Mat3::identity(), 1e-15));
    }

    #[test]
    fn yaw_then_pitch_keeps_yaw() {
        // Hand projection: forward axis of yaw(ψ)·pitch(θ) is
        // (cosθ cosψ, cosθ sinψ, −sinθ); its horizontal part normalizes to
        // (cosψ, sinψ, 0), the first column of yaw(ψ).
        let (psi, theta) = (std::f64::consts::FRAC_PI_4, 0.2);
        let r = yaw_matrix(psi) * pitch_matrix(theta);
        let ry = try_yaw_aligned_frame(&r).unwrap();
        assert!(close(&ry, &yaw_matrix(psi), 1e-12));
        assert!(close(&(ry.transpose() * ry), &Mat3::identity(), 1e-12));
        assert!((ry.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vertical_forward_falls_back() {
        let r = pitch_matrix(std::f64::consts::FRAC_PI_2);
        assert!(try_yaw_aligned_frame(&r).is_none());
        let prev = yaw_matrix(1.0);
        assert_eq!(yaw_aligned_frame(&r, &prev), prev);
    }

    #[test]
    fn goal_command_examples() {
        let p = Vec3::new(1.0, 2.0, 1.5);
        assert_eq!(goal_velocity_world(p, p, 1.5, 1.0), Vec3::zeros());
        let far = goal_velocity_world(Vec3::zeros(), Vec3::new(100.0, 0.0, 0.0), 1.5, 1.0);
        assert!((far.norm() - 1.5).abs() < 1e-15);
        let near = goal_velocity_world(Vec3::zeros(), Vec3::new(0.5, 0.0, 0.0), 3.0, 1.0);
        assert!((near.norm() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn command_rotates_into_yaw_frame() {
        let ry = yaw_matrix(std::f64::consts::FRAC_PI_2);
        let c = goal_velocity_command(Vec3::zeros(), Vec3::new(0.0, 10.0, 0.0), 1.0, 1.0, &ry);
        assert!((c - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn hover_attitude_is_level() {
        let ry = yaw_matrix(0.7);
        let r = attitude_from_accel(&ry, Vec3::zeros(), 9.81);
        assert!(close(&r, &ry, 1e-12));
        let tilted = attitude_from_accel(&ry, Vec3::new(3.0, 0.0, 0.0), 9.81);
        assert!(close(&(tilted.transpose() * tilted), &Mat3::identity(), 1e-12));
        assert!(close(&try_yaw_aligned_frame(&tilted).unwrap(), &ry, 1e-12));
    }
}
