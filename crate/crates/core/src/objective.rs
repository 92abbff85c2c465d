//! Per-step loss terms, their weighted total and the running-average
//! velocity window.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdError, Tape, Var};
use crate::sim::Vec3;

/// Samples in the running-average velocity window.
pub const VELOCITY_WINDOW: usize = 30;
/// Default sharpness of the collision penalty, 1/m.
pub const DEFAULT_KAPPA: f64 = 4.0;

#[derive(Debug, thiserror::Error)]
pub enum ObjectiveError {
    #[error("non-finite loss term {term} at step {step}")]
    NonFinite { term: &'static str, step: usize },
    #[error(transparent)]
    Tape(#[from] AdError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub velocity: f64,
    pub vel_pred: f64,
    pub collision: f64,
    pub obstacle: f64,
    pub acc: f64,
    pub jerk: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { velocity: 1.0, vel_pred: 2.0, collision: 5.0, obstacle: 2.0, acc: 0.01, jerk: 0.001 }
    }
}

/// Loss weights plus the collision sharpness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub weights: LossWeights,
    /// Sharpness of the collision softplus, 1/m.
    pub kappa: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { weights: LossWeights::default(), kappa: DEFAULT_KAPPA }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, w) in LossTerms::NAMES.iter().zip(self.weights.as_array()) {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(format!("loss weight {} must be finite and non-negative, got {}", name, w));
            }
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(format!("kappa must be positive, got {}", self.kappa));
        }
        Ok(())
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 6] {
        [self.velocity, self.vel_pred, self.collision, self.obstacle, self.acc, self.jerk]
    }
}

/// Values of the six terms, in [`LossTerms::NAMES`] order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub velocity: f64,
    pub vel_pred: f64,
    pub collision: f64,
    pub obstacle: f64,
    pub acc: f64,
    pub jerk: f64,
}

impl LossTerms {
    pub const NAMES: [&'static str; 6] = ["velocity", "vel_pred", "collision", "obstacle", "acc", "jerk"];

    pub fn as_array(&self) -> [f64; 6] {
        [self.velocity, self.vel_pred, self.collision, self.obstacle, self.acc, self.jerk]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self { velocity: a[0], vel_pred: a[1], collision: a[2], obstacle: a[3], acc: a[4], jerk: a[5] }
    }
}

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn loss_velocity(v_bar: Vec3, v_star: Vec3) -> f64 {
    smooth_l1((v_bar - v_star).norm())
}

pub fn loss_vel_pred(v_hat: Vec3, v_true: Vec3) -> f64 {
    (v_hat - v_true).norm_squared() / 3.0
}

pub fn loss_collision(d: f64, v_app: f64, kappa: f64) -> f64 {
    softplus(-kappa * d) * v_app
}

pub fn loss_obstacle(d: f64, v_app: f64) -> f64 {
    v_app * (1.0 - d).max(0.0).powi(2)
}

pub fn loss_acc(a: Vec3) -> f64 {
    a.norm_squared()
}

pub fn loss_jerk(a: Vec3, a_prev: Vec3, dt: f64) -> f64 {
    ((a - a_prev) / dt).norm_squared()
}

/// Rate at which `|p_b − p_a|` shrinks, floored at zero. Coincident
/// positions use `fallback` as the separation direction.
pub fn approach_speed(p_a: Vec3, v_a: Vec3, p_b: Vec3, v_b: Vec3, fallback: Vec3) -> f64 {
    let d = p_b - p_a;
    let n = d.norm();
    let u = if n > 0.0 { d / n } else { fallback.try_normalize(0.0).unwrap_or_else(Vec3::x) };
    (-(v_b - v_a).dot(&u)).max(0.0)
}

/// Weighted sum of the six terms; any non-finite term is an error naming
/// the term and step.
pub fn total_step_loss(terms: &LossTerms, weights: &LossWeights, step: usize) -> Result<f64, ObjectiveError> {
    let t = terms.as_array();
    if let Some(i) = t.iter().position(|v| !v.is_finite()) {
        return Err(ObjectiveError::NonFinite { term: LossTerms::NAMES[i], step });
    }
    Ok(t.iter().zip(weights.as_array()).map(|(l, w)| l * w).sum())
}

/// Mean of the most recent ≤ 30 velocity samples of one agent.
#[derive(Debug, Clone, Default)]
pub struct VelocityWindow {
    buf: VecDeque<Vec3>,
}

impl VelocityWindow {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, v: Vec3) {
        if self.buf.len() == VELOCITY_WINDOW {
            self.buf.pop_front();
        }
        self.buf.push_back(v);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn mean(&self) -> Vec3 {
        if self.buf.is_empty() {
            return Vec3::zeros();
        }
        self.buf.iter().sum::<Vec3>() / self.buf.len() as f64
    }

    pub fn reset(&mut self) {
        self.buf.clear();
    }
}

/// Window of batched `[N, 3]` velocity nodes with a differentiable running
/// mean.
#[derive(Debug, Clone, Default)]
pub struct TapeVelocityWindow {
    buf: VecDeque<Var>,
    sum: Option<Var>,
}

impl TapeVelocityWindow {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `v` and returns the mean over the window.
    pub fn push(&mut self, tape: &mut Tape, v: Var) -> Result<Var, AdError> {
        let mut sum = match self.sum {
            Some(s) => tape.add(s, v)?,
            None => v,
        };
        self.buf.push_back(v);
        if self.buf.len() > VELOCITY_WINDOW {
            let old = self.buf.pop_front().expect("non-empty");
            sum = tape.sub(sum, old)?;
        }
        self.sum = Some(sum);
        Ok(tape.scale(sum, 1.0 / self.buf.len() as f64))
    }
}

/// Differentiable versions over a batch of agents; each returns an `[N]`
/// vector of per-agent losses.
pub mod tape_losses {
    use super::*;

    pub fn velocity(tape: &mut Tape, v_bar: Var, v_star: Var) -> Result<Var, AdError> {
        let d = tape.sub(v_bar, v_star)?;
        let n = tape.row_norm(d)?;
        Ok(tape.smooth_l1(n))
    }

    pub fn vel_pred(tape: &mut Tape, v_hat: Var, v_true: Var) -> Result<Var, AdError> {
        let d = tape.sub(v_hat, v_true)?;
        let sq = tape.square(d)?;
        let s = tape.row_sum(sq)?;
        Ok(tape.scale(s, 1.0 / 3.0))
    }

    pub fn collision(tape: &mut Tape, d: Var, v_app: Var, kappa: f64) -> Result<Var, AdError> {
        let x = tape.scale(d, -kappa);
        let sp = tape.softplus(x);
        tape.mul(sp, v_app)
    }

    pub fn obstacle(tape: &mut Tape, d: Var, v_app: Var) -> Result<Var, AdError> {
        let nd = tape.neg(d);
        let x = tape.add_scalar(nd, 1.0);
        let r = tape.relu(x);
        let sq = tape.square(r)?;
        tape.mul(sq, v_app)
    }

    pub fn acc(tape: &mut Tape, a: Var) -> Result<Var, AdError> {
        let sq = tape.square(a)?;
        tape.row_sum(sq)
    }

    pub fn jerk(tape: &mut Tape, a: Var, a_prev: Var, dt: f64) -> Result<Var, AdError> {
        let d = tape.sub(a, a_prev)?;
        let j = tape.scale(d, 1.0 / dt);
        acc(tape, j)
    }
}

/// Finite-difference checks of every tape loss term at seeded random
/// points away from the hinge kinks, each summed over a batch of agents.
pub fn loss_gradcheck_suite(seed: u64) -> Result<Vec<(&'static str, crate::autodiff::GradCheckReport)>, AdError> {
    use crate::autodiff::{grad_check, Tensor, SUITE_EPS};
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = 5;
    let mut u = |lo: f64, hi: f64, len: usize| -> Vec<f64> { (0..len).map(|_| rng.gen_range(lo..hi)).collect() };
    let rows = |d: Vec<f64>| Tensor::new(vec![n, 3], d).expect("n×3");
    let col = |d: Vec<f64>| Tensor::vector(d);
    let (a, b) = (rows(u(-2.0, 2.0, 3 * n)), rows(u(-2.0, 2.0, 3 * n)));
    let (c, e) = (rows(u(-2.0, 2.0, 3 * n)), rows(u(-2.0, 2.0, 3 * n)));
    let (dc, va) = (col(u(-0.5, 1.5, n)), col(u(0.1, 2.0, n)));
    let (dob, vo) = (col(u(-0.5, 0.9, n)), col(u(0.1, 2.0, n)));
    let (w1, w2) = (rows(u(-1.0, 1.0, 3 * n)), rows(u(-1.0, 1.0, 3 * n)));
    let sum = |t: &mut Tape, x: Var| -> Result<Var, AdError> { Ok(t.sum(x)) };
    let mut out = Vec::new();
    out.push(("velocity", grad_check(|t, v| { let l = tape_losses::velocity(t, v[0], v[1])?; sum(t, l) }, &[a.clone(), b.clone()], SUITE_EPS)?));
    out.push((
        "velocity_window",
        grad_check(
            |t, v| {
                let mut w = TapeVelocityWindow::new();
                w.push(t, v[0])?;
                w.push(t, v[1])?;
                let m = w.push(t, v[2])?;
                let l = tape_losses::velocity(t, m, v[3])?;
                sum(t, l)
            },
            &[w1, w2, c.clone(), e.clone()],
            SUITE_EPS,
        )?,
    ));
    out.push(("vel_pred", grad_check(|t, v| { let l = tape_losses::vel_pred(t, v[0], v[1])?; sum(t, l) }, &[a.clone(), c.clone()], SUITE_EPS)?));
    out.push(("collision", grad_check(|t, v| { let l = tape_losses::collision(t, v[0], v[1], DEFAULT_KAPPA)?; sum(t, l) }, &[dc, va], SUITE_EPS)?));
    out.push(("obstacle", grad_check(|t, v| { let l = tape_losses::obstacle(t, v[0], v[1])?; sum(t, l) }, &[dob, vo], SUITE_EPS)?));
    out.push(("acc", grad_check(|t, v| { let l = tape_losses::acc(t, v[0])?; sum(t, l) }, &[b.clone()], SUITE_EPS)?));
    out.push(("jerk", grad_check(|t, v| { let l = tape_losses::jerk(t, v[0], v[1], 0.1)?; sum(t, l) }, &[b, e], SUITE_EPS)?));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tensor};
    use proptest::prelude::*;

    #[test]
    fn loss_suite_passes() {
        for seed in [0, 1] {
            for (name, r) in loss_gradcheck_suite(seed).unwrap() {
                assert!(r.max_rel_error < 1e-6, "{} seed {}: {}", name, seed, r.max_rel_error);
            }
        }
    }

    #[test]
    fn velocity_examples() {
        let v = Vec3::new(0.3, -1.0, 2.0);
        assert_eq!(loss_velocity(v, v), 0.0);
        assert_eq!(loss_velocity(Vec3::new(0.5, 0.0, 0.0), Vec3::zeros()), 0.125);
        assert_eq!(loss_velocity(Vec3::new(0.0, 2.0, 0.0), Vec3::zeros()), 1.5);
    }

    #[test]
    fn vel_pred_examples() {
        assert_eq!(loss_vel_pred(Vec3::x(), Vec3::x()), 0.0);
        assert!((loss_vel_pred(Vec3::x(), Vec3::zeros()) - 1.0 / 3.0).abs() < 1e-16);
        let e = Vec3::new(0.2, -0.4, 0.1);
        assert!((loss_vel_pred(2.0 * e, Vec3::zeros()) - 4.0 * loss_vel_pred(e, Vec3::zeros())).abs() < 1e-15);
    }

    #[test]
    fn collision_examples() {
        assert!(loss_collision(10.0, 1.0, 4.0) < 1e-15);
        assert_eq!(loss_collision(0.0, 1.0, 4.0), std::f64::consts::LN_2);
        assert_eq!(loss_collision(-3.0, 0.0, 4.0), 0.0);
    }

    #[test]
    fn obstacle_examples() {
        assert_eq!(loss_obstacle(2.0, 3.0), 0.0);
        assert_eq!(loss_obstacle(0.5, 2.0), 0.5);
        assert_eq!(loss_obstacle(0.0, 1.0), 1.0);
    }

    #[test]
    fn acc_jerk_examples() {
        assert_eq!(loss_acc(Vec3::zeros()), 0.0);
        assert_eq!(loss_acc(Vec3::new(3.0, 4.0, 0.0)), 25.0);
        let a = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(loss_jerk(a, a, 0.1), 0.0);
    }

    #[test]
    fn total_examples() {
        let w = LossWeights::default();
        assert_eq!(total_step_loss(&LossTerms::default(), &w, 0).unwrap(), 0.0);
        let only_col = LossTerms { collision: 1.0, ..Default::default() };
        assert_eq!(total_step_loss(&only_col, &w, 0).unwrap(), 5.0);
        let zero = LossWeights { velocity: 0.0, vel_pred: 0.0, collision: 0.0, obstacle: 0.0, acc: 0.0, jerk: 0.0 };
        let t = LossTerms::from_array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(total_step_loss(&t, &zero, 0).unwrap(), 0.0);
        let bad = LossTerms { obstacle: f64::NAN, ..Default::default() };
        match total_step_loss(&bad, &w, 7) {
            Err(ObjectiveError::NonFinite { term: "obstacle", step: 7 }) => {}
            other => panic!("{:?}", other),
        }
    }

    #[test]
    fn approach_examples() {
        let f = Vec3::x();
        let s = approach_speed(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(5.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0), f);
        assert_eq!(s, 2.0);
        let r = approach_speed(Vec3::zeros(), Vec3::new(-1.0, 0.0, 0.0), Vec3::new(5.0, 0.0, 0.0), Vec3::zeros(), f);
        assert_eq!(r, 0.0);
        // Perpendicular passing at the point of closest approach.
        let t = approach_speed(Vec3::zeros(), Vec3::zeros(), Vec3::new(0.0, 2.0, 0.0), Vec3::new(1.0, 0.0, 0.0), f);
        assert_eq!(t, 0.0);
        let c = approach_speed(Vec3::zeros(), Vec3::x(), Vec3::zeros(), Vec3::zeros(), f);
        assert_eq!(c, 1.0);
    }

    #[test]
    fn window_matches_brute_force() {
        let mut w = VelocityWindow::new();
        let hist: Vec<Vec3> = (0..75).map(|i| Vec3::new((i as f64).sin(), i as f64 * 0.1, -(i as f64))).collect();
        for (t, v) in hist.iter().enumerate() {
            w.push(*v);
            let lo = (t + 1).saturating_sub(VELOCITY_WINDOW);
            let brute: Vec3 = hist[lo..=t].iter().sum::<Vec3>() / (t + 1 - lo) as f64;
            assert!((w.mean() - brute).norm() < 1e-12);
        }
        w.reset();
        assert!(w.is_empty());
    }

    #[test]
    fn tape_window_matches_plain() {
        let mut tape = Tape::new();
        let mut tw = TapeVelocityWindow::new();
        let mut pw = VelocityWindow::new();
        for i in 0..40 {
            let v = Vec3::new(i as f64, (i * i) as f64 * 0.01, 1.0);
            let var = tape.constant(Tensor::new(vec![1, 3], v.as_slice().to_vec()).unwrap());
            let m = tw.push(&mut tape, var).unwrap();
            pw.push(v);
            let got = tape.value(m).data();
            let want = pw.mean();
            for k in 0..3 {
                assert!((got[k] - want[k]).abs() < 1e-9);
            }
        }
    }

    fn rows(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len() / 3, 3], v.to_vec()).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn tape_terms_pass_gradcheck(
            a in proptest::collection::vec(-2.0..2.0f64, 6),
            b in proptest::collection::vec(-2.0..2.0f64, 6),
            d in proptest::collection::vec(-0.3..1.8f64, 2),
            va in proptest::collection::vec(0.0..3.0f64, 2),
        ) {
            let tol = 1e-6;
            let pa = [rows(&a), rows(&b)];
            let r = grad_check(|t, v| { let l = tape_losses::velocity(t, v[0], v[1])?; Ok(t.sum(l)) }, &pa, 1e-6).unwrap();
            prop_assert!(r.max_rel_error < tol, "velocity {}", r.max_rel_error);
            let r = grad_check(|t, v| { let l = tape_losses::vel_pred(t, v[0], v[1])?; Ok(t.sum(l)) }, &pa, 1e-6).unwrap();
            prop_assert!(r.max_rel_error < tol, "vel_pred {}", r.max_rel_error);
            let r = grad_check(|t, v| { let l = tape_losses::acc(t, v[0])?; Ok(t.sum(l)) }, &pa[..1], 1e-6).unwrap();
            prop_assert!(r.max_rel_error < tol, "acc {}", r.max_rel_error);
            let r = grad_check(|t, v| { let l = tape_losses::jerk(t, v[0], v[1], 0.1)?; Ok(t.sum(l)) }, &pa, 1e-6).unwrap();
            prop_assert!(r.max_rel_error < tol, "jerk {}", r.max_rel_error);
            let pd = [Tensor::vector(d.clone()), Tensor::vector(va.clone())];
            let r = grad_check(|t, v| { let l = tape_losses::collision(t, v[0], v[1], DEFAULT_KAPPA)?; Ok(t.sum(l)) }, &pd, 1e-6).unwrap();
            prop_assert!(r.max_rel_error < tol, "collision {}", r.max_rel_error);
            // Keep clear of the kink at d = 1 where the one-sided slopes differ.
            prop_assume!(d.iter().all(|x| (x - 1.0).abs() > 1e-3));
            let r = grad_check(|t, v| { let l = tape_losses::obstacle(t, v[0], v[1])?; Ok(t.sum(l)) }, &pd, 1e-6).unwrap();
            prop_assert!(r.max_rel_error < tol, "obstacle {}", r.max_rel_error);
        }

        #[test]
        fn terms_non_negative(x in -5.0..5.0f64, y in -5.0..5.0f64, vapp in 0.0..5.0f64) {
            let a = Vec3::new(x, y, x * y);
            prop_assert!(loss_velocity(a, Vec3::new(y, 0.0, x)) >= 0.0);
            prop_assert!(loss_vel_pred(a, Vec3::zeros()) >= 0.0);
            prop_assert!(loss_collision(x, vapp, DEFAULT_KAPPA) >= 0.0);
            prop_assert!(loss_obstacle(x, vapp) >= 0.0);
            prop_assert!(loss_acc(a) >= 0.0);
            prop_assert!(loss_jerk(a, -a, 0.1) >= 0.0);
        }
    }

    #[test]
    fn collision_gradcheck_near_contact() {
        for d0 in [-1e-4, 0.0, 1e-4] {
            let r = grad_check(
                |t, v| {
                    let l = tape_losses::collision(t, v[0], v[1], DEFAULT_KAPPA)?;
                    Ok(t.sum(l))
                },
                &[Tensor::vector(vec![d0]), Tensor::vector(vec![1.3])],
                1e-6,
            )
            .unwrap();
            assert!(r.max_rel_error < 1e-6);
        }
    }

    #[test]
    fn obstacle_flat_beyond_one() {
        let r = grad_check(
            |t, v| {
                let l = tape_losses::obstacle(t, v[0], v[1])?;
                Ok(t.sum(l))
            },
            &[Tensor::vector(vec![1.2, 3.0]), Tensor::vector(vec![2.0, 0.5])],
            1e-6,
        )
        .unwrap();
        assert!(r.analytic.iter().all(|g| g.data().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn default_weights_exact() {
        assert_eq!(LossWeights::default().as_array(), [1.0, 2.0, 5.0, 2.0, 0.01, 0.001]);
    }
}
